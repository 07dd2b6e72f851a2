"""How fast ``p/q_k`` becomes an e-statistic as the information gain ``δ`` shrinks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .divergence import gain_to_hull, kl
from .measures import (
    GridMeasure,
    ParametricFamily,
    fmt,
    geometric,
    mix,
    mix_log,
    same_grid,
)
from .projection import greedy_project

MOMENT_CEILING = 1e6
BLOWUP_LEVEL = 1e6
BETA_CANDIDATES = (0.25, 0.5, 0.75, 1.0)

HOLDS = "holds"
VIOLATED = "violated"
INAPPLICABLE = "inapplicable"


def _write_rows(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def fit_slope(x, y) -> float:
    """Least-squares slope of ``ln y`` against ``ln x`` over points where both are positive."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


# ---------------------------------------------------------------------------
# bound constants


def _log_ratio_on_support(P: GridMeasure, Q: GridMeasure, Qp: GridMeasure) -> np.ndarray:
    live = P.support
    lq, lqp = Q.log_density[live], Qp.log_density[live]
    with np.errstate(invalid="ignore"):
        r = lqp - lq
    r[(lq == -np.inf) & (lqp > -np.inf)] = np.inf
    r[lqp == -np.inf] = -np.inf
    return r


def _log_p_weights(P: GridMeasure) -> np.ndarray:
    live = P.support
    return P.log_density[live] + P.grid.log_weights[live]


def ratio_integral(P: GridMeasure, Q: GridMeasure, Qp: GridMeasure) -> float:
    """``∫ (q'/q) dP``, summed in log space."""
    same_grid(P, Q, Qp)
    r = _log_ratio_on_support(P, Q, Qp)
    if np.any(r == np.inf):
        return math.inf
    return float(np.exp(special.logsumexp(r + _log_p_weights(P))))


def log_moment(P: GridMeasure, Q: GridMeasure, Qp: GridMeasure, beta: float) -> float:
    """``ln ∫ (q'/q)^{1+β} dP``."""
    same_grid(P, Q, Qp)
    r = _log_ratio_on_support(P, Q, Qp)
    if np.any(r == np.inf):
        return math.inf
    return float(special.logsumexp((1.0 + beta) * r + _log_p_weights(P)))


def moment_norm(P, Q, Qp, beta) -> float:
    """``‖q'/q‖_{1+β}`` in ``L^{1+β}(P)``."""
    lm = log_moment(P, Q, Qp, beta)
    return math.exp(lm / (1.0 + beta)) if lm < 700 * (1 + beta) else math.inf


def _h(beta: float) -> float:
    return (4.0 / (1.0 + beta)) ** (2.0 / (beta - 1.0)) * 2.0 * (beta - 1.0) / (1.0 + beta)


def slack_bound(delta: float, c_beta: float, beta: float, K: float = 1.0) -> float:
    """Upper bound on ``∫(q'/q)dP - 1`` given ``δ`` and ``c_β = ∫(q'/q)^{1+β} dP``.

    ``β = 1``: ``max{√(8 c₁ δ), 4δ}``.
    ``β < 1``: ``max{√(8 a^{1-β} c_β δ), 4δ} + a^{-β} c_β`` at the minimizing
    ``a* = (β √c_β / ((1-β) √(2δ)))^{2/(1+β)}``.
    ``β > 1``: ``2 c* δ^{β/(1+β)} + 2δ`` with
    ``c* = c_β^{1/(1+β)} (8 max(K,1) / h(β))^{(β-1)/(2(1+β))}``.
    """
    if delta < 0 or beta <= 0:
        raise ValueError("need delta >= 0 and beta > 0")
    if not math.isfinite(c_beta):
        return math.inf
    if delta == 0:
        return 0.0
    if beta == 1.0:
        return max(math.sqrt(8.0 * c_beta * delta), 4.0 * delta)
    if beta < 1.0:
        a = (beta * math.sqrt(c_beta) / ((1.0 - beta) * math.sqrt(2.0 * delta))) ** (2.0 / (1.0 + beta))
        return (max(math.sqrt(8.0 * a ** (1.0 - beta) * c_beta * delta), 4.0 * delta)
                + a ** (-beta) * c_beta)
    kp = max(K, 1.0)
    c_star = c_beta ** (1.0 / (1.0 + beta)) * (8.0 * kp / _h(beta)) ** ((beta - 1.0) / (2.0 * (1.0 + beta)))
    return 2.0 * c_star * delta ** (beta / (1.0 + beta)) + 2.0 * delta


def choose_beta(P, Q, Qp, candidates=BETA_CANDIDATES, ceiling=MOMENT_CEILING):
    """Largest candidate ``β`` whose grid moment ``‖q'/q‖_{1+β}`` stays below ``ceiling``."""
    ok = [b for b in candidates if moment_norm(P, Q, Qp, b) < ceiling]
    return max(ok) if ok else None


@dataclass
class BoundCheck:
    beta: float
    delta: float
    slack: float
    bound: float
    c_beta: float
    K: float | None
    status: str
    reason: str = ""

    @property
    def holds(self) -> bool:
        return self.status == HOLDS


def theorem6_bound_check(P: GridMeasure, Q: GridMeasure, Qp: GridMeasure,
                         family: ParametricFamily | None = None, beta: float = 1.0,
                         K: float | None = None, *, delta: float | None = None,
                         qprime_gain: float | None = None,
                         gain_opts: dict | None = None) -> BoundCheck:
    """Compare ``∫(q'/q)dP - 1`` with the explicit bound in terms of ``δ = D(P‖Q⇝C)``.

    ``δ`` defaults to the certified upper bound of the hull gain (the bound
    is increasing in ``δ``, so this is conservative). For ``β > 1`` the
    condition ``D(P‖Q'⇝C) <= Kδ`` is checked first; with ``K=None`` the
    smallest admissible ``K`` is used. A moment of at least
    ``MOMENT_CEILING`` on the grid is treated as infinite and reported
    inapplicable.
    """
    same_grid(P, Q, Qp)
    gain_opts = gain_opts or {}
    if delta is None:
        if family is None:
            raise ValueError("need a family or an explicit delta")
        rep = gain_to_hull(P, Q, family, **gain_opts)
        delta = rep.certified_upper if rep.certified_upper is not None else float(rep.value)
    delta = max(float(delta), 0.0)
    slack = ratio_integral(P, Q, Qp) - 1.0
    norm = moment_norm(P, Q, Qp, beta)
    if not norm < MOMENT_CEILING:
        return BoundCheck(beta, delta, slack, math.inf, math.inf, K, INAPPLICABLE,
                          f"moment of order {1 + beta:g} is infinite on the grid")
    c_beta = norm ** (1.0 + beta)
    if beta > 1:
        if qprime_gain is None:
            if family is None:
                raise ValueError("need a family or qprime_gain when beta > 1")
            rep = gain_to_hull(P, Qp, family, **gain_opts)
            qprime_gain = rep.certified_upper if rep.certified_upper is not None else float(rep.value)
        qprime_gain = max(float(qprime_gain), 0.0)
        if K is None:
            K = qprime_gain / delta if delta > 0 else (0.0 if qprime_gain == 0 else math.inf)
        if not qprime_gain <= K * delta:
            return BoundCheck(beta, delta, slack, math.inf, c_beta, K, INAPPLICABLE,
                              f"D(P‖Q'⇝C) = {qprime_gain:.6g} exceeds K·δ = {K * delta:.6g}")
        if not math.isfinite(K):
            return BoundCheck(beta, delta, slack, math.inf, c_beta, K, INAPPLICABLE,
                              "δ = 0 while Q' has positive gain")
    bound = slack_bound(delta, c_beta, beta, 1.0 if K is None else K)
    status = HOLDS if slack <= bound + 1e-12 else VIOLATED
    return BoundCheck(beta, delta, slack, bound, c_beta, K, status)


# ---------------------------------------------------------------------------
# Bernoulli: the square-root rate is attained


def bernoulli_closed_form(eps: float, qprime: float = 0.25):
    """``(δ, slack, c₁)`` for ``P = Ber(1/2)``, ``Q = Ber(1/2+ε)``, ``Q' = Ber(qprime)``."""
    q1, q0 = 0.5 + eps, 0.5 - eps
    delta = -0.5 * math.log1p(-4.0 * eps * eps)
    slack = 0.5 * (qprime / q1 + (1 - qprime) / q0) - 1.0
    c1 = 0.5 * ((qprime / q1) ** 2 + ((1 - qprime) / q0) ** 2)
    return delta, slack, c1


@dataclass
class RateExperiment:
    epsilons: np.ndarray
    deltas: np.ndarray
    slacks: np.ndarray
    fitted_slope: float
    c_beta: np.ndarray
    bounds: np.ndarray = field(default_factory=lambda: np.array([]))
    beta: float = 1.0

    @property
    def statuses(self) -> list:
        return [HOLDS if s <= b + 1e-12 else VIOLATED for s, b in zip(self.slacks, self.bounds)]

    @property
    def violations(self) -> int:
        return self.statuses.count(VIOLATED)

    def to_csv(self) -> str:
        rows = [(float(e), float(d), float(s), float(b), st)
                for e, d, s, b, st in zip(self.epsilons, self.deltas, self.slacks, self.bounds,
                                          self.statuses)]
        return _write_rows(["epsilon", "delta", "slack", "bound", "status"], rows)

    def summary(self) -> str:
        return f"fitted_slope = {fmt(self.fitted_slope)}"


def bernoulli_rate(eps_list, family_range=(0.25, 0.75), qprime: float = 0.25) -> RateExperiment:
    """Slack and gain along ``Q = Ber(1/2+ε)`` inside the Bernoulli family on ``family_range``.

    ``P = Ber(1/2)`` belongs to the family, so ``δ = D(P‖Q)`` exactly. The
    bound column is the ``β = 1`` bound with ``c₁ = ∫(q'/q)² dP``.
    """
    eps = np.asarray(list(eps_list), dtype=float)
    lo, hi = family_range
    if not lo <= 0.5 <= hi or not lo <= qprime <= hi:
        raise ValueError("P and Q' must lie in the family range")
    if np.any(eps < 0) or np.any(0.5 + eps > hi) or np.any(eps >= 0.25):
        raise ValueError("epsilons must lie in [0, 1/4) with 1/2+ε inside the family range")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be strictly decreasing")
    rows = [bernoulli_closed_form(float(e), qprime) for e in eps]
    deltas = np.array([r[0] for r in rows])
    slacks = np.array([r[1] for r in rows])
    c1 = np.array([r[2] for r in rows])
    bounds = np.array([slack_bound(d, c, 1.0) for d, c in zip(deltas, c1)])
    return RateExperiment(eps, deltas, slacks, fit_slope(deltas, slacks), np.sqrt(c1), bounds)


# ---------------------------------------------------------------------------
# geometric family: gain → 0 while the likelihood-ratio integral is infinite


def geometric_delta(theta: float) -> float:
    """``D(Q_{1/2}‖Q_θ) = ln(½/(1-θ)) + ln(½/θ)``."""
    return math.log(0.5 / (1.0 - theta)) + math.log(0.5 / theta)


def geometric_ratio_integral(theta: float, theta_prime: float) -> float:
    """``∫ q_θ'/q_θ dQ_{1/2}`` in closed form (∞ once ``θ' >= 2θ``)."""
    if theta_prime >= 2.0 * theta:
        return math.inf
    return 1.0 / (1.0 - theta_prime / (2.0 * theta)) * 0.5 * (1.0 - theta_prime) / (1.0 - theta)


def geometric_log_partial_sums(theta: float, theta_prime: float, terms: int) -> np.ndarray:
    """Logs of the partial sums ``Σ_{n<m} (θ'/(2θ))^n · ½(1-θ')/(1-θ)`` for ``m = 1..terms``."""
    n = np.arange(terms, dtype=float)
    log_terms = (n * (math.log(theta_prime) - math.log(2.0 * theta))
                 + math.log(0.5 * (1.0 - theta_prime) / (1.0 - theta)))
    return np.logaddexp.accumulate(log_terms)


def geometric_truncation_tail(theta: float, theta_prime: float, terms: int) -> float:
    """Exact remainder after ``terms`` terms of the convergent series."""
    r = theta_prime / (2.0 * theta)
    if r >= 1:
        return math.inf
    return 0.5 * (1.0 - theta_prime) / (1.0 - theta) * r ** terms / (1.0 - r)


@dataclass
class BlowupRow:
    theta: float
    delta: float
    delta_partial: float
    sup_status: str
    first_infinite: float
    detected_at: int | None
    sup_convergent: float


@dataclass
class BlowupReport:
    rows: list
    theta_prime_grid: np.ndarray

    @property
    def deltas(self) -> np.ndarray:
        return np.array([r.delta for r in self.rows])

    @property
    def all_diverged(self) -> bool:
        return all(r.sup_status == "diverged" for r in self.rows)

    def to_csv(self) -> str:
        # slack is the sup over the θ' grid of ∫q'/q dP - 1; once it is infinite no
        # finite-moment bound applies, so the bound column is infinite as well
        rows = []
        for r in self.rows:
            slack = math.inf if r.sup_status == "diverged" else r.sup_convergent - 1.0
            rows.append((r.theta, r.delta, slack, math.inf if math.isinf(slack) else "",
                         r.sup_status, r.delta_partial, r.first_infinite,
                         "" if r.detected_at is None else r.detected_at, r.sup_convergent))
        return _write_rows(["theta", "delta", "slack", "bound", "status", "delta_partial",
                            "first_infinite_theta_prime", "terms_to_blowup", "sup_convergent"],
                           rows)


def geometric_blowup(theta_seq, theta_prime_grid=None, *, support: int = 10000,
                     max_terms: int = 100000, level: float = BLOWUP_LEVEL) -> BlowupReport:
    """For ``P = Q_{1/2}`` and each ``Q_θi``: gain ``δ_i`` and ``sup_θ' ∫ q_θ'/q_θi dP``.

    ``δ_i`` is also summed on the counting grid ``{0..support}`` as an
    oracle. The supremum is diverged when some grid ``θ'`` is at least
    ``2θ_i``; the divergence is confirmed by log-domain partial sums at the
    largest grid ``θ'`` exceeding ``level`` within ``max_terms`` terms.
    """
    thetas = [float(t) for t in theta_seq]
    if any(not 1 / 3 < t < 0.5 for t in thetas) or any(b <= a for a, b in zip(thetas, thetas[1:])):
        raise ValueError("thetas must increase inside (1/3, 1/2)")
    if theta_prime_grid is None:
        theta_prime_grid = np.round(np.arange(0, 10000) * 1e-4, 4)
    tp = np.asarray(theta_prime_grid, dtype=float)
    if tp.min() < 0 or tp.max() >= 1:
        raise ValueError("theta' must lie in [0, 1)")
    P = geometric(0.5, support)
    log_level = math.log(level)
    rows = []
    for t in thetas:
        d_partial = float(kl(P, geometric(t, support)))
        inf_mask = tp >= 2 * t
        first = float(tp[inf_mask].min()) if inf_mask.any() else math.nan
        finite_vals = [geometric_ratio_integral(t, x) for x in tp[~inf_mask]]
        sup_conv = max(finite_vals) if finite_vals else math.nan
        detected = None
        top = float(tp.max())
        if top >= 2 * t:
            ps = geometric_log_partial_sums(t, top, max_terms)
            over = np.flatnonzero(ps > log_level)
            detected = int(over[0]) + 1 if over.size else None
        status = "diverged" if inf_mask.any() else "exact"
        rows.append(BlowupRow(t, geometric_delta(t), d_partial, status, first, detected, sup_conv))
    return BlowupReport(rows, tp)


def convergent_theta_prime(theta: float, terms: int = 200, tol: float = 1e-10,
                           grid=None) -> np.ndarray:
    """Grid values ``θ'`` whose series remainder after ``terms`` terms is at most ``tol``."""
    tp = np.round(np.arange(1, 10000) * 1e-4, 4) if grid is None else np.asarray(grid, float)
    return np.array([x for x in tp if geometric_truncation_tail(theta, x, terms) <= tol])


# ---------------------------------------------------------------------------
# e-power against a polytope of alternatives


@dataclass
class EPowerRow:
    label: object
    lhs: float
    d_lower: float
    log_n: float
    tol: float

    @property
    def passed(self) -> bool:
        if self.d_lower == math.inf:
            return self.lhs == math.inf
        return self.lhs >= self.d_lower - self.log_n - self.tol


@dataclass
class EPowerReport:
    rows: list
    residual_gain: float
    trace_length: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        rows = [(str(r.label), r.lhs, r.d_lower, r.log_n, r.tol, "holds" if r.passed else "violated")
                for r in self.rows]
        return _write_rows(["vertex", "lhs", "divergence_lower", "log_n", "tol", "status"], rows)


def _divergence_lower(P, family, k_max, gain_opts):
    tr = greedy_project(P, family, k_max=k_max, gain_opts=gain_opts)
    Q = mix(family, tr.final)
    d = kl(P, Q)
    if not isinstance(d, float) or d == math.inf:
        return math.inf
    g = gain_to_hull(P, Q, family, start=tr.final, **gain_opts)
    upper = g.certified_upper if g.certified_upper is not None else math.inf
    return d - max(upper, 0.0)


def epower_inequality(vertices, family: ParametricFamily, trace_kmax: int = 200, *,
                      gain_opts: dict | None = None) -> EPowerReport:
    """Check ``∫ ln(p*/q̂*) dP >= D(P‖C) - ln n`` at every vertex ``P``.

    ``P*`` is the uniform mixture of the ``n`` vertices and ``q̂*`` its
    greedy projection after ``trace_kmax`` steps. ``D(P‖C)`` is replaced by
    the lower estimate ``D(P‖Q_P) - D(P‖Q_P⇝C)`` from the vertex's own
    projection ``Q_P``, and the tolerance is the certified residual gain of
    ``q̂*``.
    """
    vertices = list(vertices)
    if not vertices:
        raise ValueError("need at least one vertex")
    same_grid(family, *vertices)
    gain_opts = gain_opts or {}
    n = len(vertices)
    grid = family.grid
    lp_star = mix_log(np.vstack([v.log_density for v in vertices]), np.full(n, 1.0 / n))
    P_star = GridMeasure(grid, lp_star, probability=True, label="uniform-vertex-mixture")
    trace = greedy_project(P_star, family, k_max=trace_kmax, gain_opts=gain_opts)
    Q_hat = mix(family, trace.final)
    residual = gain_to_hull(P_star, Q_hat, family, start=trace.final, **gain_opts)
    tol = max(residual.certified_upper if residual.certified_upper is not None else math.inf, 0.0)
    rows = []
    for i, v in enumerate(vertices):
        live = v.support
        with np.errstate(invalid="ignore"):
            f = np.where(live, lp_star - Q_hat.log_density, 0.0)
        if np.any(f[live] == np.inf):
            lhs = math.inf
        else:
            lhs = float(np.dot(f, v.point_mass))
        d_low = _divergence_lower(v, family, trace_kmax, gain_opts)
        rows.append(EPowerRow(v.label if v.label is not None else i, lhs, d_low, math.log(n), tol))
    return EPowerReport(rows, tol, len(trace))

