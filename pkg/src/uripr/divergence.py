"""Divergence-type functionals between measures on a common grid.

All logarithmic quantities are evaluated from log-densities, and integrals
follow the extended-real rules of :func:`uripr.measures.integrate`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .measures import (
    UNDEFINED,
    GridMeasure,
    MixtureWeights,
    ParametricFamily,
    ext_add,
    integrate,
    log_ratio,
    same_grid,
)

LN2 = math.log(2.0)
DIVERGENCE_LEVEL = math.log(1e12)

EXACT = "exact"
LOWER_BOUND = "lower_bound"
DIVERGED = "diverged"
UNDEFINED_STATUS = "undefined"


def _json_number(x):
    if x is None:
        return None
    if x is UNDEFINED:
        return "undefined"
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass(frozen=True)
class GainReport:
    """Value of a supremum of description gains, with how far to trust it.

    ``certified_upper`` is the value plus the Frank-Wolfe duality gap of the
    concave ascent, hence a true upper bound on the supremum over the hull.
    """

    value: object
    status: str
    attained_at: MixtureWeights | None = None
    certified_upper: float | None = None
    gap: float | None = None
    iterations: int = 0

    def to_json(self) -> str:
        rec = {
            "value": _json_number(self.value),
            "status": self.status,
            "witness_indices": None if self.attained_at is None
            else [int(i) for i in self.attained_at.indices],
            "witness_weights": None if self.attained_at is None
            else [float(w) for w in self.attained_at.weights],
            "certified_upper": _json_number(self.certified_upper),
        }
        return json.dumps(rec, sort_keys=True)


# ---------------------------------------------------------------------------
# pointwise divergences


def kl(P: GridMeasure, Q: GridMeasure):
    """Information divergence between finite measures.

    ``∫ p ln(p/q) dμ - (P(Ω) - Q(Ω))``; ``+inf`` when ``P`` is not
    absolutely continuous with respect to ``Q`` on the grid.
    """
    same_grid(P, Q)
    f = log_ratio(P.log_density, Q.log_density)
    return ext_add(integrate(f, P), Q.mass - P.mass)


def description_gain(P: GridMeasure, Q: GridMeasure, Qp: GridMeasure):
    """Gain ``∫ ln(q'/q) dP - (Q'(Ω) - Q(Ω))`` from coding with ``Qp`` instead of ``Q``."""
    same_grid(P, Q, Qp)
    f = log_ratio(Qp.log_density, Q.log_density)
    return ext_add(integrate(f, P), Q.mass - Qp.mass)


def _log_values(f, P: GridMeasure) -> np.ndarray:
    if isinstance(f, GridMeasure):
        same_grid(f, P)
        return f.log_density
    a = np.asarray(f, dtype=float)
    if a.shape != (len(P.grid),):
        raise ValueError("function values do not match the grid of P")
    if np.any(a < 0):
        raise ValueError("values must be nonnegative")
    with np.errstate(divide="ignore"):
        return np.log(a)


def _positive_on_support(lf, lg, P):
    live = P.support
    if np.any(~np.isfinite(lf[live])) or np.any(~np.isfinite(lg[live])):
        raise ValueError("m_P is defined only for functions strictly positive on the support of P")


def log_cosh(x):
    """Numerically stable ``ln cosh x``."""
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    small = x < 20.0
    out[small] = np.log1p(2.0 * np.sinh(x[small] / 2.0) ** 2)
    big = ~small
    out[big] = x[big] - LN2 + np.log1p(np.exp(-2.0 * x[big]))
    return out


def gamma_jensen(x, y):
    """Averaged Bregman divergence ``ln((x+y)/2) - ln(x)/2 - ln(y)/2`` of ``γ(u)=u-1-ln u``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("arguments must be positive")
    return log_cosh(0.5 * (np.log(x) - np.log(y)))


def mp_metric_sq(f, g, P: GridMeasure) -> float:
    lf, lg = _log_values(f, P), _log_values(g, P)
    _positive_on_support(lf, lg, P)
    d = np.where(P.support, 0.5 * (lf - lg), 0.0)
    return float(integrate(log_cosh(d), P))


def mp_metric(f, g, P: GridMeasure) -> float:
    """The metric ``m_P`` between positive functions (square root of the averaged divergence)."""
    return math.sqrt(mp_metric_sq(f, g, P))


def itakura_saito(f, g, P: GridMeasure):
    """``∫ (f/g - 1 - ln(f/g)) dP``."""
    lf, lg = _log_values(f, P), _log_values(g, P)
    _positive_on_support(lf, lg, P)
    d = np.where(P.support, lf - lg, 0.0)
    with np.errstate(over="ignore"):
        integrand = np.expm1(d) - d
    return integrate(np.maximum(integrand, 0.0), P)


def g_transform(t):
    """``g(t) = 2t + 2 ln(1 + sqrt(1 - exp(-2t)))``, the map with ``|ln x - ln y| = g(m_γ²(x, y))``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
        raise ValueError("g_transform is defined for t >= 0")
    out = 2.0 * t_arr + 2.0 * np.log1p(np.sqrt(-np.expm1(-2.0 * t_arr)))
    return float(out) if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# supremum over a convex hull


class _Ascent(NamedTuple):
    value: float
    weights: np.ndarray
    gap: float
    status: str
    iterations: int


def _objective(logw, L, p_mass, log_ref, masses, ref_mass):
    lqw = special.logsumexp(logw[:, None] + L, axis=0)
    if np.any(lqw == -np.inf):
        return -math.inf, lqw
    val = float(np.dot(p_mass, lqw - log_ref))
    if masses is not None:
        val -= float(np.dot(np.exp(logw), masses)) - ref_mass
    return val, lqw


def maximize_log_mixture(L, p_mass, log_ref, masses=None, ref_mass=0.0, *, tol=1e-7,
                         max_iter=5000, step=0.5, logw0=None) -> _Ascent:
    """Exponentiated-gradient ascent of ``w ↦ Σ_s p_s ln(q_w(s)/q(s)) - mass terms``.

    ``L`` holds member log-densities on the support of ``P`` only. The step
    starts at ``step`` each iteration and is halved until the objective does
    not decrease. Stops once the Frank-Wolfe gap ``max_θ g_θ - <w, g>`` is
    at most ``tol``.
    """
    M = L.shape[0]
    logw = np.full(M, -math.log(M)) if logw0 is None else np.asarray(logw0, float)
    logw = logw - special.logsumexp(logw)
    F, lqw = _objective(logw, L, p_mass, log_ref, masses, ref_mass)
    if F == -math.inf:
        return _Ascent(-math.inf, np.exp(logw), math.inf, EXACT, 0)
    gap = math.inf
    it = 0
    status = LOWER_BOUND
    for it in range(1, max_iter + 1):
        with np.errstate(invalid="ignore"):
            R = np.exp(L - lqw[None, :])
        R[~np.isfinite(L)] = 0.0
        g = R @ p_mass
        if masses is not None:
            g = g - masses
        w = np.exp(logw)
        gap = float(np.max(g) - np.dot(w, g))
        if F > DIVERGENCE_LEVEL:
            return _Ascent(math.inf, w, gap, DIVERGED, it)
        if gap <= tol:
            status = EXACT
            break
        eta = step
        centered = g - np.max(g)
        accepted = False
        for _ in range(60):
            cand = logw + eta * centered
            cand -= special.logsumexp(cand)
            F_new, lq_new = _objective(cand, L, p_mass, log_ref, masses, ref_mass)
            if F_new >= F - 1e-15 * (1.0 + abs(F)):
                accepted = True
                break
            eta /= 2.0
        if not accepted:
            break
        logw, F, lqw = cand, F_new, lq_new
    return _Ascent(F, np.exp(logw), gap, status, it)


def gain_to_hull(P: GridMeasure, Q: GridMeasure, family: ParametricFamily, *, tol=1e-7,
                 max_iter=5000, step=0.5, include_mass=True,
                 start: MixtureWeights | None = None, start_floor=1e-3) -> GainReport:
    """Supremum of ``D(P‖Q⇝Q')`` over finite mixtures ``Q'`` of the family members.

    The search is exact for a finitely generated hull; for a discretized
    parametric family the result is a lower bound on the continuous hull.
    ``start`` warm-starts the ascent at ``(1-start_floor)·start + start_floor·uniform``,
    which helps when ``Q`` itself is a known mixture of the members.
    """
    same_grid(P, Q, family)
    S = np.flatnonzero(P.support)
    if S.size == 0:
        return GainReport(0.0, EXACT)
    lq = Q.log_density[S]
    if np.any(lq == -np.inf):
        return GainReport(math.inf, DIVERGED)
    p_mass = P.point_mass[S]
    L = family.log_density_matrix(S)
    masses = family.masses if include_mass else None
    logw0 = None
    if start is not None:
        M = family.size
        logw0 = np.log((1.0 - start_floor) * start.dense(M) + start_floor / M)
    res = maximize_log_mixture(L, p_mass, lq, masses, Q.mass if include_mass else 0.0,
                               tol=tol, max_iter=max_iter, step=step, logw0=logw0)
    if res.status == DIVERGED or res.value == -math.inf:
        return GainReport(res.value, res.status, iterations=res.iterations)
    witness = MixtureWeights.from_dense(res.weights)
    return GainReport(res.value, res.status, witness, res.value + max(res.gap, 0.0),
                      res.gap, res.iterations)


class ThreePoint(NamedTuple):
    lhs: float
    rhs: float
    exact: bool
    gains: tuple


def three_point_bound(Q1: GridMeasure, Q2: GridMeasure, P: GridMeasure,
                      family: ParametricFamily, **opts) -> ThreePoint:
    """Both sides of ``m_P²(q1, q2) <= (gain(Q1) + gain(Q2)) / 2``.

    ``exact`` is true only when both gains were solved to optimality, in
    which case the inequality must hold.
    """
    lhs = mp_metric_sq(Q1, Q2, P)
    r1 = gain_to_hull(P, Q1, family, **opts)
    r2 = gain_to_hull(P, Q2, family, **opts)
    rhs = ext_add(r1.value, r2.value)
    rhs = rhs / 2 if rhs is not UNDEFINED else rhs
    return ThreePoint(lhs, rhs, r1.status == EXACT and r2.status == EXACT, (r1, r2))
