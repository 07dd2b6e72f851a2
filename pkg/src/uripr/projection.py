"""Greedy approximation of the universal reverse information projection.

Each step mixes the full current mixture with one family member,
``Q_k = (1 - α_k) Q_{k-1} + α_k Q_θk`` with ``α_k = 2/(k+1)``, choosing the
member by exhaustive search over the family.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .divergence import GainReport, description_gain, gain_to_hull, log_cosh
from .measures import (
    GridMeasure,
    MixtureWeights,
    ParametricFamily,
    extended_sum,
    fmt,
    mix,
    mix_log,
    same_grid,
)


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class IterationRecord:
    k: int
    theta_index: int
    alpha: float
    weights: MixtureWeights
    objective: float
    gain_estimate: GainReport | None
    bound_b: float

    @property
    def bound_over_k(self) -> float:
        return self.bound_b / self.k


@dataclass(frozen=True)
class ProjectionTrace:
    iterations: tuple
    reference: MixtureWeights
    final: MixtureWeights
    stopped_early: bool = False
    caveats: tuple = ()

    def __len__(self):
        return len(self.iterations)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "alpha", "theta_index", "gain_value", "gain_status", "bound_over_k"])
        for r in self.iterations:
            g = r.gain_estimate
            w.writerow([r.k, fmt(r.alpha), r.theta_index,
                        "" if g is None else fmt(g.value),
                        "" if g is None else g.status,
                        fmt(r.bound_over_k)])
        return buf.getvalue()


def _reference_weights(ref, size) -> MixtureWeights:
    if ref is None:
        return MixtureWeights.uniform(size)
    if isinstance(ref, MixtureWeights):
        return ref
    return MixtureWeights.single(int(ref))


def _row_integrals(A: np.ndarray, p_mass: np.ndarray) -> np.ndarray:
    """Extended-real ``Σ_s p_s A[i, s]`` for each row."""
    out = np.empty(A.shape[0])
    finite_rows = np.all(np.isfinite(A), axis=1)
    out[finite_rows] = A[finite_rows] @ p_mass
    for i in np.flatnonzero(~finite_rows):
        v = extended_sum(A[i], p_mass)
        out[i] = np.nan if not isinstance(v, float) else v
    return out


def _argmin_lowest(J: np.ndarray, rtol: float) -> int:
    jmin = np.nanmin(J)
    if not np.isfinite(jmin):
        raise PreconditionError("no candidate with a finite objective")
    near = np.flatnonzero(J <= jmin + rtol * max(1.0, abs(jmin)))
    return int(near[0])


class _BoundTerms:
    """Pieces of the envelope bound that do not change along a trace."""

    def __init__(self, L, p_mass, w_dense):
        self.p_mass = p_mass
        self.log_sup = np.max(L, axis=0)
        used = w_dense > 0
        lq = mix_log(L[used], w_dense[used])
        with np.errstate(divide="ignore"):
            lw = np.log(w_dense[used])
        second = special.logsumexp(2 * L[used] + lw[:, None], axis=0)
        with np.errstate(invalid="ignore"):
            self.ratio = np.exp(second - 2 * lq)
        self.ratio[np.isnan(self.ratio)] = np.inf

    def value(self, min_chosen_log) -> float:
        with np.errstate(invalid="ignore"):
            factor = 1.0 + self.log_sup - min_chosen_log
        v = extended_sum(factor * self.ratio, self.p_mass)
        return v if isinstance(v, float) else math.inf


def brinda_bound(P: GridMeasure, family: ParametricFamily, Q: MixtureWeights, chosen) -> float:
    """The constant ``b_Q^(k)(P)`` bounding ``k · D(P‖Q_k⇝Q)`` along a greedy trace.

    ``chosen`` lists the member indices picked so far; the sup over the
    parameter space is taken over the family's member list.
    """
    same_grid(P, family)
    chosen = list(chosen)
    if not chosen:
        raise ValueError("chosen must be nonempty")
    S = np.flatnonzero(P.support)
    L = family.log_density_matrix(S)
    terms = _BoundTerms(L, P.point_mass[S], Q.dense(family.size))
    return terms.value(np.min(L[chosen], axis=0))


def _default_gain_schedule(k_max):
    ks = {1, k_max}
    k = 2
    while k < k_max:
        ks.add(k)
        k *= 2
    return ks


def greedy_project(P: GridMeasure, family: ParametricFamily, ref=None, k_max: int = 500, *,
                   gain_at=None, early_stop: bool = True, tie_rtol: float = 1e-12,
                   gain_opts: dict | None = None) -> ProjectionTrace:
    """Run the greedy projection of ``P`` onto the hull of ``family``.

    ``ref`` fixes the reference ``Q*`` (default: uniform mixture of all
    members); it only shifts the objective, so it affects feasibility, not
    which member is chosen. Gain estimates ``D(P‖Q_k⇝hull)`` are computed
    for ``k`` in ``gain_at`` (default: powers of two and ``k_max``).
    The final iteration always carries one.
    """
    same_grid(P, family)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    M = family.size
    ref_w = _reference_weights(ref, M)
    S = np.flatnonzero(P.support)
    if S.size == 0:
        raise PreconditionError("P has empty support")
    p_mass = P.point_mass[S]
    L = family.log_density_matrix(S)
    masses = np.asarray(family.masses)
    ref_dense = ref_w.dense(M)
    lq_ref = mix_log(L[ref_dense > 0], ref_dense[ref_dense > 0])
    ref_mass = float(ref_dense @ masses)
    if np.any(lq_ref == -np.inf):
        raise PreconditionError("P is not absolutely continuous with respect to the reference Q*")

    J1 = _row_integrals(lq_ref[None, :] - L, p_mass) - (ref_mass - masses)
    if not np.any(np.isfinite(J1)):
        raise PreconditionError("inf over members of ∫ln(q*/q_θ)dP is not finite")
    caveats = []
    if not np.all(np.isfinite(J1)):
        bad = [family.labels[i] for i in np.flatnonzero(~np.isfinite(J1))]
        caveats.append(f"members with infinite ∫ln(q*/q_θ)dP never selected: {bad[:5]}"
                       + (" ..." if len(bad) > 5 else ""))
    caveats.append("first-step precondition checked over the discretized member list only")

    schedule = _default_gain_schedule(k_max) if gain_at is None else set(gain_at) | {k_max}
    gain_opts = gain_opts or {}
    bound = _BoundTerms(L, p_mass, ref_dense)

    theta = _argmin_lowest(J1, tie_rtol)
    w = np.zeros(M)
    w[theta] = 1.0
    lq = L[theta].copy()
    mass_k = float(masses[theta])
    min_chosen = L[theta].copy()
    records = []
    quiet = 0
    stopped = False

    def record(k, th, alpha, obj):
        mw = MixtureWeights.from_dense(w)
        gain = None
        if k in schedule:
            gain = gain_to_hull(P, mix(family, mw), family, start=mw, **gain_opts)
        records.append(IterationRecord(k, th, alpha, mw, obj, gain, bound.value(min_chosen)))

    record(1, theta, 1.0, float(J1[theta]))
    for k in range(2, k_max + 1):
        alpha = 2.0 / (k + 1)
        cand = np.logaddexp(math.log1p(-alpha) + lq[None, :], math.log(alpha) + L)
        cmass = (1 - alpha) * mass_k + alpha * masses
        J = _row_integrals(lq_ref[None, :] - cand, p_mass) - (ref_mass - cmass)
        theta = _argmin_lowest(J, tie_rtol)
        lq_new = cand[theta]
        step = math.sqrt(max(float(p_mass @ log_cosh(0.5 * (lq - lq_new))), 0.0))
        w *= 1 - alpha
        w[theta] += alpha
        lq, mass_k = lq_new, float(cmass[theta])
        np.minimum(min_chosen, L[theta], out=min_chosen)
        quiet = quiet + 1 if step < 1e-10 else 0
        stop_now = early_stop and quiet >= 10
        if stop_now:
            schedule.add(k)
        record(k, theta, alpha, float(J[theta]))
        if stop_now:
            stopped = True
            break
    return ProjectionTrace(tuple(records), ref_w, records[-1].weights, stopped, tuple(caveats))


@dataclass
class CertificationReport:
    successive_mp: list
    cauchy_ok: bool
    residual: GainReport
    probe_gains: list
    max_probe_gain: float
    envelope_violations: list = field(default_factory=list)
    envelope_checks: int = 0
    estat_slack: float = math.nan
    worst_member: int = -1

    @property
    def residual_gain(self) -> float:
        return max(float(self.residual.value), 0.0)

    @property
    def envelope_ok(self) -> bool:
        return not self.envelope_violations


def certify_projection(trace: ProjectionTrace, P: GridMeasure, family: ParametricFamily,
                       probes, *, cauchy_tol: float = 1e-4, slack: float = 1e-9,
                       gain_opts: dict | None = None) -> CertificationReport:
    """Convergence diagnostics for a finished trace.

    Reports successive ``m_P`` distances, the residual gain of the final
    iterate (against the hull and against each probe mixture), every
    violation of ``D(P‖Q_k⇝Q) <= b_Q^(k)/k + slack`` over the probes, and
    the e-statistic slack ``max_θ ∫(p/q_final) dQ_θ - (P(Ω)+Q_θ(Ω)-Q_final(Ω))``.
    """
    if not trace.iterations:
        raise ValueError("empty trace")
    same_grid(P, family)
    S = np.flatnonzero(P.support)
    p_mass = P.point_mass[S]
    L = family.log_density_matrix(S)
    M = family.size
    lqs = [mix_log(L[r.weights.indices], r.weights.weights) for r in trace.iterations]
    qmass = [float(r.weights.weights @ family.masses[r.weights.indices]) for r in trace.iterations]
    steps = [math.sqrt(max(float(p_mass @ log_cosh(0.5 * (a - b))), 0.0))
             for a, b in zip(lqs[:-1], lqs[1:])]
    cauchy_ok = bool(steps) and steps[-1] < cauchy_tol or (not steps)

    final = mix(family, trace.final)
    residual = gain_to_hull(P, final, family, start=trace.final, **(gain_opts or {}))
    probe_gains = [description_gain(P, final, mix(family, q)) for q in probes]
    finite_gains = [g for g in probe_gains if isinstance(g, float)]
    max_probe = max(finite_gains) if finite_gains else math.nan

    violations = []
    checks = 0
    for qi, q in enumerate(probes):
        qd = q.dense(M)
        lq_probe = mix_log(L[qd > 0], qd[qd > 0])
        q_mass = float(qd @ family.masses)
        terms = _BoundTerms(L, p_mass, qd)
        min_chosen = np.full(S.size, np.inf)
        for r, lq_k, m_k in zip(trace.iterations, lqs, qmass):
            np.minimum(min_chosen, L[r.theta_index], out=min_chosen)
            lhs = extended_sum(lq_probe - lq_k, p_mass)
            if not isinstance(lhs, float):
                continue
            lhs -= q_mass - m_k
            b = terms.value(min_chosen)
            if not (math.isfinite(lhs) and math.isfinite(b)):
                continue
            checks += 1
            if lhs > b / r.k + slack:
                violations.append((qi, r.k, lhs, b / r.k))

    log_e = np.full(len(P.grid), -np.inf)
    with np.errstate(invalid="ignore"):
        log_e[S] = P.log_density[S] - final.log_density[S]
    integrals = family.integrate_each(log_e)
    allowance = P.mass + np.asarray(family.masses) - final.mass
    excess = integrals - allowance
    worst = int(np.argmax(excess))
    return CertificationReport(steps, cauchy_ok, residual, probe_gains, max_probe, violations,
                               checks, float(excess[worst]), worst)
