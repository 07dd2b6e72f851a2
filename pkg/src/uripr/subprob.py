"""Constraint sets on ℕ whose reverse projection is a strict sub-probability measure."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .divergence import kl
from .evalue import EStatistic
from .measures import (
    Grid,
    GridMeasure,
    ParametricFamily,
    counting_grid,
    fmt,
    point_mass,
    sparse_counting_grid,
)

EQ = "eq"
LE = "le"


@dataclass(frozen=True)
class Constraint:
    f: np.ndarray
    kind: str
    level: float

    def value(self, Q: GridMeasure) -> float:
        return float(np.dot(self.f, Q.point_mass))

    def holds(self, Q: GridMeasure, tol: float = 1e-12) -> bool:
        v = self.value(Q)
        if self.kind == EQ:
            return abs(v - self.level) <= tol
        return v <= self.level + tol


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Measures ``Q`` on a counting grid with ``Σ f(i) q(i) (= or <=) level`` per constraint."""

    grid: Grid
    constraints: tuple
    generators: ParametricFamily | None = None

    def __post_init__(self):
        for c in self.constraints:
            if c.f.shape != (len(self.grid),) or np.any(c.f <= 0):
                raise ValueError("constraint functions must be strictly positive on the grid")
            if c.kind not in (EQ, LE):
                raise ValueError(f"unknown constraint kind {c.kind!r}")

    def violations(self, Q: GridMeasure, tol: float = 1e-12) -> list:
        return [i for i, c in enumerate(self.constraints) if not c.holds(Q, tol)]


def _on_grid(f, grid: Grid) -> np.ndarray:
    if callable(f):
        return np.asarray(f(grid.points), dtype=float)
    a = np.asarray(f, dtype=float)
    if a.ndim == 0:
        return np.full(len(grid), float(a))
    if a.shape != (len(grid),):
        raise ValueError("function does not match grid")
    return a


# ---------------------------------------------------------------------------
# P = δ₁, C = {Q : Σ q(i)/i = 1/2}


def two_point(grid: Grid, j: int) -> GridMeasure:
    """The feasible measure ``((j-2)/(2j-2)) δ₁ + (j/(2j-2)) δ_j``."""
    if j < 2:
        raise ValueError("j must be at least 2")
    d = np.zeros(len(grid))
    d[grid.index_of(1.0)] += (j - 2) / (2 * j - 2)
    d[grid.index_of(float(j))] += j / (2 * j - 2)
    return GridMeasure.from_density(grid, d, label=j)


def harmonic_generators(grid: Grid) -> ParametricFamily:
    """Extreme points of the constraint set on ``grid``: two-point measures on ``{1, j}``, j >= 2."""
    js = [int(x) for x in grid.points if x >= 2]
    i1 = grid.index_of(1.0)
    rows, cols, vals = [], [], []
    for r, j in enumerate(js):
        a = (j - 2) / (2 * j - 2)
        if a > 0:
            rows.append(r), cols.append(i1), vals.append(a)
        rows.append(r), cols.append(grid.index_of(float(j))), vals.append(j / (2 * j - 2))
    d = sparse.csr_array((vals, (rows, cols)), shape=(len(js), len(grid)))
    return ParametricFamily(grid, labels=js, sparse_density=d, probability_family=True,
                            name="harmonic-extreme")


def harmonic_constraints(grid: Grid, with_generators: bool = True) -> ConstraintSet:
    cons = (Constraint(1.0 / grid.points, EQ, 0.5), Constraint(np.ones(len(grid)), EQ, 1.0))
    return ConstraintSet(grid, cons, harmonic_generators(grid) if with_generators else None)


@dataclass
class HarmonicExample:
    constraints: ConstraintSet
    P: GridMeasure
    sequence: list
    limit: GridMeasure
    divergences: np.ndarray

    @property
    def ns(self) -> list:
        return [q.label for q in self.sequence]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "divergence", "mass", "status"])
        for q, d in zip(self.sequence, self.divergences):
            w.writerow([q.label, fmt(d), fmt(q.mass), "exact"])
        return buf.getvalue()


def section3a_example(N: int, ns=None, dense_prefix: int = 100) -> HarmonicExample:
    """The sequence ``Q_n`` converging to ``(1/2) δ₁`` for ``P = δ₁``.

    With ``ns=None`` the grid is ``{1..N}`` and ``n`` runs over ``3..N``.
    Otherwise the grid is the counting measure on ``{1..dense_prefix} ∪ ns``,
    which reaches very large ``n`` without a dense grid of that size.
    """
    if N < 10:
        raise ValueError("N must be at least 10")
    if ns is None:
        grid = counting_grid(N, start=1)
        ns = range(3, N + 1)
    else:
        ns = sorted(int(n) for n in ns)
        if ns[0] < 3 or ns[-1] > N:
            raise ValueError("sequence indices must lie in 3..N")
        grid = sparse_counting_grid(list(range(1, min(N, dense_prefix) + 1)) + ns)
    P = point_mass(grid, 1.0)
    cons = harmonic_constraints(grid, with_generators=False)
    seq, divs = [], []
    for n in ns:
        q = two_point(grid, n)
        bad = cons.violations(q, tol=1e-12)
        if bad:
            raise AssertionError(f"Q_{n} violates constraints {bad}")
        d = kl(P, q)
        expected = math.log((2 * n - 2) / (n - 2))
        if abs(d - expected) > 1e-12:
            raise AssertionError(f"D(P‖Q_{n}) = {d!r}, expected {expected!r}")
        seq.append(q)
        divs.append(d)
    limit = point_mass(grid, 1.0, mass=0.5)
    return HarmonicExample(cons, P, seq, limit, np.array(divs))


@dataclass
class LinearProjection:
    q: np.ndarray
    divergence: float
    status: str


def harmonic_projection(N: int) -> LinearProjection:
    """Minimize ``D(δ₁‖Q) = -ln q(1)`` over probability vectors on ``{1..N}`` with ``Σ q(i)/i = 1/2``.

    With ``P = δ₁`` this is the linear program ``max q(1)``.
    """
    i = np.arange(1, N + 1, dtype=float)
    c = np.zeros(N)
    c[0] = -1.0
    res = optimize.linprog(c, A_eq=np.vstack([1.0 / i, np.ones(N)]), b_eq=[0.5, 1.0],
                           bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")
    q = np.maximum(res.x, 0.0)
    return LinearProjection(q, -math.log(q[0]), "exact")


def random_feasible_harmonic(grid: Grid, count: int, rng: np.random.Generator,
                       max_pairs: int = 3) -> list:
    """Random members of the constraint set: Dirichlet mixtures of up to ``max_pairs`` two-point measures."""
    js = np.array([int(x) for x in grid.points if x >= 2])
    out = []
    for _ in range(count):
        k = int(rng.integers(1, max_pairs + 1))
        picks = rng.choice(js, size=k, replace=True)
        w = rng.dirichlet(np.ones(k))
        d = sum(wi * two_point(grid, int(j)).density for wi, j in zip(w, picks))
        out.append(GridMeasure.from_density(grid, d))
    return out


# ---------------------------------------------------------------------------
# C_ν = {Q : Σ g(i) q(i) <= ν}


def power_law_tail(N: int, s: float) -> float:
    """Upper bound ``∫_N^∞ x^{-s} dx`` on ``Σ_{i>N} i^{-s}``."""
    if s <= 1:
        return math.inf
    return N ** (1.0 - s) / (s - 1.0)


def geometric_tail(N: int, r: float, scale: float = 1.0) -> float:
    """Exact ``Σ_{i>N} scale · r^i`` for ``0 <= r < 1``."""
    if not 0 <= r < 1:
        return math.inf
    return scale * r ** (N + 1) / (1.0 - r)


@dataclass
class WeightedBudget:
    constraints: ConstraintSet
    estat: EStatistic
    qhat: GridMeasure
    nu: float
    c: float
    c_upper: float
    truncated: bool

    @property
    def mass(self) -> float:
        return self.qhat.mass

    def __iter__(self):
        return iter((self.constraints, self.estat, self.qhat))


def build_appendixB(g, P: GridMeasure, nu: float | None = None,
                    tail_bound: float | None = None) -> WeightedBudget:
    """Constraint set ``Σ g q <= ν``, its optimal e-statistic ``g/ν`` and projection ``ν p / g``.

    ``tail_bound`` bounds ``Σ_{i>N} p(i)/g(i)`` for the untruncated problem;
    without it the constant ``c`` is flagged truncated. ``ν`` defaults to
    ``0.95 / c``.
    """
    grid = P.grid
    if grid.kind != "counting":
        raise ValueError("the construction lives on a counting grid")
    gv = _on_grid(g, grid)
    if np.any(gv <= 0):
        raise ValueError("g must be strictly positive")
    if not gv[-1] < gv[0] / 100:
        raise ValueError("g must decay along the grid (g(N) < g(1)/100)")
    live = P.support
    c = float(np.sum(P.point_mass[live] / gv[live]))
    truncated = tail_bound is None
    c_upper = c + (0.0 if tail_bound is None else float(tail_bound))
    if nu is None:
        nu = 0.95 / c_upper
    if not 0 < nu < 1 / c_upper:
        raise ValueError(f"nu must lie in (0, 1/c) with c = {c_upper!r}; got {nu!r}")

    log_g = np.log(gv)
    # negating ln(ν/g) exactly makes E·(ν/g) = 1 bit for bit at every atom
    E = EStatistic(grid, -np.log(nu / gv), source="g/nu")
    lq = np.where(live, math.log(nu) + P.log_density - log_g, -np.inf)
    qhat = GridMeasure(grid, lq, label="qhat")

    n = len(grid)
    atoms = sparse.csr_array((nu / gv, (np.arange(n), np.arange(n))), shape=(n + 1, n))
    gens = ParametricFamily(grid, labels=[int(x) for x in grid.points] + ["zero"],
                            sparse_density=atoms, name="budget-extreme")
    cons = ConstraintSet(grid, (Constraint(gv, LE, nu),), gens)

    used = float(np.dot(gv, qhat.point_mass))
    if used > nu * P.mass * (1 + 1e-12) or used > nu * (1 + 1e-12):
        raise AssertionError(f"q̂ violates the constraint: Σ g q̂ = {used!r} > ν = {nu!r}")
    if not qhat.mass < 1:
        raise AssertionError(f"q̂ has mass {qhat.mass!r}, expected < 1")
    return WeightedBudget(cons, E, qhat, nu, c, c_upper, truncated)


def log_loss_divergence(P: GridMeasure, Q: GridMeasure) -> float:
    """``Σ p ln(p/q)`` without the mass correction (the objective minimized over ``C_ν``)."""
    return float(kl(P, Q) - (Q.mass - P.mass))


def probability_completion(app: WeightedBudget, P: GridMeasure, nu_star: float) -> GridMeasure:
    """Complete ``q̂_ν`` to a probability measure inside ``C_{ν*}`` (for ``ν < ν*``).

    The missing mass is put on the first grid point ``n`` with
    ``g(n) (1 - Σ q̂) <= ν* - ν``.
    """
    gv = app.constraints.constraints[0].f
    missing = 1.0 - app.qhat.mass
    room = nu_star - app.nu
    if room <= 0:
        raise ValueError("need nu < nu_star")
    ok = np.flatnonzero(gv * missing <= room)
    if ok.size == 0:
        raise ValueError("grid too short to place the missing mass")
    n = int(ok[0])
    d = app.qhat.density.copy()
    d[n] += missing / app.qhat.grid.weights[n]
    return GridMeasure.from_density(app.qhat.grid, d, label=f"completion@{app.qhat.grid.points[n]:g}")


# ---------------------------------------------------------------------------
# dominated constraints survive pointwise limits


@dataclass
class DominatedLimitReport:
    precondition_ok: bool
    failures: list
    max_pointwise_error: float
    limit_value: float
    limit_mass: float
    preserved: bool
    converged: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.precondition_ok and self.converged and self.preserved


def dominated_limit_check(Qseq, Qstar: GridMeasure, f0, f1, lambda0: float, lambda1: float, *,
                          K: int = 100, tol: float = 1e-8, constraint_tol: float = 1e-10,
                          tail_ratio: float = 1e-6) -> DominatedLimitReport:
    """Check that the equality constraint ``Σ f1 q = λ1`` survives the pointwise limit.

    Preconditions: every member satisfies ``Σ f0 q <= λ0`` and
    ``Σ f1 q = λ1``, and ``f1/f0`` decreases to below ``tail_ratio`` at the
    grid tail. On success the limit is checked pointwise on the first ``K``
    grid points and for ``Σ f1 q* = λ1``.
    """
    Qseq = list(Qseq)
    if not Qseq:
        raise ValueError("empty sequence")
    grid = Qstar.grid
    a0, a1 = _on_grid(f0, grid), _on_grid(f1, grid)
    failures = []
    if np.any(a0 <= 0) or np.any(a1 <= 0):
        failures.append("constraint functions must be strictly positive")
    for i, q in enumerate(Qseq):
        if q.grid != grid:
            raise ValueError(f"sequence member {i} lives on a different grid")
        v0 = float(np.dot(a0, q.point_mass))
        v1 = float(np.dot(a1, q.point_mass))
        if v0 > lambda0 + constraint_tol:
            failures.append(f"f0 constraint violated at sequence index {i}: {v0!r} > {lambda0!r}")
        if abs(v1 - lambda1) > constraint_tol:
            failures.append(f"f1 constraint violated at sequence index {i}: {v1!r} != {lambda1!r}")
    ratio = a1 / a0
    if np.any(np.diff(ratio) > 0):
        j = int(np.flatnonzero(np.diff(ratio) > 0)[0]) + 1
        failures.append(f"f1/f0 increases at grid index {j} (point {grid.points[j]:g})")
    if not ratio[-1] < tail_ratio:
        failures.append(f"f1 is not dominated by f0: f1/f0 = {ratio[-1]:.6g} at the grid tail "
                        f"(need < {tail_ratio:g})")

    k = min(len(grid), K)
    err = float(np.max(np.abs(Qseq[-1].point_mass[:k] - Qstar.point_mass[:k])))
    limit_value = float(np.dot(a1, Qstar.point_mass))
    converged = err < tol
    preserved = abs(limit_value - lambda1) <= tol
    return DominatedLimitReport(not failures, failures, err, limit_value, Qstar.mass,
                                preserved, converged,
                                {"tail_ratio": float(ratio[-1]), "K": k})
