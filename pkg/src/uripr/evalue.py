"""E-statistics: construction, verification, comparison and simulation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .measures import (
    UNDEFINED,
    Grid,
    GridMeasure,
    ParametricFamily,
    fmt,
    integrate,
    same_grid,
)

TIE_TOL = 1e-9
VERIFY_TOL = 1e-9

FIRST = "first_stronger"
SECOND = "second_stronger"
TIE = "tie"
INCOMPARABLE = "incomparable"


@dataclass(frozen=True)
class Verification:
    passed: bool
    sup_slack: float
    worst_member: int
    integrals: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "sup_slack": fmt(self.sup_slack),
                           "worst_member": self.worst_member}, sort_keys=True)


@dataclass(frozen=True, eq=False)
class EStatistic:
    """Nonnegative function on a grid, stored as its logarithm.

    ``log_values`` may contain ``-inf`` (E = 0) and ``+inf`` (E = ∞).
    """

    grid: Grid
    log_values: np.ndarray
    source: str = "explicit"
    verification: Verification | None = None

    def __post_init__(self):
        lv = np.array(self.log_values, dtype=float, copy=True)
        if lv.shape != (len(self.grid),):
            raise ValueError("e-statistic does not match grid")
        if np.any(np.isnan(lv)):
            raise ValueError("e-statistic values must be nonnegative")
        lv.setflags(write=False)
        object.__setattr__(self, "log_values", lv)

    @classmethod
    def from_values(cls, grid: Grid, values, source="explicit") -> "EStatistic":
        v = np.asarray(values, dtype=float)
        if np.any(v < 0) or np.any(np.isnan(v)):
            raise ValueError("e-statistic values must be nonnegative")
        with np.errstate(divide="ignore"):
            return cls(grid, np.log(v), source)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "EStatistic":
        return cls.from_values(grid, np.full(len(grid), float(c)), source=f"constant({c:g})")

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def scaled(self, c: float) -> "EStatistic":
        if c <= 0:
            raise ValueError("scale must be positive")
        return EStatistic(self.grid, self.log_values + math.log(c), f"{c:g}*{self.source}")

    def with_verification(self, v: Verification) -> "EStatistic":
        return replace(self, verification=v)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "log_e"])
        for x, le in zip(self.grid.points, self.log_values):
            w.writerow([fmt(x), fmt(le)])
        return buf.getvalue()


def make_estat(P: GridMeasure, Qhat: GridMeasure) -> EStatistic:
    """Likelihood ratio ``p / q̂`` with ``0/0 := 0`` and ``c/0 := ∞``."""
    same_grid(P, Qhat)
    lp, lq = P.log_density, Qhat.log_density
    with np.errstate(invalid="ignore"):
        lv = lp - lq
    lv[lp == -np.inf] = -np.inf
    return EStatistic(P.grid, lv, source="likelihood_ratio")


def infinite_on_support(E: EStatistic, P: GridMeasure) -> float:
    """P-mass of the set where E is infinite (must be zero for a usable e-statistic)."""
    return float(np.sum(P.point_mass[E.log_values == np.inf]))


def expectation(E: EStatistic, Q: GridMeasure) -> float:
    """``∫E dQ`` evaluated in log space; an infinite value on Q's support gives ∞."""
    if E.grid != Q.grid:
        raise ValueError("e-statistic and measure live on different grids")
    live = Q.support
    if np.any(E.log_values[live] == np.inf):
        return math.inf
    s = E.log_values[live] + Q.log_density[live] + Q.grid.log_weights[live]
    if s.size == 0:
        return 0.0
    return float(np.exp(special.logsumexp(s)))


def verify_estat(E: EStatistic, family: ParametricFamily, tol: float = VERIFY_TOL) -> Verification:
    """Check ``∫E dQ <= 1`` on every generator; by linearity this covers the hull."""
    if E.grid != family.grid:
        raise ValueError("e-statistic and family live on different grids")
    integrals = family.integrate_each(E.log_values)
    worst = int(np.argmax(integrals))
    slack = float(integrals[worst] - 1.0)
    return Verification(bool(slack <= tol), slack, worst, integrals)


@dataclass(frozen=True)
class StrengthVerdict:
    value: object
    direction: str


def compare_strength(E1: EStatistic, E2: EStatistic, P: GridMeasure) -> StrengthVerdict:
    """``∫ ln(E1/E2) dP`` with ``ln(0/c) = -∞`` and ``ln(c/0) = ∞``.

    Points where both are 0 or both are ∞ leave the ratio undefined, as do
    integrals whose positive and negative parts both diverge.
    """
    if not (E1.grid == E2.grid == P.grid):
        raise ValueError("e-statistics and P live on different grids")
    a, b = E1.log_values, E2.log_values
    live = P.support
    same_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    if np.any(same_inf & live):
        return StrengthVerdict(UNDEFINED, INCOMPARABLE)
    with np.errstate(invalid="ignore"):
        d = np.where(live, a - b, 0.0)
    v = integrate(d, P)
    if v is UNDEFINED:
        return StrengthVerdict(UNDEFINED, INCOMPARABLE)
    if abs(v) <= TIE_TOL:
        return StrengthVerdict(v, TIE)
    return StrengthVerdict(v, FIRST if v > 0 else SECOND)


def gro_value(E: EStatistic, P: GridMeasure):
    """Growth rate ``∫ ln E dP``."""
    if E.grid != P.grid:
        raise ValueError("e-statistic and P live on different grids")
    return integrate(np.where(P.support, E.log_values, 0.0), P)


# ---------------------------------------------------------------------------
# simulation


def sample_grid(m: GridMeasure, size, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. grid indices from ``m`` (normalized) by inverse CDF."""
    pm = m.point_mass
    cdf = np.cumsum(pm)
    cdf /= cdf[-1]
    u = rng.random(size)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


@dataclass
class GrowthReport:
    n: int
    log_ratio_sums: np.ndarray
    mean_rate: float
    std_error: float
    expected: object

    @property
    def z_score(self) -> float:
        if not isinstance(self.expected, float) or not math.isfinite(self.expected):
            return math.nan
        if self.std_error == 0:
            return 0.0 if abs(self.mean_rate - self.expected) <= 1e-12 else math.inf
        return (self.mean_rate - self.expected) / self.std_error

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "n", "log_ratio_sum", "mean_rate"])
        for i, s in enumerate(self.log_ratio_sums):
            w.writerow([i, self.n, fmt(s), fmt(s / self.n)])
        return buf.getvalue()


def simulate_eprocess(P: GridMeasure, E1: EStatistic, E2: EStatistic, n: int, runs: int,
                      seed: int) -> GrowthReport:
    """Accumulate ``Σ ln E1(ω_i) - ln E2(ω_i)`` over ``n`` draws from ``P``, per run.

    Run ``r`` uses its own generator seeded with ``seed + r``.
    """
    if not (E1.grid == E2.grid == P.grid):
        raise ValueError("e-statistics and P live on different grids")
    live = P.support
    if np.any(~np.isfinite(E1.log_values[live])) or np.any(~np.isfinite(E2.log_values[live])):
        raise ValueError("both e-statistics must be strictly positive and finite P-a.s.")
    inc = np.where(live, E1.log_values - E2.log_values, 0.0)
    sums = np.empty(runs)
    for r in range(runs):
        rng = np.random.default_rng(seed + r)
        idx = sample_grid(P, n, rng)
        sums[r] = float(np.sum(inc[idx]))
    rates = sums / n
    se = float(np.std(rates, ddof=1) / math.sqrt(runs)) if runs > 1 else math.nan
    expected = compare_strength(E1, E2, P).value
    return GrowthReport(n, sums, float(np.mean(rates)), se, expected)


@dataclass
class Type1Report:
    rate: float
    bound: float
    rejections: int
    runs: int

    @property
    def passed(self) -> bool:
        return self.rate <= self.bound


def type1_check(Q: GridMeasure, E: EStatistic, n_batch: int, runs: int, alpha: float,
                seed: int) -> Type1Report:
    """Fraction of null runs whose running product of E ever reaches ``1/α``."""
    if E.grid != Q.grid:
        raise ValueError("e-statistic and null live on different grids")
    null_mass = expectation(E, Q)
    if not null_mass <= 1 + VERIFY_TOL:
        raise ValueError(f"E is not an e-statistic for the sampling null (∫E dQ = {null_mass})")
    thresh = math.log(1.0 / alpha)
    hits = 0
    for r in range(runs):
        rng = np.random.default_rng(seed + r)
        idx = sample_grid(Q, n_batch, rng)
        if np.max(np.cumsum(E.log_values[idx])) >= thresh:
            hits += 1
    rate = hits / runs
    return Type1Report(rate, alpha + 3 * math.sqrt(alpha / runs), hits, runs)
