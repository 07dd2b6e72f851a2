"""Finite measures on a shared discrete support or quadrature grid.

Every measure stores its density as a log-density with respect to the grid's
base measure, so Gaussian tails far outside the bulk stay strictly positive
instead of underflowing. Densities supplied in linear form are clamped: values
below ``DENSITY_FLOOR`` are treated as zero (outside the support).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse, special, stats

DENSITY_FLOOR = 1e-300
OVERFLOW = 1e300
MASS_RTOL = 1e-12
PROB_TOL = 1e-9
FAMILY_MASS_TOL = 1e-6

DEFAULT_WINDOW = (-50.0, 50.0)
DEFAULT_POINTS = 20001
DEFAULT_SUPPORT = 10000


class _Undefined:
    """Result of an integral whose positive and negative parts both diverge."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Undefined, ())


UNDEFINED = _Undefined()


def is_undefined(x) -> bool:
    return x is UNDEFINED


class GridMismatchError(ValueError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class Grid:
    """Support points and base-measure weights.

    ``kind`` is ``"counting"`` (all weights one) or ``"quadrature"``
    (trapezoid weights of a continuous density).
    """

    points: np.ndarray
    weights: np.ndarray
    kind: str = "counting"

    def __post_init__(self):
        pts = _frozen(self.points)
        wts = _frozen(self.weights)
        if pts.ndim != 1 or pts.shape != wts.shape:
            raise ValueError("points and weights must be 1-d arrays of equal length")
        if pts.size == 0:
            raise ValueError("empty grid")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if np.any(wts <= 0) or not np.all(np.isfinite(wts)):
            raise ValueError("grid weights must be strictly positive and finite")
        if self.kind not in ("counting", "quadrature"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "_log_weights", _frozen(np.log(wts)))

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Grid):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.kind, len(self), float(self.points[0]), float(self.points[-1])))

    @property
    def log_weights(self) -> np.ndarray:
        return self._log_weights

    def index_of(self, x: float) -> int:
        i = int(np.searchsorted(self.points, x))
        if i >= len(self) or self.points[i] != x:
            raise KeyError(f"{x} is not a grid point")
        return i


def counting_grid(n: int, start: int = 0) -> Grid:
    """Counting measure on the integers ``start .. start + n - 1``."""
    if n < 1:
        raise ValueError("counting grid needs at least one point")
    pts = np.arange(start, start + n, dtype=float)
    return Grid(pts, np.ones(n), "counting")


def sparse_counting_grid(points: Iterable[int]) -> Grid:
    """Counting measure restricted to an arbitrary increasing set of integers."""
    pts = np.unique(np.asarray(list(points), dtype=float))
    return Grid(pts, np.ones(pts.size), "counting")


def quadrature_grid(lo: float = DEFAULT_WINDOW[0], hi: float = DEFAULT_WINDOW[1],
                    n: int = DEFAULT_POINTS) -> Grid:
    """Equispaced trapezoid rule on ``[lo, hi]``."""
    if n < 2 or not hi > lo:
        raise ValueError("quadrature grid needs hi > lo and at least two points")
    pts = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return Grid(pts, w, "quadrature")


def same_grid(*objs) -> Grid:
    grids = [o.grid for o in objs]
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError("objects live on different grids")
    return first


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Nonnegative finite measure given by its log-density on a grid.

    ``-inf`` entries mark points outside the support. ``truncated`` records
    that the measure is a renormalized window of a measure with unbounded
    support, so divergences computed from it carry a caveat.
    """

    grid: Grid
    log_density: np.ndarray
    probability: bool = False
    truncated: bool = False
    label: object = None
    raw_mass: float | None = None
    mass: float = field(init=False)

    def __post_init__(self):
        ld = _frozen(self.log_density)
        if ld.shape != (len(self.grid),):
            raise GridMismatchError(
                f"log-density has shape {ld.shape}, grid has {len(self.grid)} points")
        if np.any(np.isnan(ld)) or np.any(ld == np.inf):
            raise ValueError("log-density must be finite or -inf")
        object.__setattr__(self, "log_density", ld)
        mass = _mass_from_log(ld, self.grid)
        object.__setattr__(self, "mass", mass)
        if self.probability and abs(mass - 1.0) > PROB_TOL:
            raise ValueError(f"probability measure has mass {mass!r}")

    @classmethod
    def from_density(cls, grid: Grid, density, **kw) -> "GridMeasure":
        d = np.asarray(density, dtype=float)
        if d.shape != (len(grid),):
            raise GridMismatchError("density length does not match grid")
        if np.any(d < 0) or np.any(np.isnan(d)):
            raise ValueError("density must be nonnegative")
        with np.errstate(divide="ignore"):
            ld = np.where(d < DENSITY_FLOOR, -np.inf, np.log(np.where(d > 0, d, 1.0)))
        return cls(grid, ld, **kw)

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)

    @property
    def point_mass(self) -> np.ndarray:
        """Mass carried by each grid point (density times base weight)."""
        return np.exp(self.log_density + self.grid.log_weights)

    @property
    def support(self) -> np.ndarray:
        return np.isfinite(self.log_density)

    def normalized(self) -> "GridMeasure":
        if not self.mass > 0:
            raise ValueError("cannot normalize a zero measure")
        return GridMeasure(self.grid, self.log_density - math.log(self.mass),
                           probability=True, truncated=self.truncated, label=self.label)

    def scaled(self, c: float) -> "GridMeasure":
        if c < 0:
            raise ValueError("scale must be nonnegative")
        shift = math.log(c) if c > 0 else -np.inf
        return GridMeasure(self.grid, self.log_density + shift, label=self.label,
                           truncated=self.truncated)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "weight", "density"])
        for x, wt, d in zip(self.grid.points, self.grid.weights, self.density):
            w.writerow([fmt(x), fmt(wt), fmt(d)])
        return buf.getvalue()


def _mass_from_log(log_density: np.ndarray, grid: Grid) -> float:
    s = log_density + grid.log_weights
    if not np.any(np.isfinite(s)):
        return 0.0
    return float(np.exp(special.logsumexp(s)))


def fmt(x) -> str:
    """Ten significant digits, with explicit tokens for non-finite values."""
    if x is UNDEFINED:
        return "undefined"
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.10g}"


# ---------------------------------------------------------------------------
# integration


def integrate(f, m: GridMeasure):
    """Extended-real integral of ``f`` against ``m``.

    Points outside the support of ``m`` contribute nothing regardless of
    ``f``. Positive and negative parts are summed separately; a part above
    ``OVERFLOW`` counts as infinite. Returns ``UNDEFINED`` if both diverge.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (len(m.grid),):
        raise GridMismatchError(
            f"function has shape {f.shape}, measure grid has {len(m.grid)} points")
    return _integrate_masked(f, m.log_density + m.grid.log_weights)


def _integrate_masked(f: np.ndarray, log_w: np.ndarray):
    live = np.isfinite(log_w)
    if np.any(np.isnan(f[live])):
        raise ValueError("integrand is NaN on the support")
    return extended_sum(f[live], np.exp(log_w[live]))


def extended_sum(values: np.ndarray, masses: np.ndarray):
    """Sum of ``values * masses`` with separate positive/negative accounting.

    Entries with zero mass contribute nothing, even when infinite.
    """
    if np.any(masses == 0):
        keep = masses != 0
        values, masses = values[keep], masses[keep]
    pos_inf = np.any(values == np.inf)
    neg_inf = np.any(values == -np.inf)
    finite = np.isfinite(values)
    with np.errstate(over="ignore"):
        prod = values[finite] * masses[finite]
    pos = float(np.sum(prod[prod > 0]))
    neg = float(-np.sum(prod[prod < 0]))
    pos_div = pos_inf or not pos <= OVERFLOW
    neg_div = neg_inf or not neg <= OVERFLOW
    if pos_div and neg_div:
        return UNDEFINED
    if pos_div:
        return math.inf
    if neg_div:
        return -math.inf
    return pos - neg


def ext_add(a, b):
    """Extended-real addition; ``inf + -inf`` is ``UNDEFINED``."""
    if a is UNDEFINED or b is UNDEFINED:
        return UNDEFINED
    if math.isinf(a) and math.isinf(b) and (a > 0) != (b > 0):
        return UNDEFINED
    return a + b


def log_ratio(la: np.ndarray, lb: np.ndarray) -> np.ndarray:
    """Pointwise ``log(a / b)`` from log values, with ``log(0/0) := 0``."""
    both_zero = (la == -np.inf) & (lb == -np.inf)
    with np.errstate(invalid="ignore"):
        out = la - lb
    out[both_zero] = 0.0
    return out


# ---------------------------------------------------------------------------
# mixtures and families


@dataclass(frozen=True, eq=False)
class MixtureWeights:
    """Finitely supported probability vector over family member indices."""

    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = _frozen(self.indices, dtype=np.int64)
        w = _frozen(self.weights)
        if idx.shape != w.shape or idx.ndim != 1 or idx.size == 0:
            raise ValueError("indices and weights must be nonempty 1-d arrays of equal length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("mixture weights must be nonnegative")
        if abs(float(np.sum(w)) - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {float(np.sum(w))!r}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @classmethod
    def single(cls, i: int) -> "MixtureWeights":
        return cls([i], [1.0])

    @classmethod
    def uniform(cls, n: int) -> "MixtureWeights":
        return cls(np.arange(n), np.full(n, 1.0 / n))

    @classmethod
    def from_dense(cls, w, drop_below: float = 0.0) -> "MixtureWeights":
        w = np.asarray(w, dtype=float)
        keep = np.flatnonzero(w > drop_below)
        ww = w[keep]
        return cls(keep, ww / ww.sum())

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        np.add.at(out, self.indices, self.weights)
        return out


class ParametricFamily:
    """Indexed family of measures on one grid; generates its convex hull.

    Members are stored either as a dense matrix of log-densities or, for
    families of atoms such as extreme-point sets on huge counting grids, as a
    sparse matrix of linear densities.
    """

    def __init__(self, grid: Grid, log_density=None, labels: Sequence | None = None,
                 *, sparse_density=None, probability_family: bool = False,
                 truncated: bool = False, name: str = ""):
        if (log_density is None) == (sparse_density is None):
            raise ValueError("give exactly one of log_density or sparse_density")
        self.grid = grid
        self.name = name
        self.truncated = truncated
        if log_density is not None:
            ld = _frozen(np.atleast_2d(np.asarray(log_density, dtype=float)))
            if ld.shape[1] != len(grid):
                raise GridMismatchError("member log-densities do not match grid")
            if np.any(np.isnan(ld)) or np.any(ld == np.inf):
                raise ValueError("member log-densities must be finite or -inf")
            self._log = ld
            self._sparse = None
            self.size = ld.shape[0]
            s = ld + grid.log_weights
            with np.errstate(divide="ignore"):
                self.masses = _frozen(np.exp(special.logsumexp(s, axis=1)))
        else:
            sp = sparse.csr_array(sparse_density, dtype=float)
            if sp.shape[1] != len(grid):
                raise GridMismatchError("sparse member densities do not match grid")
            if sp.nnz and sp.data.min() < 0:
                raise ValueError("densities must be nonnegative")
            self._log = None
            self._sparse = sp
            self.size = sp.shape[0]
            self.masses = _frozen(sp @ grid.weights)
        if self.size == 0:
            raise ValueError("empty family")
        self.labels = list(labels) if labels is not None else list(range(self.size))
        if len(self.labels) != self.size:
            raise ValueError("one label per member required")
        self.probability_family = probability_family
        if probability_family and np.any(np.abs(self.masses - 1.0) > PROB_TOL):
            raise ValueError("probability family has a member with mass != 1")

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"ParametricFamily({self.name or 'unnamed'}, size={self.size}, grid={len(self.grid)})"

    @property
    def is_sparse(self) -> bool:
        return self._sparse is not None

    def log_density_matrix(self, columns=None) -> np.ndarray:
        """Log-densities of all members, optionally restricted to grid columns."""
        if self._log is not None:
            return self._log if columns is None else self._log[:, columns]
        sub = self._sparse if columns is None else self._sparse[:, columns]
        d = sub.toarray()
        with np.errstate(divide="ignore"):
            return np.log(d)

    def member(self, i: int) -> GridMeasure:
        if not 0 <= i < self.size:
            raise IndexError(f"member index {i} out of range for family of size {self.size}")
        if self._log is not None:
            ld = self._log[i]
        else:
            row = self._sparse[[i], :].toarray()[0]
            with np.errstate(divide="ignore"):
                ld = np.log(row)
        return GridMeasure(self.grid, ld, probability=self.probability_family,
                           truncated=self.truncated, label=self.labels[i])

    def members(self):
        return [self.member(i) for i in range(self.size)]

    def integrate_each(self, log_f) -> np.ndarray:
        """``∫ f dQ_θ`` for every member, with ``f`` given as log values.

        ``log_f`` may hold ``+inf``; an atom of positive mass there makes that
        member's integral infinite, while points outside a member's support
        contribute nothing.
        """
        log_f = np.asarray(log_f, dtype=float)
        if log_f.shape != (len(self.grid),):
            raise GridMismatchError("function does not match family grid")
        lw = self.grid.log_weights
        if self._log is not None:
            s = self._log + (log_f + lw)[None, :]
            live = np.isfinite(self._log)
            bad = live & (log_f == np.inf)[None, :]
            s = np.where(live, s, -np.inf)
            s = np.where(bad, -np.inf, s)
            with np.errstate(divide="ignore", over="ignore"):
                out = np.exp(special.logsumexp(s, axis=1))
            out[np.any(bad, axis=1)] = np.inf
            return out
        sp = self._sparse.tocoo()
        pos = sp.data > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            s = log_f[sp.col] + lw[sp.col] + np.log(sp.data)
        vals = np.where(pos, np.exp(np.where(pos, s, -np.inf)), 0.0)
        vals[(log_f[sp.col] == np.inf) & pos] = np.inf
        out = np.zeros(self.size)
        np.add.at(out, sp.row, vals)
        return out

    def with_member(self, m: GridMeasure, label=None) -> "ParametricFamily":
        if m.grid != self.grid:
            raise GridMismatchError("member grid differs from family grid")
        if self._log is None:
            raise TypeError("cannot append to a sparse family")
        return ParametricFamily(self.grid, np.vstack([self._log, m.log_density]),
                                self.labels + [label], probability_family=self.probability_family
                                and m.probability, truncated=self.truncated, name=self.name)


def mix(family: ParametricFamily, w: MixtureWeights) -> GridMeasure:
    """Pointwise mixture ``sum_i w_i q_i``."""
    if np.any(w.indices < 0) or np.any(w.indices >= family.size):
        raise IndexError("mixture index out of range")
    if family.is_sparse:
        dense_w = w.dense(family.size)
        d = dense_w @ family._sparse
        m = GridMeasure.from_density(family.grid, np.asarray(d).ravel(),
                                     truncated=family.truncated)
        return m
    with np.errstate(divide="ignore"):
        lw = np.log(w.weights)
    ld = special.logsumexp(family._log[w.indices] + lw[:, None], axis=0)
    prob = family.probability_family
    return GridMeasure(family.grid, ld, probability=prob, truncated=family.truncated)


def mix_log(log_members: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Log-density of a mixture given a member log-density matrix."""
    with np.errstate(divide="ignore"):
        lw = np.log(weights)
    return special.logsumexp(log_members + lw[:, None], axis=0)


# ---------------------------------------------------------------------------
# built-in families


@dataclass(frozen=True)
class FamilySpec:
    """Descriptor of a built-in family.

    ``params`` is a list of parameter tuples (or scalars). For continuous
    families ``window``/``points`` define the quadrature grid; for discrete
    ones ``support`` is the counting-grid size.
    """

    name: str
    params: tuple = ()
    window: tuple = DEFAULT_WINDOW
    points: int = DEFAULT_POINTS
    support: int = DEFAULT_SUPPORT
    mass_tol: float = FAMILY_MASS_TOL


HEAVY_TAILED = {"cauchy"}


def _gaussian_log(x, loc, scale):
    return stats.norm.logpdf(x, loc=loc, scale=scale)


def _cauchy_log(x, loc, scale):
    return stats.cauchy.logpdf(x, loc=loc, scale=scale)


def _as_pairs(params, default_scale=1.0):
    out = []
    for p in params:
        if np.ndim(p) == 0:
            out.append((float(p), default_scale))
        else:
            loc, scale = p
            out.append((float(loc), float(scale)))
    return out


def make_family(spec: FamilySpec, grid: Grid | None = None) -> ParametricFamily:
    """Build a built-in family with every member normalized on its grid.

    Light-tailed continuous families must already carry mass within
    ``spec.mass_tol`` of one before renormalization, which guards against
    windows that cut off real mass. Heavy-tailed families (Cauchy) are
    renormalized regardless and flagged ``truncated``.
    """
    name = spec.name.lower()
    if name == "gauss-pair":
        spec = FamilySpec("gaussian", ((-1.0, 1.0), (1.0, 1.0)), spec.window, spec.points,
                          spec.support, spec.mass_tol)
        name = "gaussian"
    params = list(spec.params)
    if not params:
        raise ValueError(f"family {spec.name!r} needs a nonempty parameter list")

    if name in ("gaussian", "normal", "cauchy"):
        grid = grid or quadrature_grid(spec.window[0], spec.window[1], spec.points)
        logpdf = _cauchy_log if name == "cauchy" else _gaussian_log
        pairs = _as_pairs(params)
        rows = np.array([logpdf(grid.points, loc, sc) for loc, sc in pairs])
        return _normalized_family(grid, rows, pairs, spec, heavy=name in HEAVY_TAILED)
    if name == "geometric":
        grid = grid or counting_grid(spec.support, start=0)
        thetas = [float(t) for t in params]
        if any(not 0 <= t < 1 for t in thetas):
            raise ValueError("geometric parameters must lie in [0, 1)")
        n = grid.points
        rows = []
        for t in thetas:
            with np.errstate(divide="ignore", invalid="ignore"):
                lt = n * math.log(t) if t > 0 else np.where(n == 0, 0.0, -np.inf)
            rows.append(lt + math.log1p(-t))
        return _normalized_family(grid, np.array(rows), thetas, spec, heavy=False)
    if name == "bernoulli":
        grid = grid or counting_grid(2, start=0)
        thetas = [float(t) for t in params]
        if any(not 0 <= t <= 1 for t in thetas):
            raise ValueError("Bernoulli parameters must lie in [0, 1]")
        if not np.array_equal(grid.points, [0.0, 1.0]):
            raise ValueError("Bernoulli family lives on the grid {0, 1}")
        with np.errstate(divide="ignore"):
            rows = np.array([[math.log1p(-t) if t < 1 else -np.inf,
                              math.log(t) if t > 0 else -np.inf] for t in thetas])
        return ParametricFamily(grid, rows, thetas, probability_family=True, name="bernoulli")
    if name in ("point-mass", "delta"):
        grid = grid or counting_grid(spec.support, start=1)
        idx = [grid.index_of(float(i)) for i in params]
        d = sparse.csr_array((np.ones(len(idx)), (np.arange(len(idx)), idx)),
                             shape=(len(idx), len(grid)))
        return ParametricFamily(grid, labels=[int(i) for i in params], sparse_density=d,
                                probability_family=True, name="point-mass")
    raise ValueError(f"unknown family {spec.name!r}")


def _normalized_family(grid, rows, labels, spec, heavy):
    masses = np.exp(special.logsumexp(rows + grid.log_weights[None, :], axis=1))
    if not heavy:
        worst = int(np.argmax(np.abs(masses - 1.0)))
        if abs(masses[worst] - 1.0) > spec.mass_tol:
            raise ValueError(
                f"member {labels[worst]} of {spec.name!r} has mass {masses[worst]:.8g} on the "
                f"grid; widen the window or support")
    rows = rows - np.log(masses)[:, None]
    fam = ParametricFamily(grid, rows, labels, probability_family=True,
                           truncated=heavy or grid.kind == "quadrature", name=spec.name)
    fam.raw_masses = _frozen(masses)
    return fam


def make_measure(name: str, param, grid: Grid | None = None, **kw) -> GridMeasure:
    """Single normalized member of a built-in family."""
    fam = make_family(FamilySpec(name, (param,), **kw), grid)
    raw = getattr(fam, "raw_masses", None)
    return replace(fam.member(0), raw_mass=float(raw[0]) if raw is not None else None)


def bernoulli(theta: float) -> GridMeasure:
    return make_measure("bernoulli", theta)


def geometric(theta: float, support: int = DEFAULT_SUPPORT) -> GridMeasure:
    return make_measure("geometric", theta, support=support)


def point_mass(grid: Grid, x: float, mass: float = 1.0) -> GridMeasure:
    ld = np.full(len(grid), -np.inf)
    ld[grid.index_of(x)] = math.log(mass) - grid.log_weights[grid.index_of(x)]
    return GridMeasure(grid, ld, probability=abs(mass - 1.0) <= PROB_TOL)
