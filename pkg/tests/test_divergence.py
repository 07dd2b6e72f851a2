import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uripr.divergence import (
    DIVERGED,
    EXACT,
    description_gain,
    g_transform,
    gain_to_hull,
    gamma_jensen,
    itakura_saito,
    kl,
    log_cosh,
    mp_metric,
    mp_metric_sq,
    three_point_bound,
)
from uripr.measures import (
    FamilySpec,
    GridMeasure,
    MixtureWeights,
    bernoulli,
    counting_grid,
    geometric,
    make_family,
    make_measure,
    mix,
    point_mass,
    sparse_counting_grid,
)
from uripr.subprob import harmonic_generators, two_point


def naive_g(t):
    return 2 * t + 2 * math.log(1 + math.sqrt(1 - math.exp(-2 * t)))


class TestKL:
    def test_bernoulli(self):
        oracle = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert kl(bernoulli(0.5), bernoulli(0.25)) == pytest.approx(oracle, abs=1e-15)
        assert kl(bernoulli(0.5), bernoulli(0.25)) == pytest.approx(0.1438410, abs=1e-7)

    def test_self(self):
        q = bernoulli(0.3)
        assert kl(q, q) == 0.0

    def test_geometric_against_partial_sums(self):
        d = kl(geometric(0.5, 200), geometric(0.25, 200))
        partial = sum(0.5 ** (n + 1) * math.log(0.5 ** (n + 1) / (0.25 ** n * 0.75)) for n in range(200))
        assert d == pytest.approx(math.log(4 / 3), abs=1e-9)
        assert d == pytest.approx(partial, abs=1e-9)

    def test_finite_measure_mass_term(self):
        P = bernoulli(0.4)
        assert kl(P, P.scaled(2.0)) == pytest.approx(1 - math.log(2), abs=1e-15)

    def test_not_absolutely_continuous(self):
        g = counting_grid(3)
        P = GridMeasure.from_density(g, [0.5, 0.5, 0.0])
        Q = GridMeasure.from_density(g, [1.0, 0.0, 0.0])
        assert kl(P, Q) == math.inf
        assert kl(Q, P) == pytest.approx(math.log(2))


class TestDescriptionGain:
    def test_same_measure(self):
        P, Q = bernoulli(0.2), bernoulli(0.7)
        assert description_gain(P, Q, Q) == 0.0

    def test_cauchy_gaussian_zero_gain(self, cauchy, gauss_pair):
        G = make_measure("gaussian", (0.0, 1.0), gauss_pair.grid)
        assert description_gain(cauchy, G, G) == 0.0
        # truncated KL is large and grows with the window
        assert kl(cauchy, G) > 10
        assert cauchy.truncated

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    def test_difference_of_divergences(self, a, b, c):
        P, Q, Qp = bernoulli(a), bernoulli(b), bernoulli(c)
        assert abs(description_gain(P, Q, Qp) - (kl(P, Q) - kl(P, Qp))) <= 1e-10


class TestGainToHull:
    def test_singleton(self):
        fam = make_family(FamilySpec("bernoulli", (0.3,)))
        rep = gain_to_hull(bernoulli(0.6), fam.member(0), fam)
        assert rep.value == pytest.approx(0.0, abs=1e-12)
        assert rep.status == EXACT

    def test_countable_example_n10(self):
        # dense prefix plus one far atom: the truncated hull's divergence is ln 2 + O(1e-9)
        grid = sparse_counting_grid(list(range(1, 101)) + [10 ** 9])
        fam = harmonic_generators(grid)
        P = point_mass(grid, 1.0)
        rep = gain_to_hull(P, two_point(grid, 10), fam)
        j = 10 ** 9
        oracle = math.log(18 / 8) + math.log((j - 2) / (2 * j - 2))
        assert rep.value == pytest.approx(oracle, abs=1e-6)
        assert rep.value == pytest.approx(math.log(9 / 8), abs=1e-6)

    def test_estat_reference_has_no_gain(self, bern21):
        P = bernoulli(0.5)
        rep = gain_to_hull(P, P, bern21)
        assert rep.value <= 1e-7

    def test_dominates_explicit_mixtures(self, bern21, rng):
        P, Q = bernoulli(0.62), bernoulli(0.4)
        rep = gain_to_hull(P, Q, bern21)
        for _ in range(50):
            w = MixtureWeights.from_dense(rng.dirichlet(np.ones(bern21.size)))
            assert rep.value >= description_gain(P, Q, mix(bern21, w)) - 1e-9

    def test_uniform_mixture_bound(self, bern21, gauss_pair, cauchy):
        for fam, P in ((bern21, bernoulli(0.9)), (gauss_pair, cauchy)):
            Q = mix(fam, MixtureWeights.uniform(fam.size))
            assert gain_to_hull(P, Q, fam).value <= math.log(fam.size) + 1e-8

    def test_report_invariants(self, bern21):
        P = bernoulli(0.7)
        Q = bernoulli(0.45)
        rep = gain_to_hull(P, Q, bern21)
        assert rep.status == EXACT
        assert rep.certified_upper >= rep.value
        back = description_gain(P, Q, mix(bern21, rep.attained_at))
        assert back == pytest.approx(rep.value, abs=1e-8)
        rec = json.loads(rep.to_json())
        assert set(rec) == {"value", "status", "witness_indices", "witness_weights", "certified_upper"}

    def test_zero_reference_on_support(self, bern21):
        g = bern21.grid
        Q = GridMeasure.from_density(g, [1.0, 0.0])
        rep = gain_to_hull(bernoulli(0.5), Q, bern21)
        assert rep.value == math.inf and rep.status == DIVERGED

    def test_divergence_detection(self, cauchy, gauss_pair):
        grid = gauss_pair.grid
        narrow = make_measure("gaussian", (0.0, 0.5), grid)
        fam = make_family(FamilySpec("cauchy", ((0.0, 1.0),)), grid).with_member(narrow)
        rep = gain_to_hull(cauchy, narrow, fam)
        assert rep.status == DIVERGED and rep.value == math.inf

    def test_iteration_cap_reports_lower_bound(self, bern21):
        rep = gain_to_hull(bernoulli(0.74), bernoulli(0.3), bern21, max_iter=2)
        assert rep.status == "lower_bound"
        assert rep.certified_upper >= rep.value


class TestMetric:
    def test_zero_distance(self, rng):
        P = GridMeasure.from_density(counting_grid(8), rng.random(8))
        f = rng.random(8) + 0.1
        assert mp_metric(f, f, P) == 0.0

    def test_symmetry_and_triangle(self, rng):
        P = GridMeasure.from_density(counting_grid(10), rng.random(10)).normalized()
        worst = math.inf
        for _ in range(1000):
            f, g, h = (np.exp(rng.normal(0, 2, 10)) for _ in range(3))
            assert abs(mp_metric(f, g, P) - mp_metric(g, f, P)) <= 1e-14
            worst = min(worst, mp_metric(f, g, P) + mp_metric(g, h, P) - mp_metric(f, h, P))
        assert worst >= -1e-12

    def test_zero_on_support_rejected(self):
        P = bernoulli(0.5)
        with pytest.raises(ValueError):
            mp_metric(np.array([0.0, 1.0]), np.array([1.0, 1.0]), P)

    def test_log_cosh_is_stable(self):
        x = np.array([0.0, 1e-8, 1.0, 30.0, 800.0])
        lc = log_cosh(x)
        assert lc[1] == pytest.approx(0.5e-16, rel=1e-8)  # naive log(cosh) rounds this to 0
        np.testing.assert_allclose(lc[[0, 2, 3]], np.log(np.cosh(x[[0, 2, 3]])), rtol=1e-12)
        assert lc[-1] == pytest.approx(800 - math.log(2))


class TestItakuraSaito:
    def test_self(self, rng):
        P = bernoulli(0.3)
        f = rng.random(2) + 0.1
        assert itakura_saito(f, f, P) == 0.0

    def test_reduces_to_kl(self):
        for a, b in ((0.5, 0.25), (0.1, 0.8), (0.33, 0.34)):
            P, Q = bernoulli(a), bernoulli(b)
            assert itakura_saito(Q, P, P) == pytest.approx(kl(P, Q), abs=1e-10)

    def test_averaging_identity(self, rng):
        P = GridMeasure.from_density(counting_grid(12), rng.random(12))
        for _ in range(200):
            f, g = np.exp(rng.normal(0, 1.5, 12)), np.exp(rng.normal(0, 1.5, 12))
            m = (f + g) / 2
            rhs = 0.5 * itakura_saito(f, m, P) + 0.5 * itakura_saito(g, m, P)
            assert mp_metric_sq(f, g, P) == pytest.approx(rhs, abs=1e-10)

    def test_nonnegative(self, rng):
        P = GridMeasure.from_density(counting_grid(5), rng.random(5))
        for _ in range(100):
            f, g = np.exp(rng.normal(0, 3, 5)), np.exp(rng.normal(0, 3, 5))
            assert itakura_saito(f, g, P) >= -1e-12


class TestGTransform:
    def test_values(self):
        assert g_transform(0.0) == 0.0
        assert g_transform(0.5) == pytest.approx(naive_g(0.5), abs=1e-14)
        assert g_transform(0.5) == pytest.approx(1 + 2 * math.log(1 + math.sqrt(1 - math.exp(-1))),
                                                 abs=1e-14)
        assert g_transform(0.5) == pytest.approx(2.1700770039, abs=1e-10)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            g_transform(-1e-3)

    @settings(max_examples=500, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_log_difference_identity(self, x, y):
        t = float(gamma_jensen(x, y))
        assert abs(abs(math.log(x) - math.log(y)) - g_transform(t)) <= 1e-10

    def test_shape(self):
        t = np.arange(0, 10.0005, 1e-3)
        g = g_transform(t)
        assert np.all(g - 2 * t >= 0)
        assert np.max(np.diff(g, 2)) <= 1e-9


class TestThreePoint:
    def test_bernoulli(self):
        fam = make_family(FamilySpec("bernoulli", tuple(np.linspace(0.25, 0.75, 201))))
        r = three_point_bound(bernoulli(0.3), bernoulli(0.7), bernoulli(0.5), fam)
        assert r.exact
        assert r.lhs <= r.rhs + 1e-10

    def test_gaussian_pair(self, gauss_pair, cauchy, rng):
        for _ in range(5):
            w1, w2 = rng.dirichlet([1, 1]), rng.dirichlet([1, 1])
            Q1 = mix(gauss_pair, MixtureWeights.from_dense(w1))
            Q2 = mix(gauss_pair, MixtureWeights.from_dense(w2))
            r = three_point_bound(Q1, Q2, cauchy, gauss_pair)
            assert r.exact
            assert r.lhs <= r.rhs + 1e-10

    def test_projection_with_itself(self, bern21):
        P = bernoulli(0.5)
        r = three_point_bound(P, P, P, bern21)
        assert r.lhs == 0.0
        assert r.rhs == pytest.approx(0.0, abs=1e-7)
