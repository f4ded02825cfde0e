import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from shift_audit.densities import DiscreteDensity, GridDensity, SampleSet
from shift_audit.hypotheses import ZERO_ONE, Hypothesis, Predictor, Representation, risk
from shift_audit.oracle import DiscreteInstance, oracle_lemma1
from shift_audit.synthetic import make_discrete_problem, sample
from shift_audit.weighting import (
    WeightConfig,
    lemma1_bound,
    truncate,
    truncated_weight,
    weighted_risk,
    weights_csv,
)

from conftest import random_simplex


@st.composite
def instances(draw):
    k = draw(st.integers(1, 7))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    M = draw(st.floats(0.1, 4.0))
    return (
        random_simplex(r, k),
        random_simplex(r, k),
        r.uniform(0, M, k),
        M,
        draw(st.floats(1e-3, 1.0)),
    )


def unit_density(values):
    return GridDensity([[0.0, float(len(values))]], (len(values),), values)


class TestTruncatedWeight:
    def config(self, p, q, eps):
        return WeightConfig(eps, unit_density(p), unit_density(q))

    def test_ratio_branch(self):
        cfg = self.config([0.5, 0.5], [0.25, 0.75], 0.3)
        assert truncated_weight(cfg, [0.5]) == 0.5

    def test_unit_branch(self):
        cfg = self.config([0.1, 0.9], [0.9, 0.1], 0.3)
        assert truncated_weight(cfg, [0.5]) == 1.0

    def test_equal_densities(self):
        cfg = self.config([0.4, 0.6], [0.4, 0.6], 0.3)
        assert_allclose(cfg.weights(np.array([[0.5], [1.5]])), 1.0)

    def test_threshold_inclusive(self):
        assert truncate(0.3, 0.6, 0.3) == 2.0

    def test_zero_source_density(self):
        assert truncate(0.0, 0.6, 0.3) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            WeightConfig(0.1, unit_density([0.5, 0.5]), GridDensity([[0, 1], [0, 1]], (1, 1), [[1.0]]))

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            WeightConfig(0.0, unit_density([1.0]), unit_density([1.0]))

    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1.0))
    def test_bounded(self, seed, eps):
        r = np.random.default_rng(seed)
        p, q = random_simplex(r, 6), random_simplex(r, 6)
        w = truncate(p, q, eps)
        assert np.all(w >= 0)
        assert np.all(w <= max(1.0, 1.0 / eps) + 1e-12)


class TestWeightedRisk:
    @pytest.fixture
    def labeled(self):
        return SampleSet([[0.2], [0.7], [1.4], [1.9]], [0, 1, 1, 0])

    def test_unit_weights_give_empirical_risk(self, labeled):
        h = Hypothesis(Representation(), Predictor.threshold(0.5))
        r = weighted_risk(labeled, np.ones(4), h, ZERO_ONE)
        assert r.value == 0.25 and r.weight_second_moment == 1.0 and r.n == 4

    def test_perfect_hypothesis(self):
        s = SampleSet([[0.2], [0.7]], [0, 1])
        h = Hypothesis(Representation(), Predictor.threshold(0.5))
        assert weighted_risk(s, [3.0, 7.0], h, ZERO_ONE).value == 0.0

    def test_one_over_n_normalization(self, labeled):
        h = Hypothesis(Representation(), Predictor.constant(1))
        r = weighted_risk(labeled, [1.0, 1.0, 1.0, 3.0], h, ZERO_ONE)
        # losses are 1, 0, 0, 1
        assert r.value == pytest.approx((1.0 + 3.0) / 4.0)
        assert r.weight_second_moment == pytest.approx(12.0 / 4.0)

    def test_missing_labels(self):
        h = Hypothesis(Representation(), Predictor.constant(1))
        with pytest.raises(ValueError):
            weighted_risk(SampleSet([[0.0]]), [1.0], h, ZERO_ONE)

    @pytest.mark.parametrize("w", [[1.0, -1.0, 1.0, 1.0], [1.0, np.inf, 1.0, 1.0], [1.0, 1.0]])
    def test_bad_weights(self, labeled, w):
        h = Hypothesis(Representation(), Predictor.constant(1))
        with pytest.raises(ValueError):
            weighted_risk(labeled, w, h, ZERO_ONE)

    def test_matches_target_risk(self):
        p = [0.3, 0.2, 0.25, 0.25]
        q = [0.2, 0.3, 0.2, 0.3]
        prob = make_discrete_problem(p, q, [0.1, 0.8, 0.3, 0.9])
        h = Hypothesis(Representation(), Predictor.threshold(1.0))
        exact = risk(h, prob, "target")
        src = sample(prob, "source", 10_000, 0)
        w = WeightConfig(0.01, prob.source, prob.target).weights(src.points)
        est = weighted_risk(src, w, h, ZERO_ONE).value
        assert abs(est - exact) <= 3 * np.sqrt(exact * (1 - exact) / 10_000)


class TestLemma1:
    def test_worked_equality(self):
        rep = lemma1_bound([0.5, 0.5, 0.0], [0.25, 0.25, 0.5], [0, 1, 1], 1.0, 0.1)
        assert rep.lhs == pytest.approx(0.75, abs=1e-15)
        assert rep.weighted_term == pytest.approx(0.25, abs=1e-15)
        assert rep.support_term == pytest.approx(0.5, abs=1e-15)
        assert rep.rhs == pytest.approx(rep.lhs, abs=1e-15)

    def test_equal_densities_equality(self, rng):
        p = random_simplex(rng, 5, zero_prob=0.0)
        ell = rng.uniform(size=5)
        rep = lemma1_bound(p, p, ell, 1.0, p.max())
        assert rep.support_term == 0.0
        assert rep.rhs == pytest.approx(rep.lhs, abs=1e-12)

    def test_loss_out_of_range(self):
        with pytest.raises(ValueError):
            lemma1_bound([0.5, 0.5], [0.5, 0.5], [0.0, 1.5], 1.0, 0.1)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            lemma1_bound([0.5, 0.5], [1.0], [0.0, 0.0], 1.0, 0.1)
        with pytest.raises(ValueError):
            lemma1_bound([0.5, 0.5], [0.5, 0.5], [0.0], 1.0, 0.1)

    def test_accepts_density_objects(self):
        a = lemma1_bound(DiscreteDensity([0.5, 0.5]), DiscreteDensity([0.1, 0.9]), [0, 1], 1.0, 0.2)
        b = lemma1_bound([0.5, 0.5], [0.1, 0.9], [0, 1], 1.0, 0.2)
        assert a == b

    @given(instances())
    def test_sound_and_matches_oracle(self, inst):
        p, q, ell, M, eps = inst
        rep = lemma1_bound(p, q, ell, M, eps)
        assert rep.lhs <= rep.rhs + 1e-12
        ref = oracle_lemma1(DiscreteInstance(tuple(p), tuple(q), tuple(ell), M), eps)
        assert rep.lhs == pytest.approx(ref["lhs"], abs=1e-12)
        assert rep.rhs == pytest.approx(ref["rhs"], abs=1e-12)

    def test_small_eps_limit(self, rng):
        p = random_simplex(rng, 6, zero_prob=0.0)
        q = random_simplex(rng, 6, zero_prob=0.0)
        ell = rng.uniform(size=6)
        rep = lemma1_bound(p, q, ell, 1.0, 0.5 * p.min())
        assert rep.support_term == 0.0
        assert rep.rhs == pytest.approx(rep.lhs, abs=1e-12)

    def test_eps_tradeoff(self, rng):
        p = random_simplex(rng, 8)
        q = random_simplex(rng, 8)
        ell = rng.uniform(size=8)
        grid = np.linspace(0.01, 1.0, 40)
        support = [lemma1_bound(p, q, ell, 1.0, e).support_term for e in grid]
        ratio_states = [int(np.sum(p >= e)) for e in grid]
        assert np.all(np.diff(support) >= -1e-15)
        assert np.all(np.diff(ratio_states) <= 0)


def test_weights_csv():
    text = weights_csv([1.0, 0.5])
    assert text == "weight\n1.0\n0.5\n"
