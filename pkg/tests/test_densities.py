import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from shift_audit.densities import (
    DiscreteDensity,
    GridDensity,
    KdeDensity,
    SampleSet,
    density_from_dict,
    density_quantile,
    evaluate_density,
    fit_histogram,
    fit_kde,
    integrate,
    silverman_bandwidth,
)
from shift_audit.synthetic import make_example1


@pytest.fixture
def unit_square():
    return GridDensity.from_weights([[0, 1], [0, 1]], (10, 10), np.ones((10, 10)))


class TestTypes:
    def test_discrete_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            DiscreteDensity([0.5, 0.6])

    def test_discrete_rejects_negative(self):
        with pytest.raises(ValueError):
            DiscreteDensity([1.5, -0.5])

    def test_discrete_sum_tolerance(self):
        DiscreteDensity([0.5, 0.5 + 5e-13])

    def test_grid_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            GridDensity([[0, 1]], (2,), [1.0, 2.0])

    def test_grid_rejects_negative(self):
        with pytest.raises(ValueError):
            GridDensity([[0, 1]], (2,), [2.5, -0.5])

    def test_kde_rejects_bad_bandwidth(self):
        with pytest.raises(ValueError):
            KdeDensity([[0.0]], 0.0)

    def test_sampleset_labels(self):
        with pytest.raises(ValueError):
            SampleSet([[0.0], [1.0]], [0, 2])
        with pytest.raises(ValueError):
            SampleSet([[0.0], [1.0]], [0])
        s = SampleSet([[0.0], [1.0]], [0, 1], "source")
        assert s.n == 2 and s.dim == 1 and s.labeled

    def test_sampleset_domain_tag(self):
        with pytest.raises(ValueError):
            SampleSet([[0.0]], domain="elsewhere")

    def test_immutable(self, unit_square):
        with pytest.raises(ValueError):
            unit_square.cell_values[0, 0] = 3.0

    @pytest.mark.parametrize(
        "density",
        [
            DiscreteDensity([0.2, 0.8]),
            GridDensity([[0, 2]], (2,), [0.25, 0.75]),
            KdeDensity([[0.0, 1.0], [2.0, 3.0]], [0.5, 1.5]),
        ],
    )
    def test_json_roundtrip(self, density):
        again = density_from_dict(density.to_dict())
        probe = np.array([[0.0], [1.0]]) if density.dim == 1 else np.array([[0.0, 1.0], [1.0, 2.0]])
        assert_allclose(again.evaluate(probe), density.evaluate(probe))


class TestEvaluate:
    def test_uniform_square_interior(self, unit_square):
        assert evaluate_density(unit_square, [0.3, 0.7]) == pytest.approx(1.0)

    def test_discrete_lookup(self):
        assert evaluate_density(DiscreteDensity([0.25, 0.75]), 0) == 0.25

    def test_discrete_out_of_range_is_zero(self):
        assert evaluate_density(DiscreteDensity([0.25, 0.75]), 5) == 0.0

    def test_kde_two_points(self):
        kde = KdeDensity([[0.0], [2.0]], 1.0)
        expected = 0.5 * 2 * (2 * np.pi) ** -0.5 * np.exp(-0.5)
        assert evaluate_density(kde, 1.0) == pytest.approx(expected, rel=1e-14)

    def test_outside_box_is_zero(self, unit_square):
        assert evaluate_density(unit_square, [1.5, 0.5]) == 0.0

    def test_dimension_mismatch(self, unit_square):
        with pytest.raises(ValueError):
            evaluate_density(unit_square, [0.1, 0.2, 0.3])

    def test_boundary_goes_to_lower_cell(self):
        g = GridDensity([[0, 2]], (2,), [0.25, 0.75])
        assert g.flat_index([[1.0]])[0] == 0
        assert g.flat_index([[0.0]])[0] == 0
        assert g.flat_index([[2.0]])[0] == 1
        assert evaluate_density(g, 1.0) == 0.25

    def test_nonnegative_on_random_probes(self, rng):
        pts = rng.uniform(-3, 3, (10_000, 2))
        kde = fit_kde(rng.normal(size=(50, 2)))
        grid = make_example1(20).target
        assert np.all(kde.evaluate(pts) >= 0)
        assert np.all(grid.evaluate(pts) >= 0)


class TestIntegrate:
    def test_whole_box(self, unit_square):
        assert integrate(unit_square, [[0, 1], [0, 1]]) == pytest.approx(1.0, abs=1e-9)

    def test_half_box(self, unit_square):
        assert integrate(unit_square, [[0, 0.5], [0, 1]]) == pytest.approx(0.5, abs=1e-12)

    def test_partial_cells(self, unit_square):
        assert integrate(unit_square, [[0.03, 0.58], [0.1, 0.3]]) == pytest.approx(0.55 * 0.2, abs=1e-12)

    def test_example1_upper_right_quadrant(self):
        assert integrate(make_example1().target, [[0, 1], [0, 1]]) == pytest.approx(0.5, abs=1e-12)

    def test_zero_volume_region(self, unit_square):
        with pytest.raises(ValueError):
            integrate(unit_square, [[0.5, 0.5], [0, 1]])

    def test_partition_sums_to_one(self, rng):
        g = GridDensity.from_weights([[0, 3], [-1, 1]], (7, 5), rng.random((7, 5)))
        xs = np.sort(np.concatenate([[0, 3], rng.uniform(0, 3, 4)]))
        ys = np.sort(np.concatenate([[-1, 1], rng.uniform(-1, 1, 3)]))
        total = sum(
            integrate(g, [[xs[i], xs[i + 1]], [ys[j], ys[j + 1]]])
            for i in range(len(xs) - 1)
            for j in range(len(ys) - 1)
        )
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_discrete_as_grid(self):
        d = DiscreteDensity([0.1, 0.2, 0.7])
        assert integrate(d, [[1, 3]]) == pytest.approx(0.9)


class TestMarginal:
    def test_marginal_of_example1(self):
        t = make_example1(20).target
        for axis in (0, 1):
            m = t.marginal((axis,))
            assert_allclose(m.cell_values, 0.5, atol=1e-12)

    def test_marginal_axis_order(self, rng):
        g = GridDensity.from_weights([[0, 1], [0, 2], [0, 3]], (2, 3, 4), rng.random((2, 3, 4)))
        m = g.marginal((2, 0))
        assert m.resolution == (4, 2)
        assert_allclose(m.cell_masses().sum(), 1.0)


class TestKde:
    def test_silverman_formula(self, rng):
        x = rng.normal(size=(1000, 1))
        kde = fit_kde(x)
        sd = x.std(ddof=1)
        assert kde.bandwidth[0] == pytest.approx((4 / 3) ** 0.2 * sd * 1000 ** -0.2, rel=1e-12)
        # the usual rounded constant
        assert kde.bandwidth[0] == pytest.approx(1.06 * sd * 1000 ** -0.2, rel=0.01)

    def test_single_repeated_point_fixed_bandwidth(self):
        kde = fit_kde(np.full((5, 1), 2.0), bandwidth=0.5)
        x = np.array([[2.0], [2.5]])
        bump = np.exp(-0.5 * ((x[:, 0] - 2.0) / 0.5) ** 2) / (0.5 * np.sqrt(2 * np.pi))
        assert_allclose(kde.evaluate(x), bump, rtol=1e-14)

    def test_zero_variance_silverman(self):
        with pytest.raises(ValueError):
            fit_kde(np.full((5, 1), 2.0))

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_kde(np.zeros((0, 1)))

    def test_too_few_for_silverman(self):
        with pytest.raises(ValueError):
            silverman_bandwidth(np.zeros((1, 1)))

    def test_positive_at_support_points(self, rng):
        x = rng.normal(size=(200, 2))
        assert np.all(fit_kde(x).evaluate(x) > 0)

    def test_integrates_to_one(self, rng):
        kde = fit_kde(rng.normal(size=(100, 1)))
        grid = np.linspace(-10, 10, 20_001)
        assert np.trapezoid(kde.evaluate(grid[:, None]), grid) == pytest.approx(1.0, abs=1e-8)

    def test_deterministic(self, rng):
        x = rng.normal(size=(50, 2))
        assert_allclose(fit_kde(x).evaluate(x), fit_kde(x.copy()).evaluate(x), rtol=0, atol=0)


class TestHistogram:
    def test_normalized(self, rng):
        h = fit_histogram(rng.normal(size=(500, 2)), bins=20)
        assert h.cell_masses().sum() == pytest.approx(1.0)

    def test_every_sample_counted(self, rng):
        x = rng.uniform(size=(300, 1))
        h = fit_histogram(x, bins=10)
        assert_allclose(h.cell_masses().sum(), 1.0)
        assert np.all(h.evaluate(x) > 0)


class TestQuantile:
    def test_uniform(self, unit_square, rng):
        assert density_quantile(unit_square, rng.uniform(size=(30, 2)), 0.5) == pytest.approx(1.0)

    def test_discrete_order_statistic(self):
        assert density_quantile(DiscreteDensity([0.1, 0.9]), np.array([[0.0], [1.0]]), 0.25) == 0.1

    def test_matches_sort(self, rng):
        x = rng.normal(size=(1000, 1))
        kde = fit_kde(x)
        values = np.sort(kde.evaluate(x))
        assert density_quantile(kde, x, 0.05) == values[int(np.ceil(0.05 * 1000)) - 1]

    def test_empty_probes(self, unit_square):
        with pytest.raises(ValueError):
            density_quantile(unit_square, np.zeros((0, 2)), 0.5)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=12).filter(lambda w: sum(w) > 1e-3))
def test_discrete_grid_agree(weights):
    w = np.asarray(weights) / np.sum(weights)
    w = w / w.sum()
    if abs(w.sum() - 1.0) > 1e-12:
        return
    d = DiscreteDensity(w)
    g = d.as_grid()
    states = np.arange(len(w))[:, None].astype(float)
    assert_allclose(g.evaluate(states + 0.5), d.evaluate(states))
    assert_allclose(g.cell_masses(), d.cell_masses())
