"""Support sufficiency divergence and its relatives.

Conventions used throughout:

* thresholds are non-strict, ``p(x) <= eps`` counts as insufficient support;
* ``support_divergence_*(p, q)`` thresholds the *first* argument, which is the
  source density in every bound of this package;
* exact routines work on cell values (density units) for the indicator and on
  cell masses for the expectations, so a :class:`DiscreteDensity` and its
  unit-cell :class:`GridDensity` give identical results.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from shift_audit import _blocks
from shift_audit.densities import (
    DiscreteDensity,
    GridDensity,
    SampleSet,
    density_quantile,
    fit_histogram,
    fit_kde,
)

DEFAULT_EPS_QUANTILE = 0.05


def check_eps(eps):
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"epsilon must be strictly positive, got {eps!r}")
    return eps


@dataclass(frozen=True)
class Kernel:
    """Gaussian RBF kernel ``exp(-|x - y|^2 / (2 sigma^2))``."""

    sigma: float
    family: str = "gaussian"

    def __post_init__(self):
        if not float(self.sigma) > 0:
            raise ValueError("kernel bandwidth must be positive")
        if self.family != "gaussian":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        object.__setattr__(self, "sigma", float(self.sigma))

    def __call__(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.exp(-_blocks.sq_dists(x, y) / (2.0 * self.sigma**2))

    @classmethod
    def median_heuristic(cls, *samples, max_points=1000):
        """Bandwidth = median pairwise distance over the pooled points.

        At most ``max_points`` points (a fixed-seed subsample) enter the median.
        """
        pts = np.vstack([_points(s) for s in samples])
        if len(pts) > max_points:
            pick = np.random.default_rng(0).choice(len(pts), max_points, replace=False)
            pts = pts[np.sort(pick)]
        d = np.sqrt(_blocks.sq_dists(pts, pts))
        med = float(np.median(d[np.triu_indices(len(pts), k=1)]))
        if not med > 0:
            raise ValueError("median pairwise distance is zero; set sigma explicitly")
        return cls(med)

    def to_dict(self):
        return {"family": self.family, "sigma": self.sigma}


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    method: str
    estimator: str = "exact"
    epsilon: Optional[float] = None
    kernel: Optional[Kernel] = None
    variant: Optional[str] = None
    sample_sizes: Optional[tuple] = None

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        n_s, n_t = self.sample_sizes if self.sample_sizes else (None, None)
        return {
            "method": self.method,
            "value": float(self.value),
            "epsilon": self.epsilon,
            "kernel": self.kernel.to_dict() if self.kernel else None,
            "variant": self.variant or self.estimator,
            "estimator": self.estimator,
            "n_source": n_s,
            "n_target": n_t,
        }


def _points(s):
    if isinstance(s, SampleSet):
        return s.points
    pts = np.asarray(s, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def _cells(p, q):
    """(p values, q values, p masses, q masses) for densities on a shared support."""
    if isinstance(p, DiscreteDensity) and isinstance(q, DiscreteDensity):
        if p.size != q.size:
            raise ValueError("densities have different state spaces")
        return p.probabilities, q.probabilities, p.probabilities, q.probabilities
    if isinstance(p, DiscreteDensity):
        p = p.as_grid()
    if isinstance(q, DiscreteDensity):
        q = q.as_grid()
    if not (isinstance(p, GridDensity) and isinstance(q, GridDensity)):
        raise TypeError("exact routines need discrete or grid densities")
    if p.resolution != q.resolution or not np.allclose(p.box, q.box, rtol=0, atol=1e-12):
        raise ValueError("grid densities do not share box and resolution")
    return (
        p.cell_values.ravel(),
        q.cell_values.ravel(),
        p.cell_masses(),
        q.cell_masses(),
    )


def delta_indicator(p_at_x, q_at_x, eps):
    """1 where the target is at least the source and the source is at most eps."""
    eps = check_eps(eps)
    p = np.asarray(p_at_x, dtype=float)
    q = np.asarray(q_at_x, dtype=float)
    out = ((q >= p) & (p <= eps)).astype(int)
    return int(out) if out.ndim == 0 else out


def support_divergence_exact(p, q, eps):
    """E_q[delta] - E_p[delta] summed cell by cell."""
    eps = check_eps(eps)
    pv, qv, pm, qm = _cells(p, q)
    delta = delta_indicator(pv, qv, eps)
    value = float(np.sum((qm - pm) * delta))
    return DivergenceEstimate(
        value=min(max(value, 0.0), 1.0),
        method="support-sufficiency",
        estimator="exact",
        epsilon=eps,
    )


def default_epsilon(source_density, source, target=None, q=DEFAULT_EPS_QUANTILE):
    """Default threshold: a low quantile of the source density at the source points.

    Target points are not used as probes: if they were, target mass off the
    source support would pull the quantile to zero.
    """
    return density_quantile(source_density, _points(source), q)


def fit_plugin(source, target, estimator="kde", bandwidth="silverman", bins=50):
    """Plug-in source and target densities for sample-based estimators."""
    if estimator == "kde":
        return fit_kde(source, bandwidth), fit_kde(target, bandwidth)
    if estimator == "hist":
        pooled = np.vstack([_points(source), _points(target)])
        box_density = fit_histogram(pooled, bins=bins)
        return (
            fit_histogram(source, bins=bins, box=box_density.box),
            fit_histogram(target, bins=bins, box=box_density.box),
        )
    raise ValueError(f"unknown density estimator {estimator!r}")


def _check_pair(source, target):
    a, b = _points(source), _points(target)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"dimension mismatch: source has {a.shape[1]}, target has {b.shape[1]}"
        )
    return a, b


def support_divergence_empirical(
    source, target, eps=None, estimator="kde", bandwidth="silverman", bins=50, densities=None
):
    """Plug-in support sufficiency divergence from source to target samples.

    ``densities`` may supply an already fitted ``(source, target)`` pair, in which
    case ``estimator``/``bandwidth``/``bins`` are ignored. The result is clipped
    to ``[0, 1]``.
    """
    a, b = _check_pair(source, target)
    p_hat, q_hat = densities or fit_plugin(a, b, estimator, bandwidth, bins)
    if eps is None:
        eps = default_epsilon(p_hat, a, b)
    eps = check_eps(eps)
    on_target = delta_indicator(p_hat.evaluate(b), q_hat.evaluate(b), eps)
    on_source = delta_indicator(p_hat.evaluate(a), q_hat.evaluate(a), eps)
    value = float(np.mean(on_target) - np.mean(on_source))
    return DivergenceEstimate(
        value=min(max(value, 0.0), 1.0),
        method="support-sufficiency",
        estimator="plug-in",
        epsilon=eps,
        sample_sizes=(len(a), len(b)),
    )


def _weighted_mmd(a, b, wa, wb, sigma):
    return (
        _blocks.gaussian_pair_sum(a, a, sigma, wa, wa)
        - 2.0 * _blocks.gaussian_pair_sum(a, b, sigma, wa, wb)
        + _blocks.gaussian_pair_sum(b, b, sigma, wb, wb)
    )


def mmd_squared(a, b, kernel=None, variant="V"):
    """Squared MMD between two samples.

    The V-statistic keeps the diagonal self-pairs and is never negative; the
    U-statistic drops them and is unbiased but can dip below zero.
    """
    x, y = _check_pair(a, b)
    kernel = kernel or Kernel.median_heuristic(x, y)
    n, m = len(x), len(y)
    if variant == "V":
        value = _weighted_mmd(x, y, np.full(n, 1.0 / n), np.full(m, 1.0 / m), kernel.sigma)
        value = max(value, 0.0)
    elif variant == "U":
        if n < 2 or m < 2:
            raise ValueError("the U-statistic needs at least two points per sample")
        s_xx = _blocks.gaussian_pair_sum(x, x, kernel.sigma) - n
        s_yy = _blocks.gaussian_pair_sum(y, y, kernel.sigma) - m
        s_xy = _blocks.gaussian_pair_sum(x, y, kernel.sigma)
        value = s_xx / (n * (n - 1)) - 2.0 * s_xy / (n * m) + s_yy / (m * (m - 1))
    else:
        raise ValueError(f"unknown MMD variant {variant!r}")
    return DivergenceEstimate(
        value=float(value),
        method="mmd-squared",
        estimator="plug-in",
        kernel=kernel,
        variant=variant,
        sample_sizes=(n, m),
    )


def kernel_support_divergence(source, target, source_density, eps, kernel=None):
    """Kernel form of the IPM support divergence, as a V-statistic.

    Both samples are masked by ``source_density(x) <= eps`` before the usual
    three-term MMD expansion, so points in well-supported regions drop out.
    """
    eps = check_eps(eps)
    a, b = _check_pair(source, target)
    kernel = kernel or Kernel.median_heuristic(a, b)
    da = (source_density.evaluate(a) <= eps).astype(float)
    db = (source_density.evaluate(b) <= eps).astype(float)
    value = _weighted_mmd(a, b, da / len(a), db / len(b), kernel.sigma)
    return DivergenceEstimate(
        value=max(float(value), 0.0),
        method="kernel-support",
        estimator="plug-in",
        epsilon=eps,
        kernel=kernel,
        variant="V",
        sample_sizes=(len(a), len(b)),
    )


def _cell_points(d):
    if isinstance(d, DiscreteDensity):
        return np.arange(d.size, dtype=float)[:, None]
    return d.cell_centers()


def kernel_support_divergence_cells(p, q, eps, kernel):
    """Kernel support divergence for discrete or grid densities.

    Each cell is a point mass at its center; the double sums are then exact
    for that discretization.
    """
    eps = check_eps(eps)
    pv, _, pm, qm = _cells(p, q)
    centers = _cell_points(p)
    mask = (pv <= eps).astype(float)
    value = _weighted_mmd(centers, centers, pm * mask, qm * mask, kernel.sigma)
    return DivergenceEstimate(
        value=max(float(value), 0.0),
        method="kernel-support",
        estimator="exact",
        epsilon=eps,
        kernel=kernel,
        variant="V",
    )


def mmd_squared_cells(p, q, kernel):
    """Squared MMD between two discrete or grid densities (cell-center masses)."""
    _, _, pm, qm = _cells(p, q)
    centers = _cell_points(p)
    value = _weighted_mmd(centers, centers, pm, qm, kernel.sigma)
    return DivergenceEstimate(
        value=max(float(value), 0.0), method="mmd-squared", estimator="exact",
        kernel=kernel, variant="V",
    )


def _ratio(num, den):
    # x/0 and 0/0 are +inf, so the hinge factor built on the ratio vanishes.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = num / den
    return np.where(den > 0, r, np.inf)


def _hinge_factors(p_values, q_values, eps):
    p_over_eps = p_values / eps
    p_over_q = _ratio(p_values, q_values)
    on_q = np.maximum(0.0, 2.0 - p_over_eps) * np.maximum(0.0, 2.0 - p_over_q)
    on_p = np.maximum(0.0, 1.0 - p_over_eps) * np.maximum(0.0, 1.0 - p_over_q)
    return on_q, on_p


def hinge_support_divergence(p, q, eps):
    """Hinge upper bound on the support sufficiency divergence."""
    eps = check_eps(eps)
    pv, qv, pm, qm = _cells(p, q)
    on_q, on_p = _hinge_factors(pv, qv, eps)
    value = float(np.sum(qm * on_q) - np.sum(pm * on_p))
    return DivergenceEstimate(value=value, method="hinge-support", estimator="exact", epsilon=eps)


def hinge_support_divergence_empirical(source, target, eps, densities):
    """Plug-in hinge divergence: target mean of the first factor minus source mean of the second."""
    eps = check_eps(eps)
    a, b = _check_pair(source, target)
    p_hat, q_hat = densities
    on_q, _ = _hinge_factors(p_hat.evaluate(b), q_hat.evaluate(b), eps)
    _, on_p = _hinge_factors(p_hat.evaluate(a), q_hat.evaluate(a), eps)
    return DivergenceEstimate(
        value=float(np.mean(on_q) - np.mean(on_p)),
        method="hinge-support",
        estimator="plug-in",
        epsilon=eps,
        sample_sizes=(len(a), len(b)),
    )


def ipm_support_divergence_oracle(p, q, eps, M=1.0):
    """IPM support divergence over all ``[0, M]``-valued functions.

    The supremum puts ``M`` on the masked states where one side dominates and
    ``0`` elsewhere, so it is M times the larger of the two one-sided gaps.
    """
    eps = check_eps(eps)
    if not M > 0:
        raise ValueError("M must be positive")
    pv, _, pm, qm = _cells(p, q)
    gap = (qm - pm) * (pv <= eps)
    return float(M * max(gap[gap > 0].sum(), -gap[gap < 0].sum()))
