"""Evaluable densities: discrete, piecewise-constant on a grid, and Gaussian KDE.

Grid cells are half-open on the left: cell ``i`` on an axis covers
``(lo + i*w, lo + (i+1)*w]``, except cell 0 which also holds ``lo`` itself.
A point sitting exactly on an interior cell boundary therefore belongs to the
lower-index cell.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from shift_audit._blocks import product_kernel_mean

NORMALIZATION_TOL = 1e-9


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SampleSet:
    """Points in R^d with optional binary labels and a domain tag."""

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    domain: Optional[str] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be an n x d matrix")
        object.__setattr__(self, "points", _frozen(pts))
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (len(pts),):
                raise ValueError(
                    f"expected {len(pts)} labels, got shape {lab.shape}"
                )
            if not np.all((lab == 0) | (lab == 1)):
                raise ValueError("labels must be 0 or 1")
            object.__setattr__(self, "labels", _frozen(lab, dtype=int))
        if self.domain not in (None, "source", "target"):
            raise ValueError(f"unknown domain tag {self.domain!r}")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def labeled(self):
        return self.labels is not None


@dataclass(frozen=True)
class DiscreteDensity:
    """Probability mass over states ``0..K-1``."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).ravel()
        if p.size == 0:
            raise ValueError("empty state space")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", _frozen(p))

    @property
    def dim(self):
        return 1

    @property
    def size(self):
        return self.probabilities.size

    def evaluate(self, states):
        s = np.asarray(states, dtype=float).reshape(-1)
        idx = np.round(s).astype(int)
        if np.any(np.abs(s - idx) > 0):
            raise ValueError("discrete densities are evaluated at integer states")
        out = np.zeros(idx.shape)
        inside = (idx >= 0) & (idx < self.size)
        out[inside] = self.probabilities[idx[inside]]
        return out

    def cell_values(self):
        return self.probabilities

    def cell_masses(self):
        return self.probabilities

    def as_grid(self):
        """The same density as unit cells on ``[0, K]``."""
        return GridDensity(
            box=[[0.0, float(self.size)]],
            resolution=(self.size,),
            cell_values=self.probabilities,
        )

    def to_dict(self):
        return {"kind": "discrete", "probabilities": self.probabilities.tolist()}


@dataclass(frozen=True)
class GridDensity:
    """Piecewise-constant density on a uniform grid over an axis-aligned box."""

    box: np.ndarray
    resolution: tuple
    cell_values: np.ndarray

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        if np.any(box[:, 1] <= box[:, 0]):
            raise ValueError("box must have positive extent on every axis")
        res = tuple(int(r) for r in np.atleast_1d(self.resolution))
        if len(res) != box.shape[0] or min(res) < 1:
            raise ValueError("resolution must give >= 1 cell per box axis")
        vals = np.asarray(self.cell_values, dtype=float).reshape(res)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("cell values must be finite and non-negative")
        object.__setattr__(self, "box", _frozen(box))
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "cell_values", _frozen(vals))
        total = vals.sum() * self.cell_volume
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"grid density integrates to {total!r}, not 1")

    @classmethod
    def from_weights(cls, box, resolution, weights):
        """Normalize arbitrary non-negative cell weights into a density."""
        w = np.asarray(weights, dtype=float).reshape(tuple(np.atleast_1d(resolution)))
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive total")
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        vol = np.prod((box[:, 1] - box[:, 0]) / np.asarray(w.shape))
        return cls(box=box, resolution=w.shape, cell_values=w / (w.sum() * vol))

    @property
    def dim(self):
        return self.box.shape[0]

    @property
    def widths(self):
        return (self.box[:, 1] - self.box[:, 0]) / np.asarray(self.resolution)

    @property
    def cell_volume(self):
        return float(np.prod(self.widths))

    @property
    def n_cells(self):
        return int(np.prod(self.resolution))

    def edges(self, axis):
        lo, hi = self.box[axis]
        return np.linspace(lo, hi, self.resolution[axis] + 1)

    def cell_bounds(self):
        """Per-cell lower and upper corners, flattened in C order: two (n_cells, d) arrays."""
        return self._bounds

    @cached_property
    def _bounds(self):
        grids = np.meshgrid(
            *[np.arange(r) for r in self.resolution], indexing="ij"
        )
        idx = np.stack([g.ravel() for g in grids], axis=1)
        lower = self.box[:, 0] + idx * self.widths
        upper = lower + self.widths
        lower.flags.writeable = False
        upper.flags.writeable = False
        return lower, upper

    def cell_centers(self):
        lower, upper = self.cell_bounds()
        return 0.5 * (lower + upper)

    def cell_masses(self):
        return self.cell_values.ravel() * self.cell_volume

    def flat_index(self, points):
        """Flat cell index for every point, ``-1`` outside the box."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        lo, hi = self.box[:, 0], self.box[:, 1]
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        idx = np.ceil((pts - lo) / self.widths).astype(int) - 1
        idx = np.clip(idx, 0, np.asarray(self.resolution) - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.resolution)
        return np.where(inside, flat, -1)

    def evaluate(self, points):
        flat = self.flat_index(points)
        vals = self.cell_values.ravel()
        return np.where(flat >= 0, vals[np.maximum(flat, 0)], 0.0)

    def integrate(self, region):
        region = np.asarray(region, dtype=float).reshape(self.dim, 2)
        if np.any(region[:, 1] <= region[:, 0]):
            raise ValueError("integration region has zero volume")
        frac = None
        for axis in range(self.dim):
            e = self.edges(axis)
            a, b = region[axis]
            overlap = np.clip(np.minimum(b, e[1:]) - np.maximum(a, e[:-1]), 0.0, None)
            f = overlap / self.widths[axis]
            frac = f if frac is None else np.multiply.outer(frac, f)
        return float(np.sum(self.cell_values * frac) * self.cell_volume)

    def marginal(self, axes):
        """Push-forward under selection of ``axes`` (kept in the given order)."""
        axes = [int(a) for a in axes]
        if len(set(axes)) != len(axes) or not all(0 <= a < self.dim for a in axes):
            raise ValueError(f"invalid axis selection {axes}")
        drop = tuple(a for a in range(self.dim) if a not in axes)
        mass = self.cell_values.sum(axis=drop) if drop else self.cell_values
        kept = sorted(axes)
        mass = np.transpose(mass, [kept.index(a) for a in axes])
        dropped_width = float(np.prod(self.widths[list(drop)])) if drop else 1.0
        return GridDensity(
            box=self.box[axes],
            resolution=tuple(self.resolution[a] for a in axes),
            cell_values=mass * dropped_width,
        )

    def to_dict(self):
        return {
            "kind": "grid",
            "box": self.box.tolist(),
            "resolution": list(self.resolution),
            "cell_values": self.cell_values.ravel().tolist(),
        }


@dataclass(frozen=True)
class KdeDensity:
    """Gaussian product-kernel density estimate."""

    support_points: np.ndarray
    bandwidth: np.ndarray
    kernel_family: str = "gaussian"

    def __post_init__(self):
        pts = np.asarray(self.support_points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if len(pts) == 0:
            raise ValueError("KDE needs at least one support point")
        bw = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (pts.shape[1],))
        if np.any(~(bw > 0)):
            raise ValueError("bandwidth must be positive")
        if self.kernel_family != "gaussian":
            raise ValueError(f"unsupported kernel family {self.kernel_family!r}")
        object.__setattr__(self, "support_points", _frozen(pts))
        object.__setattr__(self, "bandwidth", _frozen(bw))

    @property
    def dim(self):
        return self.support_points.shape[1]

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return product_kernel_mean(pts, self.support_points, self.bandwidth)

    def to_dict(self):
        return {
            "kind": "kde",
            "support_points": self.support_points.tolist(),
            "bandwidth": self.bandwidth.tolist(),
            "kernel_family": self.kernel_family,
        }


def density_from_dict(d):
    kind = d.get("kind")
    if kind == "discrete":
        return DiscreteDensity(d["probabilities"])
    if kind == "grid":
        return GridDensity(d["box"], tuple(d["resolution"]), d["cell_values"])
    if kind == "kde":
        return KdeDensity(d["support_points"], d["bandwidth"], d.get("kernel_family", "gaussian"))
    raise ValueError(f"unknown density kind {kind!r}")


def _as_points(density, point):
    pts = np.asarray(point, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, -1) if density.dim > 1 or pts.size == 1 else pts[:, None]
    if pts.shape[1] != density.dim:
        raise ValueError(
            f"point has dimension {pts.shape[1]}, density has dimension {density.dim}"
        )
    return pts


def evaluate_density(density, point):
    """Density value at one point (a float) or at each row of a matrix (an array)."""
    if isinstance(point, SampleSet):
        return density.evaluate(_as_points(density, point.points))
    pts = _as_points(density, point)
    values = density.evaluate(pts)
    single = np.ndim(point) == 0 or (np.ndim(point) == 1 and len(pts) == 1)
    return float(values[0]) if single else values


def integrate(density, region):
    """Probability mass of ``density`` inside an axis-aligned ``region``.

    Partially covered cells contribute in proportion to the covered volume.
    """
    if isinstance(density, DiscreteDensity):
        density = density.as_grid()
    return density.integrate(region)


def silverman_bandwidth(points):
    pts = np.asarray(points, dtype=float)
    n, d = pts.shape
    if n < 2:
        raise ValueError("Silverman's rule needs at least two samples")
    sd = pts.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError(
            "zero sample variance: Silverman's rule is undefined, pass a fixed bandwidth"
        )
    factor = (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0))
    return factor * sd


def fit_kde(samples, bandwidth="silverman"):
    """Gaussian KDE over the sample points.

    ``bandwidth`` is ``"silverman"``, a positive scalar, or one value per axis.
    """
    pts = samples.points if isinstance(samples, SampleSet) else np.atleast_2d(samples)
    if len(pts) == 0:
        raise ValueError("cannot fit a KDE to an empty sample set")
    if isinstance(bandwidth, str):
        if bandwidth != "silverman":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        bw = silverman_bandwidth(pts)
    else:
        bw = bandwidth
    return KdeDensity(pts, bw)


def fit_histogram(samples, bins=50, box=None):
    """Histogram estimate as a :class:`GridDensity`.

    Without an explicit ``box`` the sample range is padded by half a bin per side.
    """
    pts = samples.points if isinstance(samples, SampleSet) else np.atleast_2d(samples)
    if len(pts) == 0:
        raise ValueError("cannot fit a histogram to an empty sample set")
    d = pts.shape[1]
    res = tuple(np.broadcast_to(np.asarray(bins, dtype=int), (d,)))
    if box is None:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        r = np.asarray(res, dtype=float)
        pad = np.where(r > 1, span / (2.0 * np.maximum(r - 1.0, 1.0)), 0.5 * span)
        box = np.stack([lo - pad, hi + pad], axis=1)
    counts = np.zeros(res)
    shell = GridDensity.from_weights(box, res, np.ones(res))
    flat = shell.flat_index(pts)
    np.add.at(counts.reshape(-1), flat[flat >= 0], 1.0)
    return GridDensity.from_weights(box, res, counts)


def density_quantile(density, probes, q):
    """The ``q``-quantile (an order statistic) of the density over probe points."""
    pts = probes.points if isinstance(probes, SampleSet) else np.asarray(probes, dtype=float)
    if pts.size == 0:
        raise ValueError("empty probe set")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    values = density.evaluate(_as_points(density, pts))
    return float(np.quantile(values, q, method="inverted_cdf"))
