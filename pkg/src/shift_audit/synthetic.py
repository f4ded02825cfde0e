"""Synthetic covariate-shift problems with closed-form densities and posteriors.

Every problem lives on one grid shared by source and target. The label
posterior ``p(Y=1 | x)`` is a single per-cell table used for both domains, so
the covariate shift assumption holds by construction.

Sampling uses ``numpy.random.default_rng([seed, stream])`` with stream 0 for
the source domain and 1 for the target domain.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from shift_audit.densities import GridDensity, SampleSet

DOMAIN_STREAMS = {"source": 0, "target": 1}


@dataclass(frozen=True)
class SyntheticProblem:
    source: GridDensity
    target: GridDensity
    posterior: np.ndarray
    descriptor: dict = field(default_factory=dict)
    components: Optional[np.ndarray] = None
    component_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.source.resolution != self.target.resolution or not np.allclose(
            self.source.box, self.target.box
        ):
            raise ValueError("source and target must share one grid")
        post = np.asarray(self.posterior, dtype=float).reshape(self.source.resolution)
        if np.any((post < 0) | (post > 1)):
            raise ValueError("posterior values must lie in [0, 1]")
        post.flags.writeable = False
        object.__setattr__(self, "posterior", post)

    @property
    def grid(self):
        return self.source

    @property
    def dim(self):
        return self.source.dim

    def density(self, which):
        if which not in DOMAIN_STREAMS:
            raise ValueError(f"unknown domain {which!r}")
        return self.source if which == "source" else self.target

    def posterior_at(self, points):
        """p(Y=1 | x) at each point (0 outside the grid)."""
        flat = self.grid.flat_index(points)
        post = self.posterior.ravel()
        return np.where(flat >= 0, post[np.maximum(flat, 0)], 0.0)

    def to_dict(self):
        d = dict(self.descriptor)
        if d.get("generator") in (None, "grid"):
            d = {
                "generator": "grid",
                "source": self.source.to_dict(),
                "target": self.target.to_dict(),
                "posterior": self.posterior.ravel().tolist(),
            }
        return d


def make_grid_problem(source, target, posterior):
    return SyntheticProblem(source, target, posterior, {"generator": "grid"})


def make_discrete_problem(p_source, p_target, posterior):
    """States ``0..K-1`` as unit cells on ``[0, K]``."""
    ps = np.asarray(p_source, dtype=float)
    pt = np.asarray(p_target, dtype=float)
    box = [[0.0, float(ps.size)]]
    return make_grid_problem(
        GridDensity(box, (ps.size,), ps), GridDensity(box, (pt.size,), pt), posterior
    )


def make_example1(resolution=200):
    """Quadrant problem on ``[-1, 1]^2``.

    Source mass sits on the upper-left and lower-right quadrants, target mass
    on the lower-left and upper-right ones, each at density 0.5. The label is
    1 exactly when the second coordinate is positive.
    """
    if resolution % 2:
        raise ValueError("resolution must be even so the axes fall on cell edges")
    box = [[-1.0, 1.0], [-1.0, 1.0]]
    grid = GridDensity.from_weights(box, (resolution, resolution), np.ones((resolution, resolution)))
    c = grid.cell_centers()
    upper = (c[:, 1] > 0).reshape(resolution, resolution)
    right = (c[:, 0] > 0).reshape(resolution, resolution)
    source = GridDensity.from_weights(box, (resolution,) * 2, (upper != right).astype(float))
    target = GridDensity.from_weights(box, (resolution,) * 2, (upper == right).astype(float))
    return SyntheticProblem(
        source,
        target,
        upper.astype(float),
        {"generator": "example1", "resolution": resolution},
    )


# Default overlap pair, found by scanning RBF bandwidths on the exact densities
# (see replicate overlap): squared MMD of A exceeds that of B for sigma <= ~0.5.
OVERLAP_DEFAULTS = {
    "source_width": 3.0,
    "a_width": 1.0,
    "disjoint_fraction": 1.0 / 3.0,
    "resolution": 200,
    "recorded_sigma": 0.25,
    "recorded_eps": 0.2,
}


def make_overlap_pair(
    source_width=3.0, a_width=1.0, disjoint_fraction=1.0 / 3.0, resolution=200, **extra
):
    """Two 1-D problems sharing a uniform source on ``[0, source_width]``.

    Problem A: target uniform on an interval of length ``a_width`` centred in
    the source support, so the source covers it with density
    ``1 / source_width``. Problem B: target is the source shifted right by
    ``disjoint_fraction * source_width``, putting that fraction of its mass
    outside the source support. Labels are 1 to the right of the source
    midpoint.
    """
    if not 0.0 <= disjoint_fraction <= 1.0:
        raise ValueError("disjoint_fraction must lie in [0, 1]")
    if not 0.0 < a_width <= source_width:
        raise ValueError("target A must fit inside the source support")
    shift = disjoint_fraction * source_width
    hi = source_width + shift
    box = [[0.0, hi]]
    centers = (np.arange(resolution) + 0.5) * hi / resolution
    width = hi / resolution

    def uniform(lo, up):
        w = (centers > lo) & (centers < up)
        if not np.isclose(w.sum() * width, up - lo, atol=1e-9):
            raise ValueError(
                f"interval [{lo}, {up}] does not fall on cell edges at resolution {resolution}"
            )
        return GridDensity.from_weights(box, (resolution,), w.astype(float))

    source = uniform(0.0, source_width)
    a_lo = 0.5 * (source_width - a_width)
    target_a = uniform(a_lo, a_lo + a_width)
    target_b = uniform(shift, hi)
    posterior = (centers > 0.5 * source_width).astype(float)
    params = {
        "source_width": source_width,
        "a_width": a_width,
        "disjoint_fraction": disjoint_fraction,
        "resolution": resolution,
        "eps0": 1.0 / source_width,
    }
    params.update({k: v for k, v in OVERLAP_DEFAULTS.items() if k.startswith("recorded")})
    params.update(extra)
    a = SyntheticProblem(source, target_a, posterior, {"generator": "overlap", "which": "A", **params})
    b = SyntheticProblem(source, target_b, posterior, {"generator": "overlap", "which": "B", **params})
    return a, b


def make_cluster_base(n_clusters=10, spread=0.2, spacing=1.0, cells_per_unit=20):
    """Truncated Gaussian clusters on a two-row lattice.

    Cluster ``k`` is centred at ``(k // 2, k % 2) * spacing``, truncated to the
    square of side ``spacing`` around its centre, and carries label ``k % 2``.
    Squares are disjoint, so the posterior is exactly 0 or 1 on every cell.
    The returned problem has identical source and target (equal weights).
    """
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    cols = (n_clusters + 1) // 2
    rows = 2 if n_clusters > 1 else 1
    box = [[-0.5 * spacing, (cols - 0.5) * spacing], [-0.5 * spacing, (rows - 0.5) * spacing]]
    res = (cols * cells_per_unit, rows * cells_per_unit)
    shell = GridDensity.from_weights(box, res, np.ones(res))
    c = shell.cell_centers()
    comps = np.zeros((n_clusters, shell.n_cells))
    labels = np.arange(n_clusters) % 2
    for k in range(n_clusters):
        center = np.array([k // 2, k % 2], dtype=float) * spacing
        inside = np.all(np.abs(c - center) < 0.5 * spacing, axis=1)
        g = np.exp(-0.5 * np.sum((c - center) ** 2, axis=1) / spread**2) * inside
        comps[k] = g / (g.sum() * shell.cell_volume)
    desc = {
        "generator": "labelshift",
        "n_clusters": n_clusters,
        "spread": spread,
        "spacing": spacing,
        "cells_per_unit": cells_per_unit,
    }
    base = _mixture_problem(box, res, comps, labels, np.ones(n_clusters), np.ones(n_clusters), desc)
    return base


def _mixture_problem(box, res, comps, labels, w_source, w_target, desc):
    w_source = np.asarray(w_source, dtype=float)
    w_target = np.asarray(w_target, dtype=float)
    mix_s = w_source @ comps
    mix_t = w_target @ comps
    pos = (w_source * labels) @ comps
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(mix_s > 0, pos / mix_s, 0.0)
    return SyntheticProblem(
        GridDensity.from_weights(box, res, mix_s),
        GridDensity.from_weights(box, res, mix_t),
        post.reshape(res),
        desc,
        components=comps,
        component_labels=labels,
    )


def make_label_shift(base, removed_classes=(), target_weights=None):
    """Reweight or drop clusters of ``base`` in the target domain only.

    The posterior stays the source mixture posterior, so p(Y | X) is shared and
    only the target marginals of X and Y move.
    """
    if base.components is None:
        raise ValueError("base problem has no cluster components")
    k = len(base.components)
    if target_weights is None:
        w = np.ones(k)
        removed = sorted({int(r) for r in removed_classes})
        if any(r < 0 or r >= k for r in removed):
            raise ValueError(f"cluster indices must lie in [0, {k})")
        w[removed] = 0.0
    else:
        w = np.asarray(target_weights, dtype=float)
        removed = sorted(int(i) for i in np.flatnonzero(w == 0))
        if w.shape != (k,) or np.any(w < 0):
            raise ValueError("target weights must be k non-negative numbers")
    if w.sum() <= 0:
        raise ValueError("cannot remove every cluster from the target")
    desc = dict(base.descriptor)
    desc.update({"removed": removed, "target_weights": (w / w.sum()).tolist()})
    n_src = len(base.components)
    return _mixture_problem(
        base.grid.box, base.grid.resolution, base.components, base.component_labels,
        np.ones(n_src), w, desc,
    )


def problem_from_dict(d):
    gen = d.get("generator")
    if gen == "example1":
        return make_example1(d.get("resolution", 200))
    if gen == "overlap":
        keys = ("source_width", "a_width", "disjoint_fraction", "resolution")
        a, b = make_overlap_pair(**{k: d[k] for k in keys if k in d})
        return a if d.get("which", "A") == "A" else b
    if gen == "labelshift":
        keys = ("n_clusters", "spread", "spacing", "cells_per_unit")
        base = make_cluster_base(**{k: d[k] for k in keys if k in d})
        if "target_weights" in d:
            return make_label_shift(base, target_weights=d["target_weights"])
        return make_label_shift(base, d.get("removed", ()))
    if gen == "grid":
        from shift_audit.densities import density_from_dict

        return make_grid_problem(
            density_from_dict(d["source"]), density_from_dict(d["target"]), d["posterior"]
        )
    raise ValueError(f"unknown problem generator {gen!r}")


def sample(problem, which, n, seed, with_labels=None):
    """Draw ``n`` points from one domain.

    Labels are drawn from the posterior for the source domain and withheld for
    the target unless ``with_labels=True``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    density = problem.density(which)
    rng = np.random.default_rng([int(seed), DOMAIN_STREAMS[which]])
    masses = density.cell_masses()
    cells = rng.choice(density.n_cells, size=n, p=masses / masses.sum())
    lower, upper = density.cell_bounds()
    u = rng.random((n, density.dim))
    points = lower[cells] + u * (upper[cells] - lower[cells])
    draw = rng.random(n)
    if with_labels is None:
        with_labels = which == "source"
    labels = (draw < problem.posterior.ravel()[cells]).astype(int) if with_labels else None
    return SampleSet(points, labels, which)
