"""Representations, predictors, losses, risks, and the classical adaptation bound.

Every supported hypothesis predicts 1 on a half-space ``{x : a.x + c >= 0}``
of the input space (a constant predictor is the degenerate case ``a = 0``).
Exact-mode quantities integrate that half-space against piecewise-constant
grid densities cell by cell, using the covered fraction of each cell.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from shift_audit.densities import DiscreteDensity, GridDensity
from shift_audit.synthetic import sample

# ---------------------------------------------------------------------------
# model objects


@dataclass(frozen=True)
class Representation:
    kind: str = "identity"
    indices: tuple = ()
    matrix: np.ndarray = None

    def __post_init__(self):
        if self.kind == "variable-selection":
            idx = tuple(int(i) for i in self.indices)
            if not idx or len(set(idx)) != len(idx) or min(idx) < 0:
                raise ValueError(f"invalid variable selection {self.indices}")
            object.__setattr__(self, "indices", idx)
        elif self.kind == "linear-projection":
            w = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if not np.all(np.isfinite(w)):
                raise ValueError("projection matrix must be finite")
            w.flags.writeable = False
            object.__setattr__(self, "matrix", w)
        elif self.kind != "identity":
            raise ValueError(f"unknown representation kind {self.kind!r}")

    @classmethod
    def select(cls, *indices):
        return cls("variable-selection", indices=indices)

    @classmethod
    def linear(cls, matrix):
        return cls("linear-projection", matrix=matrix)

    def output_dim(self, input_dim):
        if self.kind == "identity":
            return input_dim
        if self.kind == "variable-selection":
            if max(self.indices) >= input_dim:
                raise ValueError("selected index out of range")
            return len(self.indices)
        if self.matrix.shape[1] != input_dim:
            raise ValueError("projection matrix does not match input dimension")
        return self.matrix.shape[0]

    def is_invertible(self, input_dim):
        if self.kind == "identity":
            return True
        if self.kind == "variable-selection":
            return sorted(self.indices) == list(range(input_dim))
        w = self.matrix
        return w.shape == (input_dim, input_dim) and np.linalg.matrix_rank(w) == input_dim

    def apply(self, points):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        self.output_dim(x.shape[1])
        if self.kind == "identity":
            return x
        if self.kind == "variable-selection":
            return x[:, list(self.indices)]
        return x @ self.matrix.T

    def pull_back(self, a, input_dim):
        """Input-space normal of the half-space ``{z : a.z + c >= 0}``."""
        a = np.asarray(a, dtype=float)
        if self.kind == "identity":
            return a
        if self.kind == "variable-selection":
            out = np.zeros(input_dim)
            out[list(self.indices)] = a
            return out
        return self.matrix.T @ a

    def push_forward(self, density):
        """Exact induced density on Z for grid densities and axis-aligned maps."""
        if isinstance(density, DiscreteDensity):
            density = density.as_grid()
        if self.kind == "identity":
            return density
        if self.kind == "variable-selection" and isinstance(density, GridDensity):
            return density.marginal(self.indices)
        raise ValueError("exact push-forward needs a grid density and an axis-aligned map")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "variable-selection":
            d["indices"] = list(self.indices)
        if self.kind == "linear-projection":
            d["matrix"] = self.matrix.tolist()
        return d


@dataclass(frozen=True)
class Predictor:
    """Threshold, logistic, or constant classifier on Z.

    A threshold with orientation +1 predicts 1 when ``z[axis] >= cutoff``;
    orientation -1 predicts 1 when ``z[axis] <= cutoff``. A point on the cutoff
    is on the positive side either way.
    """

    kind: str = "threshold"
    axis: int = 0
    cutoff: float = 0.0
    orientation: int = 1
    weights: np.ndarray = None
    bias: float = 0.0
    value: int = 0

    def __post_init__(self):
        if self.kind == "threshold":
            if self.orientation not in (1, -1):
                raise ValueError("orientation must be +1 or -1")
            if self.axis < 0:
                raise ValueError("threshold axis must be non-negative")
        elif self.kind == "logistic":
            w = np.atleast_1d(np.asarray(self.weights, dtype=float))
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "bias", float(self.bias))
        elif self.kind == "constant":
            if self.value not in (0, 1):
                raise ValueError("constant predictor must output 0 or 1")
        else:
            raise ValueError(f"unknown predictor kind {self.kind!r}")

    @classmethod
    def threshold(cls, cutoff, axis=0, orientation=1):
        return cls("threshold", axis=int(axis), cutoff=float(cutoff), orientation=int(orientation))

    @classmethod
    def logistic(cls, weights, bias=0.0):
        return cls("logistic", weights=weights, bias=bias)

    @classmethod
    def constant(cls, value):
        return cls("constant", value=int(value))

    def input_dim_ok(self, dim):
        if self.kind == "threshold":
            return self.axis < dim
        if self.kind == "logistic":
            return self.weights.size == dim
        return True

    def halfspace(self, dim):
        """``(a, c)`` with prediction 1 exactly on ``a.z + c >= 0``."""
        if not self.input_dim_ok(dim):
            raise ValueError(f"predictor does not accept {dim}-dimensional input")
        a = np.zeros(dim)
        if self.kind == "threshold":
            a[self.axis] = self.orientation
            return a, -self.orientation * self.cutoff
        if self.kind == "logistic":
            return self.weights.copy(), self.bias
        return a, 1.0 if self.value == 1 else -1.0

    def predict(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        a, c = self.halfspace(z.shape[1])
        return (z @ a + c >= 0).astype(int)

    def to_dict(self):
        if self.kind == "threshold":
            return {"kind": "threshold", "axis": self.axis, "cutoff": self.cutoff,
                    "orientation": self.orientation}
        if self.kind == "logistic":
            return {"kind": "logistic", "weights": self.weights.tolist(), "bias": self.bias}
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Hypothesis:
    representation: Representation
    predictor: Predictor

    def check_dim(self, input_dim):
        k = self.representation.output_dim(input_dim)
        if not self.predictor.input_dim_ok(k):
            raise ValueError("predictor input dimension does not match the representation")
        return k

    def halfspace(self, input_dim):
        k = self.check_dim(input_dim)
        a_z, c = self.predictor.halfspace(k)
        return self.representation.pull_back(a_z, input_dim), c

    def predict(self, points):
        return self.predictor.predict(self.representation.apply(points))

    def to_dict(self):
        return {"representation": self.representation.to_dict(),
                "predictor": self.predictor.to_dict()}


def hypothesis_from_dict(d):
    r = d["representation"]
    p = d["predictor"]
    rep = Representation(r["kind"], indices=tuple(r.get("indices", ())), matrix=r.get("matrix"))
    kind = p["kind"]
    if kind == "threshold":
        pred = Predictor.threshold(p["cutoff"], p.get("axis", 0), p.get("orientation", 1))
    elif kind == "logistic":
        pred = Predictor.logistic(p["weights"], p.get("bias", 0.0))
    elif kind == "constant":
        pred = Predictor.constant(p["value"])
    else:
        raise ValueError(f"unknown predictor kind {kind!r}")
    return Hypothesis(rep, pred)


@dataclass(frozen=True)
class Loss:
    """Loss table indexed ``[prediction][label]`` with values in ``[0, M]``."""

    kind: str = "zero-one"
    table: np.ndarray = None
    M: float = 1.0

    def __post_init__(self):
        if self.kind == "zero-one":
            t, m = np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0
        elif self.kind == "table":
            t, m = np.asarray(self.table, dtype=float).reshape(2, 2), float(self.M)
            if not m > 0 or np.any(t < 0) or np.any(t > m):
                raise ValueError("loss table values must lie in [0, M] with M > 0")
        else:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        t.flags.writeable = False
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "M", m)

    def __call__(self, pred, y):
        return self.table[np.asarray(pred, dtype=int), np.asarray(y, dtype=int)]

    def expected(self, pred_one_fraction, posterior):
        """Expected loss when predicting 1 on a fraction of mass with P(Y=1) = posterior."""
        f = np.asarray(pred_one_fraction, dtype=float)
        pi = np.asarray(posterior, dtype=float)
        t = self.table
        return f * (pi * t[1, 1] + (1 - pi) * t[1, 0]) + (1 - f) * (pi * t[0, 1] + (1 - pi) * t[0, 0])


ZERO_ONE = Loss()


@dataclass
class HypothesisClass:
    hypotheses: list = field(default_factory=list)

    def __post_init__(self):
        self.hypotheses = list(self.hypotheses)
        if not self.hypotheses:
            raise ValueError("hypothesis class must be non-empty")

    def __len__(self):
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    @classmethod
    def thresholds(cls, representation, box, n_cutoffs=101, axes=None, orientations=(1, -1)):
        """Thresholds on a uniform cutoff grid spanning ``box`` (one row per Z axis)."""
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        axes = range(len(box)) if axes is None else axes
        hyps = [
            Hypothesis(representation, Predictor.threshold(c, axis, o))
            for axis in axes
            for c in np.linspace(box[axis, 0], box[axis, 1], n_cutoffs)
            for o in orientations
        ]
        return cls(hyps)

    def to_dict(self):
        return {"hypotheses": [h.to_dict() for h in self.hypotheses]}


# ---------------------------------------------------------------------------
# exact cell fractions


def _ramp(s):
    return np.maximum(s, 0.0)


def _interval_fraction(lo, width, a, c):
    """Fraction of each interval ``[lo, lo + width]`` where ``a*x + c >= 0``."""
    if a == 0:
        return np.full(np.shape(lo), 1.0 if c >= 0 else 0.0)
    s0 = a * lo + c
    return np.clip((_ramp(s0 + a * width) - _ramp(s0)) / (a * width), 0.0, 1.0)


def _rectangle_fraction(lower, widths, a, c):
    """Fraction of each 2-D cell on the non-negative side of ``a.x + c``."""
    s00 = lower @ a + c
    t, r = a[0] * widths[0], a[1] * widths[1]
    corners = np.stack([s00, s00 + t, s00 + r, s00 + t + r])
    out = np.where(corners.min(axis=0) >= 0, 1.0, 0.0)
    cut = (corners.min(axis=0) < 0) & (corners.max(axis=0) > 0)
    if not np.any(cut):
        return out
    s = s00[cut]
    if abs(r) < 1e-6 * abs(t) or abs(t) < 1e-6 * abs(r):
        # near axis-aligned: integrate along the dominant axis at the mid-line
        if abs(t) >= abs(r):
            mid, span = s + 0.5 * r, t
        else:
            mid, span = s + 0.5 * t, r
        out[cut] = (_ramp(mid + span) - _ramp(mid)) / span
    else:
        g = lambda v: 0.5 * _ramp(v) ** 2
        out[cut] = (g(s + t + r) - g(s + t) - g(s + r) + g(s)) / (t * r)
    return np.clip(out, 0.0, 1.0)


SNAP = 1e-12


def halfspace_fractions(grid, a, c):
    """Covered fraction of every grid cell (flat C order) for ``a.x + c >= 0``.

    Fractions within ``SNAP`` of 0 or 1 are snapped, so cutoffs on cell edges
    give exact 0/1 cells despite rounding.
    """
    f = _raw_fractions(grid, np.asarray(a, dtype=float), c)
    f[f < SNAP] = 0.0
    f[f > 1.0 - SNAP] = 1.0
    return f


def _raw_fractions(grid, a, c):
    nz = np.flatnonzero(a)
    lower, _ = grid.cell_bounds()
    if nz.size == 0:
        return np.full(grid.n_cells, 1.0 if c >= 0 else 0.0)
    if nz.size == 1:
        ax = nz[0]
        return _interval_fraction(lower[:, ax], grid.widths[ax], a[ax], c)
    if nz.size == 2:
        return _rectangle_fraction(lower[:, nz], grid.widths[nz], a[nz], c)
    raise ValueError("exact fractions support half-spaces touching at most two axes")


def _clip_polygon(poly, a, c):
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp, sq = p @ a + c, q @ a + c
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            out.append(p + (q - p) * (sp / (sp - sq)))
    return out


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x = np.array([p[0] for p in poly])
    y = np.array([p[1] for p in poly])
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _pair_fraction(grid, cells, hs1, hs2):
    """Exact fraction of ``cells`` covered by both half-spaces."""
    (a1, c1), (a2, c2) = hs1, hs2
    lower, upper = grid.cell_bounds()
    lower, upper = lower[cells], upper[cells]
    nz1, nz2 = np.flatnonzero(a1), np.flatnonzero(a2)
    if nz1.size == 1 and nz2.size == 1:
        i, j = nz1[0], nz2[0]
        w = grid.widths
        if i != j:
            return (_interval_fraction(lower[:, i], w[i], a1[i], c1)
                    * _interval_fraction(lower[:, j], w[j], a2[j], c2))
        lo, hi = lower[:, i].copy(), upper[:, i].copy()
        for a, c in ((a1[i], c1), (a2[i], c2)):
            root = -c / a
            if a > 0:
                lo = np.maximum(lo, root)
            else:
                hi = np.minimum(hi, root)
        return np.clip(hi - lo, 0.0, None) / w[i]
    if grid.dim != 2:
        raise ValueError("exact pair fractions for oblique half-spaces need d = 2")
    out = np.empty(len(cells))
    area = grid.cell_volume
    for k in range(len(cells)):
        (x0, y0), (x1, y1) = lower[k], upper[k]
        poly = [np.array(v) for v in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
        poly = _clip_polygon(_clip_polygon(poly, a1, c1), a2, c2)
        out[k] = _polygon_area(poly) / area
    return out


def _as_grid(density):
    if isinstance(density, DiscreteDensity):
        return density.as_grid()
    if not isinstance(density, GridDensity):
        raise TypeError("exact mode needs grid or discrete densities")
    return density


def _fraction_matrix(hyps, grid):
    halfspaces = [h.halfspace(grid.dim) for h in hyps]
    F = np.vstack([halfspace_fractions(grid, a, c) for a, c in halfspaces])
    return F, halfspaces


def _disagreement_matrix(F, halfspaces, grid, masses):
    """Pairwise disagreement mass ``R(h_i, h_j)`` under cell masses."""
    r = F @ masses
    both = (F * masses) @ F.T
    frac = (F > 0) & (F < 1)
    if np.any(frac):
        rows = np.flatnonzero(frac.any(axis=1))
        for i, j in combinations(rows, 2):
            cells = np.flatnonzero(frac[i] & frac[j])
            if cells.size == 0:
                continue
            exact = _pair_fraction(grid, cells, halfspaces[i], halfspaces[j])
            fix = float(masses[cells] @ (exact - F[i, cells] * F[j, cells]))
            both[i, j] += fix
            both[j, i] += fix
        for i in rows:
            cells = np.flatnonzero(frac[i])
            both[i, i] += float(masses[cells] @ (F[i, cells] - F[i, cells] ** 2))
    return np.clip(r[:, None] + r[None, :] - 2.0 * both, 0.0, 1.0)


# ---------------------------------------------------------------------------
# risks and class quantities


def _check_mode(mode):
    if mode not in ("exact", "monte-carlo"):
        raise ValueError(f"unknown mode {mode!r}")


def risk(h, problem, which="target", mode="exact", loss=ZERO_ONE, n=10_000, seed=0):
    """Expected loss of ``h`` on one domain of a synthetic problem."""
    _check_mode(mode)
    if mode == "monte-carlo":
        s = sample(problem, which, n, seed, with_labels=True)
        return float(np.mean(loss(h.predict(s.points), s.labels)))
    density = _as_grid(problem.density(which))
    a, c = h.halfspace(density.dim)
    f = halfspace_fractions(density, a, c)
    return float(density.cell_masses() @ loss.expected(f, problem.posterior.ravel()))


def risks(hyps, problem, which="target", loss=ZERO_ONE):
    """Exact risks for many hypotheses at once."""
    density = _as_grid(problem.density(which))
    F, _ = _fraction_matrix(list(hyps), density)
    m = density.cell_masses()
    pi = problem.posterior.ravel()
    one = m * loss.expected(1.0, pi)
    zero = m * loss.expected(0.0, pi)
    return F @ one + (1 - F) @ zero


def disagreement(h, h2, density, mode="exact", n=10_000, seed=0):
    """Probability that ``h`` and ``h2`` predict differently under ``density``."""
    _check_mode(mode)
    if mode == "monte-carlo":
        x = _draw(density, n, seed)
        return float(np.mean(h.predict(x) != h2.predict(x)))
    grid = _as_grid(density)
    F, hs = _fraction_matrix([h, h2], grid)
    return float(_disagreement_matrix(F, hs, grid, grid.cell_masses())[0, 1])


def _draw(density, n, seed):
    grid = _as_grid(density)
    rng = np.random.default_rng([int(seed), 2])
    m = grid.cell_masses()
    cells = rng.choice(grid.n_cells, size=n, p=m / m.sum())
    lower, upper = grid.cell_bounds()
    return lower[cells] + rng.random((n, grid.dim)) * (upper[cells] - lower[cells])


def _dedupe(F):
    """Keep one representative of each fraction row up to complement."""
    keep, seen = [], set()
    for i, row in enumerate(np.round(F, 12)):
        key = min(row.tobytes(), np.round(1.0 - row, 12).tobytes())
        if key not in seen:
            seen.add(key)
            keep.append(i)
    return keep


def h_delta_h(hclass, p, q, mode="exact", max_pairs=10_000, seed=0, scale=1.0, n=10_000):
    """Largest cross-domain gap in pairwise disagreement over the class.

    Complementary hypotheses have complementary disagreements, so only one of
    each complement pair is kept. If more than ``max_pairs`` distinct pairs
    remain, a uniform random subset (``numpy.random.default_rng(seed)``) is
    evaluated. ``scale=2`` gives the convention with the factor 2.
    """
    _check_mode(mode)
    hyps = list(hclass)
    if not hyps:
        raise ValueError("hypothesis class must be non-empty")
    if mode == "exact":
        gp, gq = _as_grid(p), _as_grid(q)
        F, hs = _fraction_matrix(hyps, gp)
        keep = _dedupe(F)
        F, hs = F[keep], [hs[i] for i in keep]
        Dp = _disagreement_matrix(F, hs, gp, gp.cell_masses())
        Dq = _disagreement_matrix(F, hs, gp, gq.cell_masses())
    else:
        xp, xq = _draw(p, n, seed), _draw(q, n, seed + 1)
        Pp = np.vstack([h.predict(xp) for h in hyps]).astype(float)
        Pq = np.vstack([h.predict(xq) for h in hyps]).astype(float)
        keep = _dedupe(np.hstack([Pp, Pq]))
        Pp, Pq = Pp[keep], Pq[keep]
        Dp = (Pp.sum(1)[:, None] + Pp.sum(1)[None, :] - 2 * Pp @ Pp.T) / Pp.shape[1]
        Dq = (Pq.sum(1)[:, None] + Pq.sum(1)[None, :] - 2 * Pq @ Pq.T) / Pq.shape[1]
    gap = np.abs(Dp - Dq)
    k = gap.shape[0]
    iu = np.triu_indices(k, 1)
    vals = gap[iu]
    if vals.size > max_pairs:
        pick = np.random.default_rng(seed).choice(vals.size, max_pairs, replace=False)
        vals = vals[pick]
    return scale * float(vals.max()) if vals.size else 0.0


def lambda_joint(hclass, problem, mode="exact", loss=ZERO_ONE, n=10_000, seed=0):
    """Smallest source-plus-target risk in the class."""
    _check_mode(mode)
    hyps = list(hclass)
    if not hyps:
        raise ValueError("hypothesis class must be non-empty")
    if mode == "exact":
        total = risks(hyps, problem, "source", loss) + risks(hyps, problem, "target", loss)
    else:
        total = np.array([
            risk(h, problem, "source", mode, loss, n, seed)
            + risk(h, problem, "target", mode, loss, n, seed)
            for h in hyps
        ])
    return float(total.min())


@dataclass(frozen=True)
class Theorem1Report:
    source_risk: float
    h_delta_h: float
    lambda_joint: float
    total: float

    def to_dict(self):
        return {"theorem": 1, "source_risk": self.source_risk, "h_delta_h": self.h_delta_h,
                "lambda": self.lambda_joint, "total": self.total}


def theorem1_bound(h, hclass, problem, mode="exact", **kw):
    """Source risk plus class divergence plus best joint risk (zero-one loss)."""
    rs = risk(h, problem, "source", mode)
    d = h_delta_h(hclass, problem.source, problem.target, mode, **kw)
    lam = lambda_joint(hclass, problem, mode)
    return Theorem1Report(rs, d, lam, rs + d + lam)
