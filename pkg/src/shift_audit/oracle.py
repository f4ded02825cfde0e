"""Brute-force reference computations on small instances.

Everything here is plain Python loops over states or grid cells and imports
nothing from the rest of the package; the tests compare these values with the
vectorized implementations.
"""

from dataclasses import dataclass
from itertools import product
from typing import Optional

MAX_STATES = 64
TOL = 1e-12


@dataclass(frozen=True)
class DiscreteInstance:
    p: tuple
    q: tuple
    loss: tuple
    M: float = 1.0
    posterior: Optional[tuple] = None

    def __post_init__(self):
        k = len(self.p)
        if not 0 < k <= MAX_STATES:
            raise ValueError(f"instances have 1 to {MAX_STATES} states")
        for name in ("p", "q", "loss"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} must have {k} entries")
        for name in ("p", "q"):
            vals = getattr(self, name)
            if min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability vector")
        if min(self.loss) < 0 or max(self.loss) > self.M:
            raise ValueError("loss values must lie in [0, M]")
        if self.posterior is not None:
            post = tuple(float(v) for v in self.posterior)
            if len(post) != k or min(post) < 0 or max(post) > 1:
                raise ValueError("posterior must have one value in [0, 1] per state")
            object.__setattr__(self, "posterior", post)


def oracle_support_divergence(instance, eps):
    total = 0.0
    for pi, qi in zip(instance.p, instance.q):
        if qi >= pi and pi <= eps:
            total += qi - pi
    return total


def oracle_lemma1(instance, eps):
    """Walk the weighted-expectation inequality step by step.

    The state space is split at ``p >= eps`` (ratio-weighted) versus
    ``p < eps``; the final step widens the support set to ``p <= eps`` so it
    matches the divergence indicator. Each step is asserted to be no smaller
    than the previous one.
    """
    p, q, f, M = instance.p, instance.q, instance.loss, instance.M
    hi = [i for i in range(len(p)) if p[i] >= eps]
    lo = [i for i in range(len(p)) if p[i] < eps]
    weighted = 0.0
    for i in range(len(p)):
        w = q[i] / p[i] if p[i] >= eps else 1.0
        weighted += p[i] * w * f[i]
    steps = [
        sum(q[i] * f[i] for i in range(len(p))),
        sum(q[i] * f[i] for i in hi) + sum(q[i] * f[i] for i in lo),
        sum(q[i] / p[i] * p[i] * f[i] for i in hi) + sum(q[i] * f[i] for i in lo),
        weighted + sum((q[i] - p[i]) * f[i] for i in lo),
        weighted + M * sum(q[i] - p[i] for i in lo if p[i] <= q[i]),
        weighted + M * sum(q[i] - p[i] for i in range(len(p)) if p[i] <= eps and p[i] <= q[i]),
    ]
    for a, b in zip(steps, steps[1:]):
        assert a <= b + TOL, f"inequality chain broken: {a} > {b}"
    return {"lhs": steps[0], "rhs": steps[-1], "steps": steps}


def oracle_ipm_bruteforce(instance, eps):
    """Supremum of ``|E_q[d f] - E_p[d f]|`` over all ``f`` in ``{0, M}^K``.

    ``d`` marks states with ``p <= eps``. A linear functional on the box
    ``[0, M]^K`` attains its extremes at vertices, so enumeration is exact.
    """
    k = len(instance.p)
    if k > 16:
        raise ValueError("vertex enumeration is limited to 16 states")
    gaps = [(qi - pi) if pi <= eps else 0.0 for pi, qi in zip(instance.p, instance.q)]
    best = 0.0
    for corner in product((0.0, instance.M), repeat=k):
        best = max(best, abs(sum(g * c for g, c in zip(gaps, corner))))
    return best


# ---------------------------------------------------------------------------
# grid problems


def _cell_edges(lo, hi, n):
    w = (hi - lo) / n
    return [(lo + i * w, lo + (i + 1) * w) for i in range(n)]


def _covered(edge, orientation, cutoff):
    """Fraction of ``[a, b]`` where the threshold predicts 1."""
    a, b = edge
    if orientation == 1:
        inside = max(0.0, b - max(a, cutoff))
    else:
        inside = max(0.0, min(b, cutoff) - a)
    return min(1.0, inside / (b - a))


def oracle_eta_identity(problem, representation, predictor):
    """Both sides of ``R_t = E_{p_t(z) p_s(y|z)}[loss] + eta`` under zero-one loss.

    Supports identity and variable-selection maps with threshold or constant
    predictors. Where the source has no mass on a Z cell, ``p_s(y|z)`` is set
    to ``p_t(y|z)``.
    """
    kind = representation.kind
    if kind not in ("identity", "variable-selection"):
        raise ValueError(f"unsupported representation {kind!r}")
    if predictor.kind not in ("threshold", "constant"):
        raise ValueError(f"unsupported predictor {predictor.kind!r}")
    grid = problem.source
    shape = list(grid.resolution)
    box = [list(map(float, r)) for r in grid.box]
    dim = len(shape)
    keep = list(range(dim)) if kind == "identity" else list(representation.indices)
    edges = [_cell_edges(box[a][0], box[a][1], shape[a]) for a in range(dim)]
    volume = 1.0
    for a in range(dim):
        volume *= (box[a][1] - box[a][0]) / shape[a]
    ps = problem.source.cell_values.ravel().tolist()
    pt = problem.target.cell_values.ravel().tolist()
    post = problem.posterior.ravel().tolist()

    def frac(cell):
        if predictor.kind == "constant":
            return float(predictor.value)
        axis = keep[predictor.axis]
        return _covered(edges[axis][cell[axis]], predictor.orientation, predictor.cutoff)

    def zero_one(f, pi):
        return f * (1.0 - pi) + (1.0 - f) * pi

    target_risk = 0.0
    z = {}
    for flat, cell in enumerate(product(*[range(n) for n in shape])):
        f = frac(cell)
        target_risk += pt[flat] * volume * zero_one(f, post[flat])
        key = tuple(cell[a] for a in keep)
        acc = z.setdefault(key, [0.0, 0.0, 0.0, 0.0, f])
        acc[0] += ps[flat] * volume
        acc[1] += ps[flat] * volume * post[flat]
        acc[2] += pt[flat] * volume
        acc[3] += pt[flat] * volume * post[flat]
    mixed = 0.0
    eta = 0.0
    for ms, ms1, mt, mt1, f in z.values():
        pi_t = mt1 / mt if mt > 0 else 0.0
        pi_s = ms1 / ms if ms > 0 else pi_t
        mixed += mt * zero_one(f, pi_s)
        eta += mt * (zero_one(f, pi_t) - zero_one(f, pi_s))
    decomposed = mixed + eta
    assert abs(target_risk - decomposed) <= 1e-9, f"identity fails: {target_risk} vs {decomposed}"
    return {"target_risk": target_risk, "decomposed_sum": decomposed, "eta": eta}
