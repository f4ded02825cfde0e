"""Gradient-descent learner for source risk plus a distributional penalty.

The model is ``z = W x`` followed by a logistic predictor ``v.z + b``. The
objective is ``2 (1 - |alpha - 0.5|) ((1 - alpha) R + alpha d)`` where ``R`` is
the mean logistic loss on labelled source samples and ``d`` is either the
squared MMD (V-statistic) between ``W x_source`` and ``W x_target`` or the hinge
support penalty evaluated with Gaussian KDEs on Z. Gradients are analytic.
"""

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from shift_audit._blocks import sq_dists
from shift_audit.divergence import Kernel, check_eps
from shift_audit.hypotheses import Hypothesis, Predictor, Representation

STEP_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    penalty: str = "mmd"
    kernel: Kernel = field(default_factory=lambda: Kernel(1.0))
    eps: float = 0.2
    learning_rate: float = 1.0
    max_iters: int = 500
    seed: int = 0
    init_scale: float = 1.0
    tolerance: float = 1e-9
    k: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.penalty not in ("mmd", "hinge-support"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if not self.learning_rate > 0 or not self.init_scale > 0 or not self.tolerance > 0:
            raise ValueError("learning_rate, init_scale and tolerance must be positive")
        if self.max_iters < 0 or self.k < 1:
            raise ValueError("max_iters must be >= 0 and k >= 1")
        if self.penalty == "hinge-support":
            check_eps(self.eps)

    def to_dict(self):
        d = {k: getattr(self, k) for k in
             ("alpha", "penalty", "eps", "learning_rate", "max_iters", "seed",
              "init_scale", "tolerance", "k")}
        d["kernel"] = self.kernel.to_dict()
        return d


@dataclass(frozen=True)
class Params:
    W: np.ndarray
    v: np.ndarray
    b: float

    def flat(self):
        return np.concatenate([self.W.ravel(), self.v, [self.b]])

    @classmethod
    def unflat(cls, theta, k, d):
        return cls(theta[: k * d].reshape(k, d).copy(), theta[k * d : k * d + k].copy(), float(theta[-1]))


@dataclass(frozen=True)
class TrainedModel:
    params: Params
    objective_trace: tuple
    config: TrainConfig

    @property
    def representation(self):
        return Representation.linear(self.params.W)

    @property
    def predictor(self):
        return Predictor.logistic(self.params.v, self.params.b)

    @property
    def hypothesis(self):
        return Hypothesis(self.representation, self.predictor)

    @property
    def final_objective(self):
        return self.objective_trace[-1]["total"]

    def to_dict(self):
        return {
            "representation": self.representation.to_dict(),
            "predictor": self.predictor.to_dict(),
            "config": self.config.to_dict(),
            "final_objective": self.final_objective,
            "iterations": len(self.objective_trace) - 1,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def trace_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "risk_term", "penalty_term", "total"])
        for i, r in enumerate(self.objective_trace):
            w.writerow([i, repr(r["risk_term"]), repr(r["penalty_term"]), repr(r["total"])])
        return buf.getvalue()


def init_params(config, d):
    rng = np.random.default_rng(config.seed)
    W = rng.normal(0.0, config.init_scale, (config.k, d))
    v = rng.normal(0.0, config.init_scale, config.k)
    return Params(W, v, 0.0)


def coefficients(alpha):
    """Multipliers of the risk and penalty terms."""
    scale = 2.0 * (1.0 - abs(alpha - 0.5))
    return scale * (1.0 - alpha), scale * alpha


# ---------------------------------------------------------------------------
# terms and gradients


def _softplus(s):
    return np.logaddexp(0.0, s)


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def _risk(params, x, y, grad):
    z = x @ params.W.T
    s = z @ params.v + params.b
    value = float(np.mean(_softplus(s) - y * s))
    if not grad:
        return value, None
    g = (_sigmoid(s) - y) / len(y)
    return value, (np.outer(params.v, g @ x), g @ z, float(g.sum()))


def _pair_grad(G, za, xa, zb, xb):
    """``sum_ij G_ij (za_i - zb_j)(xa_i - xb_j)^T``."""
    r, c = G.sum(axis=1), G.sum(axis=0)
    return (za.T * r) @ xa - za.T @ G @ xb - zb.T @ G.T @ xa + (zb.T * c) @ xb


def _mmd(params, xs, xt, sigma, grad):
    x = np.vstack([xs, xt])
    z = x @ params.W.T
    c = np.concatenate([np.full(len(xs), 1.0 / len(xs)), np.full(len(xt), -1.0 / len(xt))])
    K = np.exp(-sq_dists(z, z) / (2.0 * sigma**2))
    value = float(c @ K @ c)
    if not grad:
        return max(value, 0.0), None
    G = -np.outer(c, c) * K / sigma**2
    return max(value, 0.0), _pair_grad(G, z, x, z, x)


def _kde_matrix(za, zb, h):
    k = za.shape[1]
    return np.exp(-sq_dists(za, zb) / (2.0 * h**2)) / (2.0 * np.pi * h**2) ** (k / 2.0)


def _hinge_parts(p, q, eps, offset):
    """Values and partials of ``max(0, c - p/eps) * max(0, c - p/q)`` with ``c = offset``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q > 0, p / np.where(q > 0, q, 1.0), np.inf)
    h1 = np.maximum(0.0, offset - p / eps)
    h2 = np.maximum(0.0, offset - ratio)
    on1 = ((offset - p / eps) > 0).astype(float)
    on2 = ((offset - ratio) > 0).astype(float)
    dp = -on1 * h2 / eps - h1 * on2 / np.where(q > 0, q, 1.0)
    dq = h1 * on2 * np.where(q > 0, ratio / np.where(q > 0, q, 1.0), 0.0)
    return h1 * h2, dp, dq


def _hinge(params, xs, xt, h, eps, grad):
    zs, zt = xs @ params.W.T, xt @ params.W.T
    n, m = len(zs), len(zt)
    k_ts, k_tt = _kde_matrix(zt, zs, h), _kde_matrix(zt, zt, h)
    k_ss, k_st = _kde_matrix(zs, zs, h), _kde_matrix(zs, zt, h)
    p_t, q_t = k_ts.mean(axis=1), k_tt.mean(axis=1)
    p_s, q_s = k_ss.mean(axis=1), k_st.mean(axis=1)
    a, ap, aq = _hinge_parts(p_t, q_t, eps, 2.0)
    b, bp, bq = _hinge_parts(p_s, q_s, eps, 1.0)
    value = float(a.mean() - b.mean())
    if not grad:
        return value, None
    s = -1.0 / h**2
    g = _pair_grad(s * (ap / m)[:, None] * k_ts / n, zt, xt, zs, xs)
    g += _pair_grad(s * (aq / m)[:, None] * k_tt / m, zt, xt, zt, xt)
    g -= _pair_grad(s * (bp / n)[:, None] * k_ss / n, zs, xs, zs, xs)
    g -= _pair_grad(s * (bq / n)[:, None] * k_st / m, zs, xs, zt, xt)
    return value, g


def _evaluate(params, xs, ys, xt, config, grad=False):
    cr, cp = coefficients(config.alpha)
    risk, gr = _risk(params, xs, ys, grad)
    if config.penalty == "mmd":
        pen, gp = _mmd(params, xs, xt, config.kernel.sigma, grad)
    else:
        pen, gp = _hinge(params, xs, xt, config.kernel.sigma, config.eps, grad)
    terms = {"risk_term": risk, "penalty_term": pen, "total": cr * risk + cp * pen}
    if not grad:
        return terms, None
    gW = cr * gr[0] + cp * gp
    gradient = Params(gW, cr * gr[1], cr * gr[2]).flat()
    return terms, gradient


def _arrays(source, target):
    if not source.labeled:
        raise ValueError("training needs labelled source samples")
    if source.dim != target.dim:
        raise ValueError(f"dimension mismatch: source {source.dim}, target {target.dim}")
    if source.n < 2 or target.n < 2:
        raise ValueError("need at least two source and two target samples")
    return source.points, source.labels.astype(float), target.points


def objective_value(model, source, target, config=None):
    """``{risk_term, penalty_term, total}`` for a model or a parameter set."""
    config = config or model.config
    params = model.params if isinstance(model, TrainedModel) else model
    xs, ys, xt = _arrays(source, target)
    return _evaluate(params, xs, ys, xt, config)[0]


def _descend(theta, f, config, mask=None):
    """Full-batch descent; a step that raises the objective is halved until it does not."""
    value, g = f(theta)
    trace = [value]
    for _ in range(config.max_iters):
        if mask is not None:
            g = g * mask
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; lower the learning rate")
        step = config.learning_rate
        while step >= STEP_FLOOR:
            cand = theta - step * g
            new, new_g = f(cand)
            if np.isfinite(new["total"]) and new["total"] <= value["total"]:
                break
            step *= 0.5
        else:
            break
        theta, g = cand, new_g
        done = value["total"] - new["total"] < config.tolerance
        value = new
        trace.append(value)
        if done:
            break
    return theta, trace


def train(source, target, config):
    xs, ys, xt = _arrays(source, target)
    if len(np.unique(ys)) < 2:
        raise ValueError("source labels must contain both classes")
    d = xs.shape[1]
    theta0 = init_params(config, d).flat()

    def f(theta):
        return _evaluate(Params.unflat(theta, config.k, d), xs, ys, xt, config, grad=True)

    theta, trace = _descend(theta0, f, config)
    return TrainedModel(Params.unflat(theta, config.k, d), tuple(trace), config)


def tune_on_target(model, target_labeled, config=None):
    """Refit the predictor on labelled target samples with the representation frozen."""
    config = replace(config or model.config, alpha=0.0)
    if not target_labeled.labeled:
        raise ValueError("tuning needs labelled target samples")
    xt, yt = target_labeled.points, target_labeled.labels.astype(float)
    k, d = model.params.W.shape
    mask = np.concatenate([np.zeros(k * d), np.ones(k + 1)])

    def f(theta):
        p = Params.unflat(theta, k, d)
        value, gr = _risk(p, xt, yt, True)
        terms = {"risk_term": value, "penalty_term": 0.0, "total": value}
        return terms, Params(gr[0], gr[1], gr[2]).flat()

    theta, trace = _descend(model.params.flat(), f, config, mask)
    return TrainedModel(Params.unflat(theta, k, d), tuple(trace), config)


def gradient_check(model, source, target, config=None, tolerance=1e-4, step=1e-5):
    """Compare the analytic gradient with central differences.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, 1e-6)``; the floor
    keeps near-zero components from dominating. Returns ``(ok, max_error)``.
    """
    config = config or model.config
    params = model.params if isinstance(model, TrainedModel) else model
    xs, ys, xt = _arrays(source, target)
    k, d = params.W.shape
    theta = params.flat()

    def total(t):
        return _evaluate(Params.unflat(t, k, d), xs, ys, xt, config)[0]["total"]

    analytic = _evaluate(params, xs, ys, xt, config, grad=True)[1]
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        numeric[i] = (total(theta + e) - total(theta - e)) / (2.0 * step)
    err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    worst = float(err.max())
    return worst < tolerance, worst
