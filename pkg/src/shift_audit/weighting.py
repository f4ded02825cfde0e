"""Truncated importance weights and importance-weighted risk."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from shift_audit.densities import DiscreteDensity, evaluate_density
from shift_audit.divergence import check_eps, support_divergence_exact


@dataclass(frozen=True)
class WeightConfig:
    """Source density ``p``, target density ``q`` and threshold ``eps``.

    The caller supplies the densities (exact or plug-in); nothing here
    re-estimates them.
    """

    eps: float
    source_density: object
    target_density: object

    def __post_init__(self):
        object.__setattr__(self, "eps", check_eps(self.eps))
        if self.source_density.dim != self.target_density.dim:
            raise ValueError("source and target densities must share dimensionality")

    def weights(self, points):
        """``q/p`` where ``p >= eps``, else 1, for each row of ``points``."""
        p = np.atleast_1d(evaluate_density(self.source_density, points))
        q = np.atleast_1d(evaluate_density(self.target_density, points))
        return truncate(p, q, self.eps)


def truncate(p, q, eps):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p >= eps, q / np.where(p > 0, p, 1.0), 1.0)


def truncated_weight(config, point):
    return float(config.weights(np.atleast_2d(np.asarray(point, dtype=float)))[0])


@dataclass(frozen=True)
class WeightedRisk:
    value: float
    weight_second_moment: float
    n: int

    def __float__(self):
        return self.value

    def to_dict(self):
        return {"value": self.value, "weight_second_moment": self.weight_second_moment, "n": self.n}


def weighted_risk(samples, weights, hypothesis, loss):
    """``(1/n) sum w_i loss(h(x_i), y_i)`` with the empirical ``E[w^2]`` alongside.

    The normalization is 1/n, not the self-normalized ``1/sum(w)``.
    """
    if not samples.labeled:
        raise ValueError("weighted risk needs labelled samples")
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape != (samples.n,):
        raise ValueError(f"expected {samples.n} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    losses = loss(hypothesis.predict(samples.points), samples.labels)
    return WeightedRisk(float(np.mean(w * losses)), float(np.mean(w**2)), samples.n)


@dataclass(frozen=True)
class Lemma1Report:
    lhs: float
    weighted_term: float
    support_term: float
    rhs: float

    def to_dict(self):
        return {"lhs": self.lhs, "weighted_term": self.weighted_term,
                "support_term": self.support_term, "rhs": self.rhs}


def lemma1_bound(p, q, loss_values, M, eps):
    """``E_q[l] <= E_p[w l] + M d_supp(p || q)`` for discrete ``p``, ``q``."""
    eps = check_eps(eps)
    if M <= 0:
        raise ValueError("M must be positive")
    p = p if isinstance(p, DiscreteDensity) else DiscreteDensity(p)
    q = q if isinstance(q, DiscreteDensity) else DiscreteDensity(q)
    if p.probabilities.size != q.probabilities.size:
        raise ValueError("p and q must share a state space")
    ell = np.asarray(loss_values, dtype=float)
    if ell.shape != p.probabilities.shape:
        raise ValueError("need one loss value per state")
    if np.any(ell < 0) or np.any(ell > M):
        raise ValueError(f"loss values must lie in [0, {M}]")
    pv, qv = p.probabilities, q.probabilities
    lhs = float(qv @ ell)
    weighted = float(pv @ (truncate(pv, qv, eps) * ell))
    support = M * support_divergence_exact(p, q, eps).value
    return Lemma1Report(lhs, weighted, support, weighted + support)


def weights_csv(weights, header="weight"):
    """One weight per line, aligned with the rows of the input sample file."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([header])
    for w in np.asarray(weights, dtype=float).ravel():
        writer.writerow([repr(float(w))])
    return buf.getvalue()
