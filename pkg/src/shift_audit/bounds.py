"""Support-based target risk bounds and the excess target information loss.

Exact mode works on a :class:`SyntheticProblem` with an identity or
variable-selection representation: the induced densities and label posteriors
on Z are obtained by summing grid cells over the fibres of the map.

Where the source puts no mass on a Z cell, ``p_s(y | z)`` is undefined; it is
taken equal to ``p_t(y | z)`` there, so such cells add nothing to eta. The
bound remains valid for any choice because the support term already charges
those cells at the maximal loss.
"""

import csv
import io
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from shift_audit.densities import GridDensity, fit_kde
from shift_audit.divergence import (
    Kernel,
    check_eps,
    default_epsilon,
    fit_plugin,
    ipm_support_divergence_oracle,
    kernel_support_divergence,
    kernel_support_divergence_cells,
    mmd_squared_cells,
    support_divergence_empirical,
    support_divergence_exact,
)
from shift_audit.hypotheses import (
    ZERO_ONE,
    Hypothesis,
    HypothesisClass,
    halfspace_fractions,
    risk,
    theorem1_bound,
)
from shift_audit.weighting import truncate

UNOBSERVABLE = "unobservable"


class EtaUnavailable(ValueError):
    """The induced label posteriors cannot be computed for this representation."""


@dataclass(frozen=True)
class EtaReport:
    delta_target_mean: float
    delta_source_mean: float
    eta: float

    def to_dict(self):
        return {"delta_target_mean": self.delta_target_mean,
                "delta_source_mean": self.delta_source_mean, "eta": self.eta}


@dataclass(frozen=True)
class BoundReport:
    weighted_risk_term: float
    support_term: float
    support_term_kind: str
    eta_term: Union[float, str]
    epsilon: float
    M: float
    theorem: int = 2
    target_risk: Optional[float] = None

    @property
    def observable_total(self):
        return self.weighted_risk_term + self.support_term

    @property
    def partial(self):
        return self.eta_term == UNOBSERVABLE

    @property
    def total(self):
        """Full bound, or only its observable part when eta is unobservable."""
        if self.partial:
            return self.observable_total
        return self.observable_total + self.eta_term

    def to_dict(self):
        return {
            "theorem": self.theorem,
            "weighted_risk_term": self.weighted_risk_term,
            "support_term": self.support_term,
            "support_term_kind": self.support_term_kind,
            "eta_term": self.eta_term,
            "total": self.total,
            "total_kind": "observable-part-only (true bound >= total)" if self.partial else "full",
            "epsilon": self.epsilon,
            "M": self.M,
            "target_risk": self.target_risk,
        }


# ---------------------------------------------------------------------------
# induced quantities on Z


def _fibre_sum(values, grid, representation):
    """Sum a per-cell array over the fibres of an axis-aligned representation."""
    arr = np.asarray(values, dtype=float).reshape(grid.resolution)
    if representation.kind == "identity":
        return arr, grid
    if representation.kind != "variable-selection":
        raise EtaUnavailable("induced posteriors need an identity or variable-selection map")
    idx = list(representation.indices)
    drop = tuple(a for a in range(grid.dim) if a not in idx)
    out = arr.sum(axis=drop) if drop else arr
    kept = sorted(idx)
    out = np.transpose(out, [kept.index(a) for a in idx])
    zgrid = GridDensity.from_weights(grid.box[idx], tuple(grid.resolution[a] for a in idx), np.ones(out.shape))
    return out, zgrid


@dataclass(frozen=True)
class InducedProblem:
    source: GridDensity
    target: GridDensity
    posterior_source: np.ndarray
    posterior_target: np.ndarray


def induce(problem, representation):
    """Push source/target densities and label posteriors through the representation."""
    grid = problem.grid
    ms, zgrid = _fibre_sum(problem.source.cell_masses(), grid, representation)
    mt, _ = _fibre_sum(problem.target.cell_masses(), grid, representation)
    pi = problem.posterior.ravel()
    ms1, _ = _fibre_sum(problem.source.cell_masses() * pi, grid, representation)
    mt1, _ = _fibre_sum(problem.target.cell_masses() * pi, grid, representation)
    ms, mt, ms1, mt1 = (a.ravel() for a in (ms, mt, ms1, mt1))
    with np.errstate(invalid="ignore", divide="ignore"):
        post_t = np.where(mt > 0, mt1 / mt, 0.0)
        post_s = np.where(ms > 0, ms1 / ms, post_t)
    post_t = np.clip(post_t, 0.0, 1.0)
    post_s = np.clip(post_s, 0.0, 1.0)
    zs = GridDensity.from_weights(zgrid.box, zgrid.resolution, ms)
    zt = GridDensity.from_weights(zgrid.box, zgrid.resolution, mt)
    return InducedProblem(zs, zt, post_s, post_t)


def _z_fractions(zgrid, predictor):
    a, c = predictor.halfspace(zgrid.dim)
    return halfspace_fractions(zgrid, a, c)


def eta_excess_loss(problem, representation, predictor, loss=ZERO_ONE):
    """Excess target information loss of ``predictor`` on ``representation``."""
    if representation.is_invertible(problem.dim):
        return EtaReport(0.0, 0.0, 0.0)
    ind = induce(problem, representation)
    f = _z_fractions(ind.source, predictor)
    m_t = ind.target.cell_masses()
    under_target = float(m_t @ loss.expected(f, ind.posterior_target))
    under_source = float(m_t @ loss.expected(f, ind.posterior_source))
    r_t = risk(Hypothesis(representation, predictor), problem, "target", loss=loss)
    dt, ds = under_target - r_t, under_source - r_t
    return EtaReport(dt, ds, dt - ds)


def lemma5_decomposition(problem, representation, predictor, loss=ZERO_ONE):
    """``(target risk, E_{p_t(z) p_s(y|z)}[loss] + eta)``: the two sides of the identity."""
    ind = induce(problem, representation)
    f = _z_fractions(ind.source, predictor)
    m_t = ind.target.cell_masses()
    mixed = float(m_t @ loss.expected(f, ind.posterior_source))
    eta = float(m_t @ (loss.expected(f, ind.posterior_target) - loss.expected(f, ind.posterior_source)))
    r_t = risk(Hypothesis(representation, predictor), problem, "target", loss=loss)
    return r_t, mixed + eta


def _resolve_eta(eta, problem, representation, predictor, loss):
    if eta in (None, UNOBSERVABLE):
        return UNOBSERVABLE
    if eta == "oracle":
        try:
            return eta_excess_loss(problem, representation, predictor, loss).eta
        except EtaUnavailable:
            return UNOBSERVABLE
    return float(eta)


def _exact_weighted_term(ind, predictor, eps, loss):
    f = _z_fractions(ind.source, predictor)
    w = truncate(ind.source.cell_values.ravel(), ind.target.cell_values.ravel(), eps)
    return float(ind.source.cell_masses() @ (w * loss.expected(f, ind.posterior_source)))


def theorem2_bound(problem, representation, predictor, loss=ZERO_ONE, eps=0.2, eta="oracle"):
    """Support-based bound computed exactly on a synthetic problem.

    ``eta`` is ``"oracle"`` (computed from the known posterior), a number, or
    ``"unobservable"``; in the last case the report carries only the observable
    part and says so.
    """
    eps = check_eps(eps)
    ind = induce(problem, representation)
    weighted = _exact_weighted_term(ind, predictor, eps, loss)
    support = loss.M * support_divergence_exact(ind.source, ind.target, eps).value
    eta_term = _resolve_eta(eta, problem, representation, predictor, loss)
    r_t = risk(Hypothesis(representation, predictor), problem, "target", loss=loss)
    return BoundReport(weighted, support, "max-loss", eta_term, eps, loss.M, 2, r_t)


def theorem3_bound(
    problem, representation, predictor, loss=ZERO_ONE, eps=0.2, kernel=None,
    eta="oracle", norm_bound=None, support="kernel",
):
    """IPM variant of :func:`theorem2_bound`.

    ``support="kernel"`` uses ``norm_bound * sqrt(kernel support divergence)``
    with cells as point masses at their centres; ``support="ipm-oracle"`` uses
    the supremum over all ``[0, M]``-valued loss functions.
    """
    eps = check_eps(eps)
    ind = induce(problem, representation)
    weighted = _exact_weighted_term(ind, predictor, eps, loss)
    lam = loss.M if norm_bound is None else float(norm_bound)
    if support == "kernel":
        kernel = kernel or Kernel(1.0)
        value = kernel_support_divergence_cells(ind.source, ind.target, eps, kernel).value
        term, kind = lam * np.sqrt(value), "ipm-kernel"
    elif support == "ipm-oracle":
        term, kind = ipm_support_divergence_oracle(ind.source, ind.target, eps, loss.M), "ipm-oracle"
    else:
        raise ValueError(f"unknown support term {support!r}")
    eta_term = _resolve_eta(eta, problem, representation, predictor, loss)
    r_t = risk(Hypothesis(representation, predictor), problem, "target", loss=loss)
    return BoundReport(weighted, float(term), kind, eta_term, eps, loss.M, 3, r_t)


# ---------------------------------------------------------------------------
# sample-based versions


def _z_samples(source, target, hypothesis):
    if not source.labeled:
        raise ValueError("source samples must carry labels")
    if source.dim != target.dim:
        raise ValueError(f"dimension mismatch: source {source.dim}, target {target.dim}")
    rep = hypothesis.representation
    return rep.apply(source.points), rep.apply(target.points)


def _sample_weighted_term(zs, source, hypothesis, p_hat, q_hat, eps, loss):
    p = p_hat.evaluate(zs)
    w = truncate(p, q_hat.evaluate(zs), eps)
    losses = loss(hypothesis.predictor.predict(zs), source.labels)
    return float(np.mean(w * losses))


def theorem2_bound_from_samples(
    source, target, hypothesis, loss=ZERO_ONE, eps=None, eta=None,
    estimator="kde", bandwidth="silverman", bins=50,
):
    """Plug-in version of :func:`theorem2_bound` from labelled source samples.

    ``eta`` is a number (e.g. an oracle value) or ``None`` for unobservable.
    """
    zs, zt = _z_samples(source, target, hypothesis)
    p_hat, q_hat = fit_plugin(zs, zt, estimator, bandwidth, bins)
    eps = check_eps(default_epsilon(p_hat, zs, zt) if eps is None else eps)
    weighted = _sample_weighted_term(zs, source, hypothesis, p_hat, q_hat, eps, loss)
    d = support_divergence_empirical(zs, zt, eps, densities=(p_hat, q_hat)).value
    eta_term = UNOBSERVABLE if eta is None else float(eta)
    return BoundReport(weighted, loss.M * d, "max-loss", eta_term, eps, loss.M, 2)


def theorem3_bound_from_samples(
    source, target, hypothesis, loss=ZERO_ONE, eps=None, kernel=None, eta=None,
    norm_bound=None, bandwidth="silverman",
):
    zs, zt = _z_samples(source, target, hypothesis)
    p_hat = fit_kde(zs, bandwidth)
    q_hat = fit_kde(zt, bandwidth)
    eps = check_eps(default_epsilon(p_hat, zs, zt) if eps is None else eps)
    weighted = _sample_weighted_term(zs, source, hypothesis, p_hat, q_hat, eps, loss)
    kernel = kernel or Kernel.median_heuristic(zs, zt)
    value = kernel_support_divergence(zs, zt, p_hat, eps, kernel).value
    lam = loss.M if norm_bound is None else float(norm_bound)
    eta_term = UNOBSERVABLE if eta is None else float(eta)
    return BoundReport(weighted, lam * float(np.sqrt(value)), "ipm-kernel", eta_term, eps, loss.M, 3)


# ---------------------------------------------------------------------------
# comparison table

COMPARE_COLUMNS = [
    "hypothesis", "epsilon", "sigma", "source_risk", "target_risk",
    "theorem1_total", "theorem2_total", "theorem3_total", "theorem3_ipm_total",
    "mmd_squared", "d_supp", "eta", "invariance_objective",
]


def compare_bounds(problem, hypotheses, eps_values=(0.2,), sigmas=(1.0,), names=None, n_cutoffs=101):
    """One row per (hypothesis, epsilon, sigma) with every bound next to the exact target risk.

    Theorem 1 uses the class of thresholds on the hypothesis's own representation.
    ``invariance_objective`` is source risk plus squared MMD on Z, the quantity a
    domain-invariant learner drives down.
    """
    rows = []
    names = names or [f"h{i}" for i in range(len(hypotheses))]
    for name, h in zip(names, hypotheses):
        rep, pred = h.representation, h.predictor
        ind = induce(problem, rep)
        hclass = HypothesisClass.thresholds(rep, ind.source.box, n_cutoffs=n_cutoffs)
        t1 = theorem1_bound(h, hclass, problem)
        eta = eta_excess_loss(problem, rep, pred).eta
        for eps in eps_values:
            t2 = theorem2_bound(problem, rep, pred, eps=eps, eta=eta)
            d_supp = support_divergence_exact(ind.source, ind.target, eps).value
            t3_ipm = theorem3_bound(problem, rep, pred, eps=eps, eta=eta, support="ipm-oracle")
            for sigma in sigmas:
                k = Kernel(sigma)
                t3 = theorem3_bound(problem, rep, pred, eps=eps, kernel=k, eta=eta)
                mmd = mmd_squared_cells(ind.source, ind.target, k).value
                rows.append({
                    "hypothesis": name,
                    "epsilon": eps,
                    "sigma": sigma,
                    "source_risk": t1.source_risk,
                    "target_risk": t2.target_risk,
                    "theorem1_total": t1.total,
                    "theorem2_total": t2.total,
                    "theorem3_total": t3.total,
                    "theorem3_ipm_total": t3_ipm.total,
                    "mmd_squared": mmd,
                    "d_supp": d_supp,
                    "eta": eta,
                    "invariance_objective": t1.source_risk + mmd,
                })
    return rows


def rows_to_csv(rows, columns=None):
    columns = columns or COMPARE_COLUMNS
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                         for k, v in r.items()})
    return buf.getvalue()
