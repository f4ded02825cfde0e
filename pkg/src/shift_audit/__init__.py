"""Support-based diagnostics for unsupervised domain adaptation under covariate shift."""

__version__ = "0.1.0"

from shift_audit.densities import (
    DiscreteDensity,
    GridDensity,
    KdeDensity,
    SampleSet,
    density_quantile,
    evaluate_density,
    fit_histogram,
    fit_kde,
    integrate,
)
from shift_audit.divergence import (
    DivergenceEstimate,
    Kernel,
    delta_indicator,
    hinge_support_divergence,
    ipm_support_divergence_oracle,
    kernel_support_divergence,
    mmd_squared,
    support_divergence_empirical,
    support_divergence_exact,
)

__all__ = [
    "DiscreteDensity",
    "DivergenceEstimate",
    "GridDensity",
    "KdeDensity",
    "Kernel",
    "SampleSet",
    "delta_indicator",
    "density_quantile",
    "evaluate_density",
    "fit_histogram",
    "fit_kde",
    "hinge_support_divergence",
    "integrate",
    "ipm_support_divergence_oracle",
    "kernel_support_divergence",
    "mmd_squared",
    "support_divergence_empirical",
    "support_divergence_exact",
]
