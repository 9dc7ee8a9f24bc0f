"""Simulation laboratory for Liouville first-passage percolation.

Samples heat-kernel smoothed log-correlated Gaussian fields (with and without
compactly supported kernel cutoffs), builds exponential-weight grid metrics,
estimates crossing-length quantiles and tails, and runs the deterministic
quadrature checks for the conformal-covariance and Dirichlet-field bridges.
"""

__version__ = "0.1.0"

from .grids import GridSpec, required_padding
from .kernels import TruncationParams, bump, cov_phi, finite_range, heat_kernel, sigma_t
from .fields import (
    FieldSample,
    FieldStats,
    dump_field,
    field_stats,
    load_field,
    resample_component,
    sample_phi,
    sample_psi,
    sup_difference,
)
from .metric import (
    CrossingResult,
    WeightGrid,
    build_weights,
    condition_t_ratio,
    crossing,
    diameter_estimate,
    holder_ratios,
    point_distance,
)
from .estimators import (
    ExponentFit,
    QuantileTable,
    SampleSet,
    condition_t_norm,
    efron_stein_decompose,
    exponent_fit,
    fkg_check,
    mc_crossings,
    quantile,
    quantile_shift_check,
    rsw_compare,
    tail_curve,
    var_log_crossing,
    weak_mult_check,
)
from .conformal import (
    MapSpec,
    boundary_term_integral,
    builtin_map,
    coupled_scaling_check,
    kernel_gap_integral,
    third_term_variance,
)
from .gff import (
    GffSample,
    compare_crossing_laws,
    killed_gap_curve,
    killed_kernel,
    killed_kernel_gap,
    mollify,
    sample_gff,
)

__all__ = [
    "GridSpec",
    "required_padding",
    "TruncationParams",
    "bump",
    "cov_phi",
    "finite_range",
    "heat_kernel",
    "sigma_t",
    "FieldSample",
    "FieldStats",
    "sample_phi",
    "sample_psi",
    "resample_component",
    "field_stats",
    "sup_difference",
    "dump_field",
    "load_field",
    "WeightGrid",
    "CrossingResult",
    "build_weights",
    "crossing",
    "point_distance",
    "diameter_estimate",
    "condition_t_ratio",
    "holder_ratios",
    "SampleSet",
    "QuantileTable",
    "ExponentFit",
    "mc_crossings",
    "quantile",
    "tail_curve",
    "quantile_shift_check",
    "rsw_compare",
    "fkg_check",
    "var_log_crossing",
    "efron_stein_decompose",
    "condition_t_norm",
    "exponent_fit",
    "weak_mult_check",
    "MapSpec",
    "builtin_map",
    "kernel_gap_integral",
    "boundary_term_integral",
    "third_term_variance",
    "coupled_scaling_check",
    "GffSample",
    "sample_gff",
    "mollify",
    "killed_kernel",
    "killed_kernel_gap",
    "killed_gap_curve",
    "compare_crossing_laws",
]
