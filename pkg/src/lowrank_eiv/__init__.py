"""Low-rank matrix recovery from corrupted covariates.

Estimates a low-rank coefficient matrix from trace-regression data whose
covariates are observed through additive noise or random missingness.  The
estimator minimizes a bias-corrected quadratic loss plus a folded-concave
spectral penalty (nuclear, SCAD, or MCP on the singular values) over a
nuclear-norm ball, solved by projected proximal gradient descent.
"""

__version__ = "0.1.0"

from .analysis import (
    BoundEvaluation,
    GradientNorms,
    RecoveryReport,
    SpectrumSplit,
    StructureReport,
    check_structure,
    classify_spectrum,
    evaluate_bound,
    measure_gradient_norms,
    recovery_report,
)
from .experiment import (
    CSV_COLUMNS,
    PRESETS,
    ConfigError,
    DatasetConfig,
    ExperimentConfig,
    evaluate_cell,
    load_config,
    load_dataset_config,
    preset_config,
    run_experiment,
    write_csv,
)
from .loss import (
    CurvatureReport,
    SurrogatePair,
    bound_quantities,
    build_surrogate,
    loss_grad,
    loss_value,
    verify_lsc,
    verify_rsc,
)
from .regularizers import (
    RegularizerSpec,
    StepSizeError,
    concave_part,
    concave_part_deriv,
    penalty,
    penalty_deriv,
    prox,
)
from .rng import derive_seed, substream
from .simulate import (
    CovarianceSpec,
    ObservationSet,
    TrueModel,
    gen_true_low_rank,
    load_dataset,
    make_dataset,
    save_dataset,
)
from .solver import (
    DivergenceError,
    SolverConfig,
    SolverResult,
    objective,
    reference_step,
    solve,
    stationarity_gap,
)
from .spectral import (
    SubspacePair,
    SvdTriple,
    decompose_2r,
    nuclear_norm,
    numerical_rank,
    prox_nuclear_in_ball,
    singular_values,
    spectral_concave,
    spectral_concave_grad,
    spectral_penalty,
    split_top,
    subspace_project,
    svd_triple,
)

__all__ = [
    "BoundEvaluation",
    "CSV_COLUMNS",
    "ConfigError",
    "CovarianceSpec",
    "CurvatureReport",
    "DatasetConfig",
    "DivergenceError",
    "ExperimentConfig",
    "GradientNorms",
    "ObservationSet",
    "PRESETS",
    "RecoveryReport",
    "RegularizerSpec",
    "SolverConfig",
    "SolverResult",
    "SpectrumSplit",
    "StepSizeError",
    "StructureReport",
    "SubspacePair",
    "SurrogatePair",
    "SvdTriple",
    "TrueModel",
    "bound_quantities",
    "build_surrogate",
    "check_structure",
    "classify_spectrum",
    "concave_part",
    "concave_part_deriv",
    "decompose_2r",
    "derive_seed",
    "evaluate_bound",
    "evaluate_cell",
    "gen_true_low_rank",
    "load_config",
    "load_dataset",
    "load_dataset_config",
    "loss_grad",
    "loss_value",
    "make_dataset",
    "measure_gradient_norms",
    "nuclear_norm",
    "numerical_rank",
    "objective",
    "penalty",
    "penalty_deriv",
    "preset_config",
    "prox",
    "prox_nuclear_in_ball",
    "recovery_report",
    "reference_step",
    "run_experiment",
    "save_dataset",
    "singular_values",
    "solve",
    "spectral_concave",
    "spectral_concave_grad",
    "spectral_penalty",
    "split_top",
    "stationarity_gap",
    "subspace_project",
    "substream",
    "svd_triple",
    "verify_lsc",
    "verify_rsc",
    "write_csv",
]
