from .core import (
    FIELD_MODES,
    ExperimentDataset,
    FitParameters,
    FitResult,
    ForwardModel,
    IdentifiabilityWarning,
    ParameterLayout,
    SpectrumMeta,
    fit_global,
    jacobian,
    residuals,
)
from .seeding import (
    detect_dips,
    direction_grid_26,
    estimate_noise,
    field_candidates,
    fit_dataset,
    seed_initialization,
    zero_field_candidates,
)
from .survival import HypothesisFit, SurvivalReport, default_hypotheses, group_survival_scan
from .symmetry import SymmetryMatch, cubic_operations, match_modulo_symmetry, transform_stress

__all__ = [
    "FIELD_MODES",
    "ExperimentDataset",
    "FitParameters",
    "FitResult",
    "HypothesisFit",
    "ForwardModel",
    "IdentifiabilityWarning",
    "ParameterLayout",
    "SpectrumMeta",
    "SurvivalReport",
    "SymmetryMatch",
    "cubic_operations",
    "default_hypotheses",
    "detect_dips",
    "direction_grid_26",
    "estimate_noise",
    "field_candidates",
    "fit_dataset",
    "fit_global",
    "group_survival_scan",
    "jacobian",
    "match_modulo_symmetry",
    "residuals",
    "seed_initialization",
    "transform_stress",
    "zero_field_candidates",
]
