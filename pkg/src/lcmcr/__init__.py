"""Latent-class multiple-systems population size estimation.

Capture-recapture over K registers where list errors (overcoverage) are
modeled as extra latent classes.  The package covers model specification
and validation, degrees-of-freedom accounting, conditional-likelihood EM
fitting, class-size inflation under the standard and overcoverage
readings, synthetic data generation, and packaged experiments.
"""

from ._backend import backend_name, has_compiled, set_backend
from .counts import CaptureCounts
from .errors import (
    CapacityError,
    LcmcrError,
    NonIdentifiableError,
    NumericalError,
    UnboundedEstimateError,
    ValidationError,
    Violation,
)
from .experiments import ExperimentReport, df_family_table, run_critique, run_scenario1
from .fit import (
    EStepResult,
    FitConfig,
    FitResult,
    canonicalize,
    cond_loglik,
    e_step,
    fit,
    m_step,
)
from .model import (
    PROB_EPS,
    CaptureProfile,
    DependenceTerm,
    MissProbability,
    ModelSpec,
    ParameterSet,
    cell_probability,
    class_conditional_table,
    full_distribution,
    implied_capture_margins,
    miss_probability,
    validate,
    validate_spec,
)
from .popsize import (
    PopEstimate,
    class_sizes,
    designate_target,
    estimate_overcoverage,
    estimate_standard,
)
from .simulate import (
    GeneratingConfig,
    SimOutput,
    preset_critique,
    preset_scenario1,
    simulate,
    two_by_two_from_margins,
)
from .structure import (
    RankCheck,
    StructureReport,
    degrees_of_freedom,
    jacobian_rank_check,
    parameter_count,
)

__version__ = "0.1.0"

__all__ = [
    "CaptureCounts",
    "CaptureProfile",
    "CapacityError",
    "DependenceTerm",
    "EStepResult",
    "ExperimentReport",
    "FitConfig",
    "FitResult",
    "GeneratingConfig",
    "LcmcrError",
    "MissProbability",
    "ModelSpec",
    "NonIdentifiableError",
    "NumericalError",
    "ParameterSet",
    "PopEstimate",
    "PROB_EPS",
    "RankCheck",
    "SimOutput",
    "StructureReport",
    "UnboundedEstimateError",
    "ValidationError",
    "Violation",
    "backend_name",
    "canonicalize",
    "cell_probability",
    "class_conditional_table",
    "class_sizes",
    "cond_loglik",
    "degrees_of_freedom",
    "designate_target",
    "df_family_table",
    "e_step",
    "estimate_overcoverage",
    "estimate_standard",
    "fit",
    "full_distribution",
    "has_compiled",
    "implied_capture_margins",
    "jacobian_rank_check",
    "m_step",
    "miss_probability",
    "parameter_count",
    "preset_critique",
    "preset_scenario1",
    "run_critique",
    "run_scenario1",
    "set_backend",
    "simulate",
    "two_by_two_from_margins",
    "validate",
    "validate_spec",
]
