"""Switched-linear dynamics under state feedback: simulation,
geometric-ergodicity certification, regenerative steady-state
estimation, finite-sample error bounds, and scaling experiments."""

from .bounds import (
    BoundConstants,
    BoundReport,
    BoundValidation,
    RequiredSamples,
    bound_terms,
    required_samples,
    validate_bound,
)
from .config import (
    ModelConfig,
    load_model_config,
    model_config_from_dict,
    model_config_to_dict,
    save_model_config,
    write_manifest,
    write_trajectory_csv,
)
from .errors import (
    ClassificationConflict,
    ConfigError,
    DivergenceError,
    DriftViolation,
    InsufficientBlocks,
    MaxStepsExceeded,
    MinorizationViolation,
    NoRegeneration,
    NoRegion,
    NotCertifiable,
    RejectionStall,
    SldsimError,
    UncoveredExterior,
)
from .ergodicity import (
    Certificate,
    DriftReport,
    MinorizationReport,
    OverlapReport,
    RegionClassification,
    beta_lower_bound,
    certify,
    classify_regions,
    drift_check,
    gaussian_overlap,
    log_ball_volume,
    log_gaussian_overlap,
    minorization_check,
    overlap_positivity_check,
    sample_in_ball,
)
from .model import (
    ClosedLoop,
    Policy,
    Region,
    RewardSpec,
    SldsModel,
    Trajectory,
    closed_loop,
    polyhedron,
    radial_shell,
    region_of,
    reward,
    simulate,
    spectral_norm,
    step,
)
from .regen import (
    EstimatorOutput,
    Minorization,
    RegenerationLog,
    RewardEstimate,
    SumDecomposition,
    check_minorization_pointwise,
    decompose_sum,
    estimate_all,
    estimate_invariant_prob,
    estimate_reward,
    estimate_sigma2_as,
    iid_debug_minorization,
    operational_minorization,
    rewards_of,
    sample_nu_hat,
    simulate_regenerative,
    split_step,
)
from .sweep import (
    CellSummary,
    LinearFit,
    RawTrial,
    SweepConfig,
    SweepResult,
    build_case_study,
    pseudo_sample_complexity,
    reference_reward_average,
    run_pipeline,
    sweep_dimension,
    sweep_gamma,
    trial_seed_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "BoundConstants", "BoundReport", "BoundValidation",
    "RequiredSamples", "bound_terms", "required_samples",
    "validate_bound",
    "ModelConfig", "load_model_config", "model_config_from_dict",
    "model_config_to_dict", "save_model_config", "write_manifest",
    "write_trajectory_csv",
    "ClassificationConflict", "ConfigError", "DivergenceError",
    "DriftViolation", "InsufficientBlocks", "MaxStepsExceeded",
    "MinorizationViolation", "NoRegeneration", "NoRegion",
    "NotCertifiable", "RejectionStall", "SldsimError",
    "UncoveredExterior",
    "Certificate", "DriftReport", "MinorizationReport", "OverlapReport",
    "RegionClassification", "beta_lower_bound", "certify",
    "classify_regions", "drift_check", "gaussian_overlap",
    "log_ball_volume", "log_gaussian_overlap", "minorization_check",
    "overlap_positivity_check", "sample_in_ball",
    "ClosedLoop", "Policy", "Region", "RewardSpec", "SldsModel",
    "Trajectory", "closed_loop", "polyhedron", "radial_shell",
    "region_of", "reward", "simulate", "spectral_norm", "step",
    "EstimatorOutput", "Minorization", "RegenerationLog",
    "RewardEstimate", "SumDecomposition",
    "check_minorization_pointwise", "decompose_sum", "estimate_all",
    "estimate_invariant_prob", "estimate_reward", "estimate_sigma2_as",
    "iid_debug_minorization", "operational_minorization", "rewards_of",
    "sample_nu_hat", "simulate_regenerative", "split_step",
    "CellSummary", "LinearFit", "RawTrial", "SweepConfig",
    "SweepResult", "build_case_study", "pseudo_sample_complexity",
    "reference_reward_average", "run_pipeline", "sweep_dimension",
    "sweep_gamma", "trial_seed_sequence",
    "__version__",
]
