"""Cell-free massive MIMO downlink: deterministic-equivalent spectral
efficiencies for maximum-ratio and zero-forcing precoding, Monte Carlo
certification, and joint AP-selection/power-allocation solvers."""

from .apg import (
    InfeasibleStartError,
    PenaltyConfig,
    SolutionReport,
    apg_solve,
    default_init,
    extract_solution,
    pack_vars,
    penalty_gradient,
    penalty_value,
    project,
    unpack_vars,
)
from .channel import estimation_stats, sample_channel_batch, sample_channels
from .config import (
    ConfigError,
    PilotLengthError,
    SystemConfig,
    WeightSumError,
    ZfDimensionError,
    load_config,
    validate_config,
)
from .experiments import (
    ExperimentSpec,
    baseline_epa_ras,
    baseline_opa_ras,
    build_instance,
    run_experiment,
)
from .montecarlo import (
    SingularGramError,
    certify_closed_form,
    estimate_uatf_terms,
    moment_identity_suite,
    write_validation_csv,
)
from .network import compute_large_scale, place_network, shadowing_covariance
from .rates import (
    AssociationPower,
    CoeffTable,
    DecisionVars,
    build_coeffs,
    epa_power,
    se_and_sse,
    theta_from_power,
)
from .sca import (
    ScaOptions,
    ScaPoint,
    SubproblemInfeasible,
    sca_solve,
    sca_surrogates,
    solve_subproblem,
)

__version__ = "0.1.0"

__all__ = [
    "AssociationPower",
    "CoeffTable",
    "ConfigError",
    "DecisionVars",
    "ExperimentSpec",
    "InfeasibleStartError",
    "PenaltyConfig",
    "PilotLengthError",
    "ScaOptions",
    "ScaPoint",
    "SingularGramError",
    "SolutionReport",
    "SubproblemInfeasible",
    "SystemConfig",
    "WeightSumError",
    "ZfDimensionError",
    "apg_solve",
    "baseline_epa_ras",
    "baseline_opa_ras",
    "build_coeffs",
    "build_instance",
    "certify_closed_form",
    "compute_large_scale",
    "default_init",
    "epa_power",
    "estimate_uatf_terms",
    "estimation_stats",
    "extract_solution",
    "load_config",
    "moment_identity_suite",
    "pack_vars",
    "penalty_gradient",
    "penalty_value",
    "place_network",
    "project",
    "run_experiment",
    "sample_channel_batch",
    "sample_channels",
    "sca_solve",
    "sca_surrogates",
    "se_and_sse",
    "shadowing_covariance",
    "solve_subproblem",
    "theta_from_power",
    "unpack_vars",
    "validate_config",
]
