"""Optimal input design and drift estimation for a fractional-noise oscillator."""

__version__ = "0.1.0"

from .errors import (
    BoundaryWarning,
    ConditioningError,
    DomainError,
    ExperimentAborted,
    FracDesignError,
    GridError,
    GridResolutionError,
    NumericalError,
    RegimeWarning,
)
from .fractional import (
    HurstConstants,
    SampledControl,
    TimeGrid,
    compute_constants,
    eval_KH,
    eval_kH,
    eval_wH,
    u_from_v,
    v_from_u,
    zero_control,
)
from .state import (
    SystemParams,
    ZetaSolver,
    eval_system_matrices,
    solve_fundamental_matrix,
    solve_physical_x,
    solve_zeta,
)
from .design import ControlSpec, control_energy, design_optimal_input, realize_real_control
from .fisher import (
    FisherReport,
    asymptotic_fisher,
    asymptotic_rate,
    fisher_brownian,
    fisher_fractional,
    g_function,
    ik_condition_check,
)
from .simulate import (
    ObservationRecord,
    simulate_fbm,
    simulate_observation,
    simulate_Y_physical,
    transform_Y_to_Z,
)
from .estimators import EstimateReport, log_likelihood, mle, newton_two_stage, preliminary_estimate
from .spectral import (
    build_KT,
    det_psi1,
    eval_G,
    laplace_identity_check,
    top_eigenvalue,
    upsilon_roots,
)
from .experiment import ExperimentConfig, MonteCarloSummary, run_experiment, summarize
