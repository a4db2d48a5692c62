"""Deterministic simulator for federated nonconvex optimisation with STEM and FedAvg."""

from .diagnostics import (
    consensus,
    drift,
    finite_diff_check,
    gradient_error,
    ifo_to_eps,
    is_stationary,
    potential,
    rounds_to_eps,
)
from .engine import RunRecord, run_fedavg, run_stem, select_output
from .errors import (
    ConfigurationError,
    DegenerateScheduleError,
    EstimationError,
    FitError,
    ProtocolError,
    UsageError,
)
from .experiment import (
    REFERENCE_PROBLEM,
    ExperimentConfig,
    complexity_curve,
    fit_complexity,
    reference_configs,
    run_experiment,
    sweep_tradeoff,
)
from .problems import (
    Family,
    ProblemInstance,
    SmoothnessProfile,
    least_squares_from_offsets,
    make_least_squares,
    make_logistic_nonconvex,
    make_problem,
    make_two_layer_tanh,
    measure_profile,
)
from .schedules import (
    constant_schedule,
    eta_of_t,
    fedavg_tradeoff,
    momentum_of_t,
    practical_schedule,
    stem_tradeoff,
    theoretical_schedule,
)

__version__ = "0.1.0"
