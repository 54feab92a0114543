"""Event-triggered receding-horizon control with an integral trigger.

Design, certification, and closed-loop simulation for continuous-time
nonlinear systems under bounded additive disturbance: terminal
ingredient synthesis, closed-form triggering levels, feasibility and
stability certificates, a shooting-based optimal control solver with
time-decaying state bounds, and a simulator that compares the integral
trigger against a pointwise one on identical disturbance realizations.
"""

from .certify import (
    Certificate,
    ConditionRecord,
    DesignParams,
    certify,
    check_feasibility,
    check_stability,
    error_sup_bound,
    find_n_min,
    sup_derivative_check,
    max_disturbance,
    ultimate_bound,
)
from .model import (
    DISTURBANCE_KINDS,
    DisturbanceGenerator,
    IntegrationDivergedError,
    SystemModel,
    Trajectory,
    cart_damper_spring,
    estimate_lipschitz,
    eval_nominal,
    integrate,
    linearize,
    model_from_terms,
    rk4_step,
)
from .ocp import (
    OcpSolution,
    OcpSpec,
    audit_solution,
    cost,
    dual_mode_candidate,
    robustness_bound,
    solve,
)
from .sim import (
    EventRecord,
    SimOptions,
    SimResult,
    TRIGGER_KINDS,
    initial_solution,
    run_monte_carlo,
    run_simulation,
    trial_seed,
)
from .synthesis import (
    SynthesisError,
    TerminalIngredients,
    choose_kappa,
    lqr_gain,
    pnorm,
    solve_lyapunov,
    sqrt_pd,
    synthesize,
    terminal_level,
    verify_ingredients,
)
from .trigger import (
    PointwiseTrigger,
    TriggerState,
    calibrate_sigma,
    design_delta,
    effective_beta,
    step_integral,
    step_pointwise,
)

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "ConditionRecord",
    "DesignParams",
    "DisturbanceGenerator",
    "DISTURBANCE_KINDS",
    "EventRecord",
    "IntegrationDivergedError",
    "OcpSolution",
    "OcpSpec",
    "PointwiseTrigger",
    "SimOptions",
    "SimResult",
    "SynthesisError",
    "SystemModel",
    "TerminalIngredients",
    "Trajectory",
    "TRIGGER_KINDS",
    "TriggerState",
    "audit_solution",
    "calibrate_sigma",
    "cart_damper_spring",
    "certify",
    "check_feasibility",
    "check_stability",
    "choose_kappa",
    "cost",
    "design_delta",
    "dual_mode_candidate",
    "effective_beta",
    "error_sup_bound",
    "estimate_lipschitz",
    "eval_nominal",
    "find_n_min",
    "initial_solution",
    "integrate",
    "sup_derivative_check",
    "linearize",
    "lqr_gain",
    "max_disturbance",
    "model_from_terms",
    "pnorm",
    "rk4_step",
    "robustness_bound",
    "run_monte_carlo",
    "run_simulation",
    "solve",
    "solve_lyapunov",
    "sqrt_pd",
    "step_integral",
    "step_pointwise",
    "synthesize",
    "terminal_level",
    "trial_seed",
    "ultimate_bound",
    "verify_ingredients",
]
