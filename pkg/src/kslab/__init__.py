"""Finite-volume solver for a 2D chemotaxis system with nonlinear diffusion,
nonlinear sensitivity, and a sub-logistic source, plus the diagnostic
functionals and inequality checks used to observe boundedness vs blow-up."""

from .errors import (
    GridMismatchError,
    InvalidCoefficientError,
    KslabError,
    PositivityError,
    SolverStallError,
    ValidationError,
    WindowTooShortError,
)
from .model import (
    CoefficientSpec,
    ModelSpec,
    SourceSpec,
    eval_D,
    eval_S,
    eval_f,
    homogeneous_steady_state,
    log_ue,
    validate_model,
)
from .grid import (
    Field,
    Grid,
    chemotactic_divergence,
    diffusive_divergence,
    grad_pow_integral,
    grad_sq_integral,
    integrate,
    laplacian_neumann,
    read_snapshot,
    write_snapshot,
)
from .stepper import State, StepOptions, adapt_dt, run, solve_helmholtz, step
from .diagnostics import (
    DiagnosticsConfig,
    DiagnosticsRecord,
    detect_blowup,
    dissipation_window,
    energy_y,
    moser_ladder,
)
from . import inequalities
from .harness import (
    RunConfig,
    RunResult,
    SweepPlan,
    cli,
    convergence_study,
    load_config,
    make_initial_data,
    run_sweep,
)

__version__ = "0.1.0"
