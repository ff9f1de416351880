"""Linear-quadratic optimal control of evolution equations with input memory.

The state obeys ``w' = Aw + Bu + int_0^t k(t-s) B u(s) ds`` and the cost is
``int (|Cw|^2 + |u|^2)``. The package discretizes the problem on a uniform
grid, solves it in open loop, synthesizes the feedback operators
``P0, P1, P2`` two independent ways and cross-checks them.
"""
from .closed_loop import (
    ClosedLoopRecord,
    apply_evolution,
    check_control_transition,
    check_state_transition,
    simulate_closed_loop,
)
from .cost_operators import (
    CostOperatorField,
    FeedbackKernels,
    build_feedback_kernels,
    build_field,
    compute_P0,
    compute_P1,
    compute_P2,
    quadratic_cost_form,
)
from .errors import (
    BadGrid,
    BadHorizon,
    ConfigError,
    DimensionMismatch,
    HistoryLengthMismatch,
    IndexOutOfRange,
    MemLQError,
    MemoryBudgetExceeded,
    NoConvergence,
    NonFinite,
    ParseError,
    SchemaError,
)
from .lifted import DiscretizedOperators, discretize
from .open_loop import evaluate_cost, optimality_residual, solve_open_loop
from .problem import (
    AugmentedState,
    ControlTrajectory,
    KernelSpec,
    ProblemSpec,
    SolveResult,
    StateTrajectory,
    TimeGrid,
    build_grid,
    make_augmented_state,
    validate_spec,
)
from .riccati import (
    classical_riccati_reference,
    dre_residual,
    integrate_dre,
    kernel_derivative_check,
    matrix_form_residual,
)

__version__ = "0.1.0"
