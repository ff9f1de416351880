"""The open-loop optimal control from the optimality condition ``Lambda u = -N X0``."""
from __future__ import annotations

import numpy as np

from .errors import IndexOutOfRange
from .lifted import (
    DiscretizedOperators,
    apply_G,
    apply_G_adjoint,
    free_evolution,
    lambda_apply,
)
from .problem import AugmentedState, SolveResult, control, state
from .solvers import LambdaSolver


def _anchor(ops: DiscretizedOperators, s: int, X0: AugmentedState) -> None:
    ops.check_index(s)
    if X0.s_index != s:
        raise IndexOutOfRange(f"state anchored at {X0.s_index}, solve requested at {s}")
    if s == ops.N:
        raise IndexOutOfRange("no control interval left at the final node")


def trajectory(ops: DiscretizedOperators, X0: AugmentedState, u: np.ndarray) -> np.ndarray:
    """State samples on ``[s, T]`` generated by ``X0`` and the controls ``u``."""
    return free_evolution(ops, X0) + apply_G(ops, X0.s_index, u)


def grid_norm(ops: DiscretizedOperators, s: int, u: np.ndarray) -> float:
    om = ops.control_weights(s)
    return float(np.sqrt(np.einsum("j,ja,ja->", om, u, u)))


def evaluate_cost(ops: DiscretizedOperators, s: int, X0: AugmentedState, u) -> float:
    u = ops._controls(s, u)
    w = trajectory(ops, X0, u)
    W = ops.local_weights(s)
    om = ops.control_weights(s)
    Cw = w @ ops.spec.C.T
    return float(np.einsum("i,ia,ia->", W, Cw, Cw) + np.einsum("j,ja,ja->", om, u, u))


def rhs_of(ops: DiscretizedOperators, s: int, X0: AugmentedState) -> np.ndarray:
    """``N_s X0`` as a raw array."""
    free = free_evolution(ops, X0)
    return apply_G_adjoint(ops, s, free @ ops.Q.T)


def optimality_residual(ops: DiscretizedOperators, s: int, X0: AugmentedState, u) -> float:
    _anchor(ops, s, X0)
    u = ops._controls(s, u)
    return grid_norm(ops, s, lambda_apply(ops, s, u) + rhs_of(ops, s, X0))


def solve_open_loop(ops: DiscretizedOperators, s: int, X0: AugmentedState,
                    tol: float = 1e-10, method: str = "auto",
                    solver: LambdaSolver | None = None) -> SolveResult:
    """Unique minimizer of the discretized cost from ``(s, X0)``.

    ``method`` is ``"dense"`` (Cholesky), ``"cg"`` (matrix-free) or ``"auto"``.
    """
    _anchor(ops, s, X0)
    if tol <= 0:
        raise ValueError("tol must be positive")
    Nx = rhs_of(ops, s, X0)
    solver = solver or LambdaSolver(ops, s, method=method, tol=tol)
    u = solver.solve(-Nx)
    w = trajectory(ops, X0, u)
    W = ops.local_weights(s)
    om = ops.control_weights(s)
    Cw = w @ ops.spec.C.T
    cost = float(np.einsum("i,ia,ia->", W, Cw, Cw) + np.einsum("j,ja,ja->", om, u, u))
    res = grid_norm(ops, s, lambda_apply(ops, s, u) + Nx)
    return SolveResult(
        control=control(s, u),
        state=state(s, w),
        cost=cost,
        residual=res,
        extra={"rhs_norm": grid_norm(ops, s, Nx), "method": solver.method},
    )


def first_representation(ops: DiscretizedOperators, s: int, w: np.ndarray) -> np.ndarray:
    """``-(L_s^* + H_s^*) C^*C w``: the control as a functional of its own state."""
    return -apply_G_adjoint(ops, s, np.asarray(w) @ ops.Q.T)
