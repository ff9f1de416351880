"""Closed-loop simulation under the feedback law, the evolution map and transition checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_operators import CostOperatorField
from .errors import IndexOutOfRange, NonFinite
from .lifted import DiscretizedOperators
from .open_loop import solve_open_loop
from .problem import AugmentedState, StateTrajectory, make_augmented_state, state


@dataclass(frozen=True, eq=False)
class ClosedLoopRecord:
    """Outcome of a closed-loop run started at ``s_index``.

    ``applied`` has one row per grid node: the initiating history before
    ``s_index`` and the applied feedback controls from ``s_index`` on.
    ``cost`` is the running cost at each node of ``s_index..N``.
    """

    s_index: int
    initial: AugmentedState
    applied: np.ndarray  # (N+1, m)
    state: StateTrajectory
    cost: np.ndarray  # (N-s+1,)

    @property
    def controls(self) -> np.ndarray:
        return self.applied[self.s_index :]

    @property
    def total_cost(self) -> float:
        return float(self.cost[-1])


def step_state(ops: DiscretizedOperators, w: np.ndarray, u: np.ndarray,
               mem_now: np.ndarray, mem_next: np.ndarray) -> np.ndarray:
    """One cell of the mild dynamics with ``u`` held and the memory term by trapezoid."""
    E1 = ops.propagators.steps[1]
    B = ops.spec.B
    return (E1 @ w + ops.propagators.hold_input @ u
            + 0.5 * ops.dt * (E1 @ (B @ mem_now) + B @ mem_next))


def feedback_control(field: CostOperatorField, ops: DiscretizedOperators, t: int,
                     w: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``-(B'P0 + P1(t,t)') w - sum_{p<t} dt (B'P1(t,p) + P2(t,p,t)) theta_p``."""
    B = ops.spec.B
    P1 = field.P1[t]
    u = -(B.T @ field.P0[t] + P1[t].T) @ w
    if t > 0:
        K1 = np.einsum("am,pab->pmb", B, P1[:t]) + field.P2[t][:t, t]
        u = u - field.dt * np.einsum("pmb,pb->m", K1, theta[:t])
    return u


def simulate_closed_loop(ops: DiscretizedOperators, field: CostOperatorField,
                         X0: AugmentedState) -> ClosedLoopRecord:
    """March forward from ``X0`` applying the feedback law at every node."""
    s, N, m, dt = X0.s_index, ops.N, ops.m, ops.dt
    ops.check_index(s)
    if field.N != N:
        raise IndexOutOfRange("field and operators use different grids")
    if X0.w0.shape[0] != ops.n:
        raise IndexOutOfRange("state dimension does not match the problem")
    D = ops.kernel_cells
    v = np.zeros((N + 1, m))
    v[:s] = X0.history[:s]
    w = np.zeros((N - s + 1, ops.n))
    w[0] = X0.w0

    def memory(l):
        if l == 0:
            return np.zeros(m)
        return D[l - np.arange(l)] @ v[:l]

    mem = memory(s)
    Q = ops.Q
    run = np.zeros(N - s + 1)
    for i in range(s, N + 1):
        v[i] = feedback_control(field, ops, i, w[i - s], v)
        if i == N:
            break
        mem_next = memory(i + 1)
        w[i - s + 1] = step_state(ops, w[i - s], v[i], mem, mem_next)
        if not np.all(np.isfinite(w[i - s + 1])):
            raise NonFinite(f"closed-loop state diverged at node {i + 1}")
        a, b = w[i - s], w[i - s + 1]
        run[i - s + 1] = (run[i - s] + 0.5 * dt * (a @ Q @ a + b @ Q @ b)
                          + dt * float(v[i] @ v[i]))
        mem = mem_next
    return ClosedLoopRecord(s_index=s, initial=X0, applied=v, state=state(s, w), cost=run)


def apply_evolution(record: ClosedLoopRecord, t: int) -> AugmentedState:
    """Snapshot ``(w(t), applied history on [0, t])``; the identity at ``t = s``."""
    s = record.s_index
    N = record.applied.shape[0] - 1
    if not s <= t <= N:
        raise IndexOutOfRange(f"snapshot node {t} outside {s}..{N}")
    if t == s:
        return record.initial
    m = record.applied.shape[1]
    return make_augmented_state(record.state.samples[t - s], record.applied[: t + 1], t, m=m)


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    diff = float(np.max(np.abs(a - b))) if b.size else 0.0
    return diff / scale if scale > 0 else diff


def _transition(ops, s, tau, X0, tol):
    if not s <= tau < ops.N:
        raise IndexOutOfRange(f"need s <= tau < N, got s={s}, tau={tau}")
    first = solve_open_loop(ops, s, X0, tol)
    if tau == s:
        return first, first
    u = first.control.samples
    hist = np.vstack([X0.history[:s], u[: tau - s + 1]])
    X1 = make_augmented_state(first.state.samples[tau - s], hist, tau, m=ops.m)
    return first, solve_open_loop(ops, tau, X1, tol)


def check_control_transition(ops: DiscretizedOperators, s: int, tau: int,
                             X0: AugmentedState, tol: float = 1e-12) -> float:
    """Relative sup gap on ``[tau, T]`` between the optimum from ``s`` and the one restarted at ``tau``."""
    first, second = _transition(ops, s, tau, X0, tol)
    return _relative(second.control.samples, first.control.samples[tau - s :])


def check_state_transition(ops: DiscretizedOperators, s: int, tau: int,
                           X0: AugmentedState, tol: float = 1e-12) -> float:
    """As :func:`check_control_transition`, comparing optimal states."""
    first, second = _transition(ops, s, tau, X0, tol)
    return _relative(second.state.samples, first.state.samples[tau - s :])
