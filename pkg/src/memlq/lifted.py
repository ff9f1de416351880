"""Grid realizations of the input-to-state maps and the quadratic-form operators.

Conventions
-----------
* States are node samples ``w(t_i)``; integrals of state-valued functions use
  the composite trapezoid rule with splits at nodes.
* Control samples ``u_j`` are held over ``[t_j, t_{j+1})``. Their contribution
  is integrated exactly over each cell, so ``u_j`` only affects states at
  ``t_i`` with ``i > j``. The control inner product on ``[s, T]`` therefore
  has weight ``dt`` on nodes ``s..N-1`` and 0 on node ``N``.
* The direct and memory responses to a unit held sample are block-Toeplitz:
  ``(L_s u)_i = sum_{j<i} GL[i-j] u_j`` and likewise for ``GH``. Neither
  depends on ``s``, so the operator for start ``s`` is the trailing block of
  the one for start 0.
* Adjoints are exact transposes under the weighted inner products.

Local arrays for start index ``s`` have ``N - s + 1`` rows (nodes ``s..N``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import HistoryLengthMismatch, IndexOutOfRange
from .problem import (
    AugmentedState,
    ControlTrajectory,
    ProblemSpec,
    StateTrajectory,
    TimeGrid,
    control,
    state,
)
from .semigroup import PropagatorCache, build_propagators

DENSE_LIMIT = 50_000


def _toeplitz_apply(gamma: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``out[i] = sum_{j<i} gamma[i-j] @ u[j]``; ``gamma`` is (K+1, a, b), ``u`` (K+1, b, ...)."""
    K = u.shape[0] - 1
    out = np.zeros((K + 1, gamma.shape[1]) + u.shape[2:])
    for r in range(1, K + 1):
        out[r:] += np.einsum("ab,jb...->ja...", gamma[r], u[: K + 1 - r])
    return out


def _toeplitz_adjoint(gamma: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``out[j] = sum_{i>j} gamma[i-j].T @ y[i]``."""
    K = y.shape[0] - 1
    out = np.zeros((K + 1, gamma.shape[2]) + y.shape[2:])
    for r in range(1, K + 1):
        out[: K + 1 - r] += np.einsum("ab,ja...->jb...", gamma[r], y[r:])
    return out


def _trapezoid_propagate(E: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    """``out[i] = sum_{l=0}^{i} c_l E[i-l] g[l]`` with trapezoid weights on ``[0, i]``.

    ``g`` has shape (K+1, n, ...); ``out[0] = 0``.
    """
    K = g.shape[0] - 1
    F = np.zeros_like(g, dtype=float)
    for r in range(K + 1):
        F[r:] += np.einsum("ab,jb...->ja...", E[r], g[: K + 1 - r])
    head = np.einsum("jab,b...->ja...", E[: K + 1], g[0])
    out = dt * F - 0.5 * dt * (head + g)
    out[0] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class DiscretizedOperators:
    spec: ProblemSpec
    grid: TimeGrid
    propagators: PropagatorCache
    weights: np.ndarray  # trapezoid weights on the full grid
    kernel_points: np.ndarray  # k(t_r), r = 0..N
    kernel_cells: np.ndarray  # D[r] = int_{(r-1)dt}^{r dt} k, D[0] = 0

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def m(self) -> int:
        return self.spec.m

    @cached_property
    def Q(self) -> np.ndarray:
        return self.spec.C.T @ self.spec.C

    @cached_property
    def kernel_table(self) -> np.ndarray:
        """Lower-triangular ``k(t_i - t_j)`` for ``i >= j``."""
        i, j = np.indices((self.N + 1, self.N + 1))
        return np.where(i >= j, self.kernel_points[np.abs(i - j)], 0.0)

    @cached_property
    def gamma_L(self) -> np.ndarray:
        """Direct response ``GL[r] = E_{r-1} int_0^dt e^{rA} dr B``."""
        E = self.propagators.steps
        out = np.zeros((self.N + 1, self.n, self.m))
        out[1:] = np.einsum("rab,bc->rac", E[:-1], self.propagators.hold_input)
        return out

    @cached_property
    def gamma_H(self) -> np.ndarray:
        """Memory response ``GH[r] = sum_{a=1}^{r} c_a E_{r-a} D_a B`` (trapezoid in ``a``)."""
        E = self.propagators.steps
        D = self.kernel_cells
        N = self.N
        S = np.zeros((N + 1, self.n, self.n))
        for a in range(1, N + 1):
            if D[a] != 0.0:
                S[a:] += D[a] * E[: N + 1 - a]
        S *= self.dt
        S[1:] -= 0.5 * self.dt * D[1:, None, None] * np.eye(self.n)
        return np.einsum("rab,bc->rac", S, self.spec.B)

    @cached_property
    def gamma(self) -> np.ndarray:
        return self.gamma_L + self.gamma_H

    # ----------------------------------------------------------- helpers
    def local_weights(self, s: int) -> np.ndarray:
        return self.grid.trapezoid(s)

    def control_weights(self, s: int) -> np.ndarray:
        return self.grid.cell_weights(s)

    def check_index(self, *idx: int) -> None:
        for i in idx:
            if not 0 <= i <= self.N:
                raise IndexOutOfRange(f"grid index {i} outside 0..{self.N}")

    def _controls(self, s: int, u) -> np.ndarray:
        arr = u.samples if isinstance(u, ControlTrajectory) else np.asarray(u, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] != self.N - s + 1:
            raise IndexOutOfRange(
                f"control has {arr.shape[0]} samples, start {s} needs {self.N - s + 1}"
            )
        return arr

    def _states(self, s: int, v) -> np.ndarray:
        arr = v.samples if isinstance(v, StateTrajectory) else np.asarray(v, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] != self.N - s + 1:
            raise IndexOutOfRange(
                f"state has {arr.shape[0]} samples, start {s} needs {self.N - s + 1}"
            )
        return arr


def discretize(spec: ProblemSpec, grid: TimeGrid) -> DiscretizedOperators:
    prop = build_propagators(spec.A, spec.B, grid)
    kp = spec.kernel.evaluate(grid.nodes, spec.T)
    kc = spec.kernel.cell_integrals(grid)
    for arr in (kp, kc):
        arr.setflags(write=False)
    return DiscretizedOperators(
        spec=spec,
        grid=grid,
        propagators=prop,
        weights=grid.trapezoid(0),
        kernel_points=kp,
        kernel_cells=kc,
    )


# --------------------------------------------------------------------- applies
def apply_L(ops: DiscretizedOperators, s: int, u) -> StateTrajectory:
    ops.check_index(s)
    return state(s, _toeplitz_apply(ops.gamma_L, ops._controls(s, u)))


def _memory_of(ops: DiscretizedOperators, u: np.ndarray) -> np.ndarray:
    """``mem[l] = sum_{j<l} D[l-j] u[j]`` for local indices."""
    D = ops.kernel_cells
    K = u.shape[0] - 1
    mem = np.zeros_like(u)
    for r in range(1, K + 1):
        if D[r] != 0.0:
            mem[r:] += D[r] * u[: K + 1 - r]
    return mem


def apply_H(ops: DiscretizedOperators, s: int, u, form: str = "nested") -> StateTrajectory:
    """Memory response to the future-window input.

    ``form="nested"`` integrates the memory ``int_s^q k(q-p) u(p) dp`` first and
    then propagates it; ``form="fubini"`` uses the swapped order, i.e. the
    precomputed response ``GH``.
    """
    ops.check_index(s)
    u = ops._controls(s, u)
    if form == "fubini":
        return state(s, _toeplitz_apply(ops.gamma_H, u))
    if form != "nested":
        raise ValueError(f"unknown form {form!r}")
    g = _memory_of(ops, u) @ ops.spec.B.T
    E = ops.propagators.steps
    return state(s, _trapezoid_propagate(E, g, ops.dt))


def apply_G(ops: DiscretizedOperators, s: int, u) -> np.ndarray:
    """``(L_s + H_s) u`` as a raw (N-s+1, n, ...) array; extra trailing axes are batched."""
    u = np.asarray(u, dtype=float)
    return _toeplitz_apply(ops.gamma, u)


def apply_G_adjoint(ops: DiscretizedOperators, s: int, v) -> np.ndarray:
    """Weighted transpose of ``L_s + H_s``; zero at the final node."""
    v = np.asarray(v, dtype=float)
    W = ops.local_weights(s).reshape((-1,) + (1,) * (v.ndim - 1))
    out = _toeplitz_adjoint(ops.gamma, W * v) / ops.dt
    out[-1] = 0.0
    return out


def lambda_eval(ops: DiscretizedOperators, t: int, p: int, s: int) -> np.ndarray:
    """Point value ``lambda(t,p,s) = int_s^t e^{A(t-q)} k(q-p) B dq`` by trapezoid."""
    ops.check_index(t, p, s)
    if not p <= s <= t:
        raise IndexOutOfRange(f"need p <= s <= t, got p={p}, s={s}, t={t}")
    if t == s:
        return np.zeros((ops.n, ops.m))
    E = ops.propagators.steps
    l = np.arange(s, t + 1)
    c = np.full(l.size, ops.dt)
    c[0] *= 0.5
    c[-1] *= 0.5
    k = ops.kernel_points[l - p]
    S = np.einsum("l,lab->ab", c * k, E[t - l])
    return S @ ops.spec.B


def lambda_cells(ops: DiscretizedOperators, s: int, cells=None) -> np.ndarray:
    """Cell-averaged ``lambda(t_i, p, s)`` for a held unit sample on cell ``p``.

    Returns shape (N-s+1, n, m, P) with ``P`` the number of requested cells
    (default ``0..s``): ``(1/dt) sum_{l=s}^{i} c_l E_{i-l} D[l-p] B``.
    """
    ops.check_index(s)
    cells = np.arange(s + 1) if cells is None else np.asarray(cells)
    if np.any(cells > s) or np.any(cells < 0):
        raise IndexOutOfRange("cells must lie in 0..s")
    l = np.arange(s, ops.N + 1)
    D = ops.kernel_cells[l[:, None] - cells[None, :]]  # (K+1, P)
    g = np.einsum("ab,lp->labp", ops.spec.B, D)
    out = _trapezoid_propagate(ops.propagators.steps, g, ops.dt)
    return out / ops.dt


def _history(ops: DiscretizedOperators, s: int, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 1:
        eta = eta[:, None]
    if s == 0:
        if eta.size != 0:
            raise HistoryLengthMismatch("start index 0 carries no history")
        return np.zeros((0, ops.m))
    if eta.shape[0] != s + 1:
        raise HistoryLengthMismatch(f"history has {eta.shape[0]} samples, need {s + 1}")
    return eta


def apply_K(ops: DiscretizedOperators, s: int, eta) -> StateTrajectory:
    """Memory of the pre-``s`` history seen on ``[s, T]``."""
    ops.check_index(s)
    eta = _history(ops, s, eta)
    K = ops.N - s
    if s == 0 or ops.spec.kernel.is_zero:
        return state(s, np.zeros((K + 1, ops.n)))
    D = ops.kernel_cells
    l = np.arange(s, ops.N + 1)
    p = np.arange(s)  # the sample at s has zero weight
    mem = D[l[:, None] - p[None, :]] @ eta[:s]
    g = mem @ ops.spec.B.T
    return state(s, _trapezoid_propagate(ops.propagators.steps, g, ops.dt))


def apply_E(ops: DiscretizedOperators, t: int, s: int, X0: AugmentedState) -> np.ndarray:
    """Free evolution ``e^{A(t-s)} w0 + (K_s eta)(t)``."""
    if X0.s_index != s:
        raise IndexOutOfRange("state is not anchored at s")
    ops.check_index(t, s)
    if t < s:
        raise IndexOutOfRange("t must not precede s")
    return free_evolution(ops, X0)[t - s]


def free_evolution(ops: DiscretizedOperators, X0: AugmentedState) -> np.ndarray:
    s = X0.s_index
    ops.check_index(s)
    E = ops.propagators.steps
    base = E[: ops.N - s + 1] @ X0.w0
    if s > 0:
        base = base + apply_K(ops, s, X0.history).samples
    return base


def apply_LH_adjoint(ops: DiscretizedOperators, s: int, v) -> ControlTrajectory:
    ops.check_index(s)
    return control(s, apply_G_adjoint(ops, s, ops._states(s, v)))


def apply_Lambda(ops: DiscretizedOperators, s: int, u) -> ControlTrajectory:
    u = ops._controls(s, u)
    return control(s, lambda_apply(ops, s, u))


def lambda_apply(ops: DiscretizedOperators, s: int, u: np.ndarray) -> np.ndarray:
    w = apply_G(ops, s, u)
    Qw = np.einsum("ab,jb...->ja...", ops.Q, w)
    return u + apply_G_adjoint(ops, s, Qw)


def apply_N(ops: DiscretizedOperators, s: int, X0: AugmentedState) -> ControlTrajectory:
    if X0.s_index != s:
        raise IndexOutOfRange("state is not anchored at s")
    free = free_evolution(ops, X0)
    return control(s, apply_G_adjoint(ops, s, free @ ops.Q.T))


def gram_M(ops: DiscretizedOperators, s: int, X0: AugmentedState, X1: AugmentedState) -> float:
    if X0.s_index != s or X1.s_index != s:
        raise IndexOutOfRange("states are not anchored at s")
    a = free_evolution(ops, X0)
    b = free_evolution(ops, X1)
    W = ops.local_weights(s)
    return float(np.einsum("i,ia,ab,ib->", W, a, ops.Q, b))


# ------------------------------------------------------------- dense assembly
def dense_allowed(ops: DiscretizedOperators) -> bool:
    return ops.n * ops.m * ops.N <= DENSE_LIMIT


def assemble_G(ops: DiscretizedOperators, s: int) -> np.ndarray:
    """Dense ``L_s + H_s``: ((N-s+1) n, (N-s+1) m)."""
    K = ops.N - s
    n, m = ops.n, ops.m
    Gm = np.zeros((K + 1, n, K + 1, m))
    for r in range(1, K + 1):
        idx = np.arange(K + 1 - r)
        Gm[idx + r, :, idx, :] = ops.gamma[r]
    return Gm.reshape((K + 1) * n, (K + 1) * m)


def assemble_Lambda(ops: DiscretizedOperators, s: int, G: np.ndarray | None = None) -> np.ndarray:
    """Dense ``Lambda_s`` in the coordinates of the control samples ``s..N``.

    With uniform weight ``dt`` on the free samples the matrix is symmetric; the
    final sample has no influence, so its row and column are the identity.
    """
    G = assemble_G(ops, s) if G is None else G
    K = ops.N - s
    W = ops.local_weights(s)
    QG = np.einsum("ab,ibx->iax", ops.Q, G.reshape(K + 1, ops.n, -1)) * W[:, None, None]
    Lam = G.T @ QG.reshape(G.shape) / ops.dt
    Lam = 0.5 * (Lam + Lam.T)
    Lam[np.diag_indices_from(Lam)] += 1.0
    return Lam
