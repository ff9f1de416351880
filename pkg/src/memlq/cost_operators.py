"""Feedback kernels and the cost operators ``P0, P1, P2`` of the optimal cost-to-go.

Index conventions on the grid (``t`` is a node index):

* ``P0[t]`` is n x n.
* ``P1(t, p)`` is n x m for a history cell ``p <= t``.
* ``P2(t, p, q)`` is m x m with ``P2(t, p, q).T == P2(t, q, p)``; the history
  sample on cell ``q`` multiplies from the left.

A history cell ``p`` is ``[t_p, t_{p+1})``; the sample at the current node
has zero weight in the quadratic form, but the diagonal cell ``p = t``
is stored because the feedback gains read it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, MemoryBudgetExceeded
from .lifted import (
    DiscretizedOperators,
    apply_G,
    apply_G_adjoint,
    assemble_Lambda,
    dense_allowed,
    lambda_cells,
)
from .problem import AugmentedState
from .solvers import LambdaSolver

DEFAULT_MEMORY_CAP = 2 * 1024**3


@dataclass(frozen=True, eq=False)
class FeedbackKernels:
    """Optimal responses from base node ``t`` to unit initial data.

    Arrays are indexed by the local node ``sigma - t``; the trailing axis of
    the history-driven arrays is the cell ``p = 0..t``.
    """

    t_index: int
    psi1: np.ndarray  # (K+1, m, n)
    psi2: np.ndarray  # (K+1, m, m, t+1)
    z1: np.ndarray  # (K+1, n, n)
    z2: np.ndarray  # (K+1, n, m, t+1)
    lam: np.ndarray  # (K+1, n, m, t+1), cell-averaged history response
    free: np.ndarray  # (K+1, n, n), the propagators E_{sigma-t}


@dataclass(frozen=True, eq=False)
class CostOperatorField:
    """``P0, P1, P2`` at every node, stored in a triangular layout."""

    P0: np.ndarray  # (N+1, n, n)
    P1: tuple  # P1[t] has shape (t+1, n, m)
    P2: tuple  # P2[t] has shape (t+1, t+1, m, m), P2[t][p, q] = P2(t, p, q)
    dt: float
    provenance: str
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def N(self) -> int:
        return self.P0.shape[0] - 1

    def p1(self, t: int, p: int) -> np.ndarray:
        self._check(t, p)
        return self.P1[t][p]

    def p2(self, t: int, p: int, q: int) -> np.ndarray:
        self._check(t, p, q)
        return self.P2[t][p, q]

    def _check(self, t, *cells):
        if not 0 <= t <= self.N:
            raise IndexOutOfRange(f"node {t} outside 0..{self.N}")
        for c in cells:
            if not 0 <= c <= t:
                raise IndexOutOfRange(f"history cell {c} outside 0..{t}")

    def sup_norm(self) -> float:
        out = float(np.max(np.abs(self.P0)))
        for a, b in zip(self.P1, self.P2):
            out = max(out, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
        return out

    def gap(self, other: "CostOperatorField") -> dict:
        """Sup-norm differences per block, absolute and relative to ``self``."""
        if other.N != self.N:
            raise IndexOutOfRange("fields live on different grids")
        g0 = float(np.max(np.abs(self.P0 - other.P0)))
        g1 = max(float(np.max(np.abs(a - b))) for a, b in zip(self.P1, other.P1))
        g2 = max(float(np.max(np.abs(a - b))) for a, b in zip(self.P2, other.P2))
        s0 = float(np.max(np.abs(self.P0)))
        s1 = max(float(np.max(np.abs(a))) for a in self.P1)
        s2 = max(float(np.max(np.abs(a))) for a in self.P2)
        scale = max(s0, s1, s2, np.finfo(float).tiny)
        return {
            "P0": g0, "P1": g1, "P2": g2,
            "relative": max(g0, g1, g2) / scale,
        }

    def invariants(self) -> dict:
        """Symmetry, semidefiniteness and final-slice checks."""
        sym0 = float(np.max(np.abs(self.P0 - np.swapaxes(self.P0, 1, 2))))
        eig0 = min(float(np.min(np.linalg.eigvalsh(0.5 * (P + P.T)))) for P in self.P0)
        sym2 = 0.0
        eig2 = np.inf
        for t, S in enumerate(self.P2):
            if S.strides == (0,) * S.ndim:
                continue  # a stored zero slab
            sym2 = max(sym2, float(np.max(np.abs(S - np.swapaxes(S, 0, 1).swapaxes(2, 3)))))
            if t > 0:
                M = history_block(S[:t, :t], self.dt)
                eig2 = min(eig2, float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T)))))
        final = max(
            float(np.max(np.abs(self.P0[-1]))),
            float(np.max(np.abs(self.P1[-1]))),
            float(np.max(np.abs(self.P2[-1]))),
        )
        return {
            "P0_symmetry": sym0,
            "P0_min_eig": eig0,
            "P2_exchange": sym2,
            "P2_min_eig": float(eig2) if np.isfinite(eig2) else 0.0,
            "final_slice": final,
        }


def history_block(S: np.ndarray, dt: float) -> np.ndarray:
    """Weighted matrix of the history form ``sum_{p,q} dt^2 eta_q^T S[p,q] eta_p``.

    Row index (q, a), column index (p, b); entries ``dt^2 S[p, q][a, b]``.
    """
    P, _, m, _ = S.shape
    return dt**2 * np.transpose(S, (1, 2, 0, 3)).reshape(P * m, P * m)


def storage_entries(n: int, m: int, N: int, memory: bool = True) -> int:
    """Float count of a field in the triangular layout.

    Without memory the ``P1, P2`` slabs are identically zero and not stored.
    """
    if not memory:
        return (N + 1) * n * n
    i = np.arange(N + 1, dtype=np.int64)
    return int((N + 1) * n * n + np.sum((i + 1) * n * m) + np.sum((i + 1) ** 2 * m * m))


def zero_slabs(n: int, m: int, N: int):
    """Read-only zero ``P1, P2`` slices that occupy no memory."""
    P1 = tuple(np.broadcast_to(0.0, (t + 1, n, m)) for t in range(N + 1))
    P2 = tuple(np.broadcast_to(0.0, (t + 1, t + 1, m, m)) for t in range(N + 1))
    return P1, P2


def check_memory(n: int, m: int, N: int, cap: int = DEFAULT_MEMORY_CAP,
                 memory: bool = True) -> int:
    need = 8 * storage_entries(n, m, N, memory)
    if need > cap:
        raise MemoryBudgetExceeded(
            f"field needs about {need / 2**20:.1f} MiB, cap is {cap / 2**20:.1f} MiB"
        )
    return need


# --------------------------------------------------------------------- kernels
def _qmul(ops, v):
    return np.einsum("ab,jb...->ja...", ops.Q, v)


def build_feedback_kernels(ops: DiscretizedOperators, t: int, tol: float = 1e-10,
                           solver: LambdaSolver | None = None) -> FeedbackKernels:
    """``psi1, psi2`` from solves against ``Lambda_t``; ``Z1, Z2`` from the forward map."""
    ops.check_index(t)
    if t >= ops.N:
        raise IndexOutOfRange("feedback kernels need t < N")
    K = ops.N - t
    E = np.array(ops.propagators.steps[: K + 1])
    lam = lambda_cells(ops, t)
    solver = solver or LambdaSolver(ops, t, tol=tol)
    psi1 = solver.solve(-apply_G_adjoint(ops, t, _qmul(ops, E)))
    z1 = E + apply_G(ops, t, psi1)
    if ops.spec.kernel.is_zero:
        psi2 = np.zeros((K + 1, ops.m, ops.m, t + 1))
        z2 = np.zeros_like(lam)
    else:
        psi2 = solver.solve(-apply_G_adjoint(ops, t, _qmul(ops, lam)))
        z2 = lam + apply_G(ops, t, psi2)
    return FeedbackKernels(t_index=t, psi1=psi1, psi2=psi2, z1=z1, z2=z2, lam=lam, free=E)


def _weights(ops, t):
    return ops.local_weights(t), ops.control_weights(t)


def _kernels(ops, t, kernels, tol=1e-10):
    if kernels is None:
        return build_feedback_kernels(ops, t, tol)
    if kernels.t_index != t:
        raise IndexOutOfRange("kernels were built for a different node")
    return kernels


def compute_P0(ops: DiscretizedOperators, t: int, rep: str = "definition",
               kernels: FeedbackKernels | None = None) -> np.ndarray:
    ops.check_index(t)
    if t == ops.N:
        return np.zeros((ops.n, ops.n))
    k = _kernels(ops, t, kernels)
    W, om = _weights(ops, t)
    if rep == "definition":
        return (np.einsum("i,iab,ac,icd->bd", W, k.z1, ops.Q, k.z1)
                + np.einsum("i,iab,iad->bd", om, k.psi1, k.psi1))
    if rep == "resolved":
        return np.einsum("i,iab,ac,icd->bd", W, k.free, ops.Q, k.z1)
    raise ValueError(f"unknown representation {rep!r}")


def _p1_all(ops, k, rep):
    W, om = _weights(ops, k.t_index)
    if rep == "definition":
        return (np.einsum("i,iab,ac,icdp->pbd", W, k.z1, ops.Q, k.z2)
                + np.einsum("i,iab,iadp->pbd", om, k.psi1, k.psi2))
    if rep == "resolved":
        return np.einsum("i,iab,ac,icdp->pbd", W, k.free, ops.Q, k.z2)
    if rep == "third":
        return np.einsum("i,iab,ac,icdp->pbd", W, k.z1, ops.Q, k.lam)
    raise ValueError(f"unknown representation {rep!r}")


def _p2_all(ops, k, rep):
    W, om = _weights(ops, k.t_index)
    if rep == "definition":
        return (np.einsum("i,iaeq,ac,icfp->pqef", W, k.z2, ops.Q, k.z2, optimize=True)
                + np.einsum("i,iaeq,iafp->pqef", om, k.psi2, k.psi2, optimize=True))
    if rep == "resolved":
        return np.einsum("i,iaeq,ac,icfp->pqef", W, k.lam, ops.Q, k.z2, optimize=True)
    raise ValueError(f"unknown representation {rep!r}")


def compute_P1(ops: DiscretizedOperators, t: int, p: int, rep: str = "definition",
               kernels: FeedbackKernels | None = None) -> np.ndarray:
    ops.check_index(t, p)
    if p > t:
        raise IndexOutOfRange(f"history cell {p} lies after node {t}")
    if rep not in ("definition", "resolved", "third"):
        raise ValueError(f"unknown representation {rep!r}")
    if t == ops.N:
        return np.zeros((ops.n, ops.m))
    return _p1_all(ops, _kernels(ops, t, kernels), rep)[p]


def compute_P1_diagonal_adjoint(ops: DiscretizedOperators, t: int,
                                kernels: FeedbackKernels | None = None) -> np.ndarray:
    """``P1(t,t)^T`` as ``sum_sigma lambda(sigma,t,t)^T C^T C Z1(sigma,t)``."""
    ops.check_index(t)
    if t == ops.N:
        return np.zeros((ops.m, ops.n))
    k = _kernels(ops, t, kernels)
    W, _ = _weights(ops, t)
    return np.einsum("i,iab,ac,icd->bd", W, k.lam[..., t], ops.Q, k.z1)


def compute_P2(ops: DiscretizedOperators, t: int, p: int, q: int, rep: str = "definition",
               kernels: FeedbackKernels | None = None) -> np.ndarray:
    ops.check_index(t, p, q)
    if p > t or q > t:
        raise IndexOutOfRange(f"history cells ({p}, {q}) must not lie after node {t}")
    if rep not in ("definition", "resolved"):
        raise ValueError(f"unknown representation {rep!r}")
    if t == ops.N:
        return np.zeros((ops.m, ops.m))
    return _p2_all(ops, _kernels(ops, t, kernels), rep)[p, q]


def field_slice(ops: DiscretizedOperators, kernels: FeedbackKernels, rep: str = "definition"):
    """``(P0, P1 slice, P2 slice)`` at the kernels' base node."""
    t = kernels.t_index
    return compute_P0(ops, t, rep, kernels), _p1_all(ops, kernels, rep), _p2_all(ops, kernels, rep)


def representation_gaps(ops: DiscretizedOperators, t: int,
                        kernels: FeedbackKernels | None = None) -> dict:
    """Relative sup differences between the representations at node ``t``."""
    k = _kernels(ops, t, kernels)

    def rel(a, b):
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
        return float(np.max(np.abs(a - b))) / scale

    P0d, P0r = compute_P0(ops, t, "definition", k), compute_P0(ops, t, "resolved", k)
    P1d, P1r, P1t = (_p1_all(ops, k, r) for r in ("definition", "resolved", "third"))
    P2d, P2r = _p2_all(ops, k, "definition"), _p2_all(ops, k, "resolved")
    adj = compute_P1_diagonal_adjoint(ops, t, k)
    return {
        "P0": rel(P0d, P0r),
        "P1_def_res": rel(P1d, P1r),
        "P1_def_third": rel(P1d, P1t),
        "P1_res_third": rel(P1r, P1t),
        "P1_diag_adjoint": rel(P1d[t].T, adj),
        "P2": rel(P2d, P2r),
    }


def build_field(ops: DiscretizedOperators, tol: float = 1e-10,
                memory_cap: int = DEFAULT_MEMORY_CAP, rep: str = "definition") -> CostOperatorField:
    """Direct-provenance field: the defining integrals at every node."""
    n, m, N = ops.n, ops.m, ops.N
    memory = not ops.spec.kernel.is_zero
    check_memory(n, m, N, memory_cap, memory)
    P0 = np.zeros((N + 1, n, n))
    P1 = []
    P2 = []
    Lam0 = assemble_Lambda(ops, 0) if dense_allowed(ops) else None
    for t in range(N):
        solver = LambdaSolver(ops, t, tol=tol, Lambda0=Lam0)
        k = build_feedback_kernels(ops, t, tol, solver)
        if memory:
            P0[t], s1, s2 = field_slice(ops, k, rep)
            P1.append(s1)
            P2.append(s2)
        else:
            P0[t] = compute_P0(ops, t, rep, k)
    if memory:
        P1.append(np.zeros((N + 1, n, m)))
        P2.append(np.zeros((N + 1, N + 1, m, m)))
    else:
        P1, P2 = zero_slabs(n, m, N)
    return CostOperatorField(P0=P0, P1=tuple(P1), P2=tuple(P2), dt=ops.dt,
                             provenance="direct")


def quadratic_cost_form(field: CostOperatorField, X0: AugmentedState) -> float:
    """``w0'P0 w0 + 2 sum_p dt w0'P1(s,p) eta_p + sum_{p,q} dt^2 eta_q'P2(s,p,q) eta_p``."""
    s = X0.s_index
    if not 0 <= s <= field.N:
        raise IndexOutOfRange(f"state anchored at {s}, field covers 0..{field.N}")
    w0 = X0.w0
    val = float(w0 @ field.P0[s] @ w0)
    if s == 0:
        return val
    eta = X0.history[:s]  # the sample at s carries no weight
    dt = field.dt
    val += 2.0 * dt * float(np.einsum("a,pab,pb->", w0, field.P1[s][:s], eta))
    val += dt**2 * float(np.einsum("qe,pqef,pf->", eta, field.P2[s][:s, :s], eta))
    return val
