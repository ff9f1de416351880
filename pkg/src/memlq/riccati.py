"""Backward integration and residual checks for the coupled Riccati system.

With the gains ``K0 = B'P0 + P1(t,t)'`` and ``K1(p) = B'P1(t,p) + P2(t,p,t)``
the system reads, in forward time,

    dP0/dt      = -(Q + P0 A + A'P0) + K0'K0
    dP1(t,p)/dt = -A'P1(t,p) - k(t-p) P0 B + K0'K1(p)
    dP2(t,p,q)  = -k(t-q) B'P1(t,p) - k(t-p) P1(t,q)'B + K1(q)'K1(p)

with zero data at ``T``. On the grid a history cell ``p`` sees the
cell-averaged kernel ``D[t-p] / dt``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_operators import (
    DEFAULT_MEMORY_CAP,
    CostOperatorField,
    build_feedback_kernels,
    check_memory,
    history_block,
    zero_slabs,
)
from .errors import IndexOutOfRange, NonFinite
from .lifted import DiscretizedOperators, apply_G, apply_G_adjoint, assemble_Lambda, dense_allowed
from .problem import ProblemSpec, TimeGrid
from .solvers import LambdaSolver

BLOWUP = 1e12


def _kbar(ops: DiscretizedOperators, t: int, cells: np.ndarray) -> np.ndarray:
    return ops.kernel_cells[t - cells] / ops.dt


def riccati_rhs(ops: DiscretizedOperators, t: int, P0, P1, P2, ncells: int | None = None):
    """Forward-time slopes at node ``t`` for history cells ``0..ncells-1``.

    ``P1`` and ``P2`` must contain the diagonal cell ``t``.
    """
    A, B, Q = ops.spec.A, ops.spec.B, ops.Q
    c = t + 1 if ncells is None else ncells
    cells = np.arange(c)
    kb = _kbar(ops, t, cells)
    K0 = B.T @ P0 + P1[t].T
    BtP1 = np.einsum("am,pab->pmb", B, P1[:c])
    K1 = BtP1 + P2[:c, t]
    d0 = -(Q + P0 @ A + A.T @ P0) + K0.T @ K0
    d1 = (-np.einsum("ba,pbm->pam", A, P1[:c])
          - kb[:, None, None] * (P0 @ B)[None]
          + np.einsum("ma,pmb->pab", K0, K1))
    d2 = (-kb[None, :, None, None] * BtP1[:, None]
          - kb[:, None, None, None] * np.swapaxes(BtP1, 1, 2)[None, :]
          + np.einsum("qae,paf->pqef", K1, K1))
    return d0, d1, d2


def _guard(t, *arrs):
    for a in arrs:
        if not np.all(np.isfinite(a)) or (a.size and np.max(np.abs(a)) > BLOWUP):
            raise NonFinite(f"Riccati integration blew up at node {t}")


def integrate_dre(ops: DiscretizedOperators, scheme: str = "euler",
                  memory_cap: int = DEFAULT_MEMORY_CAP) -> CostOperatorField:
    """Step the coupled system backward from zero data at ``T``.

    ``scheme`` is ``"euler"`` (first order) or ``"heun"`` (predictor-corrector).
    Diagonal values are read from the slice the slope is evaluated on.
    """
    if scheme not in ("euler", "heun"):
        raise ValueError(f"unknown scheme {scheme!r}")
    n, m, N, dt = ops.n, ops.m, ops.N, ops.dt
    if ops.spec.kernel.is_zero:
        return _integrate_memoryless(ops, scheme, memory_cap)
    check_memory(n, m, N, memory_cap)
    P0 = np.zeros((N + 1, n, n))
    P1 = [None] * (N + 1)
    P2 = [None] * (N + 1)
    P1[N] = np.zeros((N + 1, n, m))
    P2[N] = np.zeros((N + 1, N + 1, m, m))
    for t in range(N - 1, -1, -1):
        c = t + 1
        d0, d1, d2 = riccati_rhs(ops, t + 1, P0[t + 1], P1[t + 1], P2[t + 1], c)
        new0 = P0[t + 1] - dt * d0
        new1 = P1[t + 1][:c] - dt * d1
        new2 = P2[t + 1][:c, :c] - dt * d2
        if scheme == "heun":
            e0, e1, e2 = riccati_rhs(ops, t, new0, new1, new2)
            new0 = P0[t + 1] - 0.5 * dt * (d0 + e0)
            new1 = P1[t + 1][:c] - 0.5 * dt * (d1 + e1)
            new2 = P2[t + 1][:c, :c] - 0.5 * dt * (d2 + e2)
        _guard(t, new0, new1, new2)
        P0[t] = new0
        P1[t] = new1
        P2[t] = new2
    return CostOperatorField(P0=P0, P1=tuple(P1), P2=tuple(P2), dt=dt,
                             provenance="integrated", extra={"scheme": scheme})


def _integrate_memoryless(ops, scheme, memory_cap):
    """Without memory ``P1, P2`` are never sourced and stay exactly zero."""
    n, m, N, dt = ops.n, ops.m, ops.N, ops.dt
    check_memory(n, m, N, memory_cap, memory=False)
    A, B, Q = ops.spec.A, ops.spec.B, ops.Q
    zero = np.zeros((m, n))

    def f(P):
        K0 = B.T @ P + zero
        return -(Q + P @ A + A.T @ P) + K0.T @ K0

    P0 = np.zeros((N + 1, n, n))
    for t in range(N - 1, -1, -1):
        d = f(P0[t + 1])
        new = P0[t + 1] - dt * d
        if scheme == "heun":
            new = P0[t + 1] - 0.5 * dt * (d + f(new))
        _guard(t, new)
        P0[t] = new
    P1, P2 = zero_slabs(n, m, N)
    return CostOperatorField(P0=P0, P1=P1, P2=P2, dt=dt, provenance="integrated",
                             extra={"scheme": scheme})


def classical_riccati_reference(spec: ProblemSpec, grid: TimeGrid) -> np.ndarray:
    """Heun integration of ``dP/dt = -C'C - PA - A'P + PBB'P``, ``P(T) = 0``.

    Returns the node values, shape (N+1, n, n).
    """
    A, B = spec.A, spec.B
    Q = spec.C.T @ spec.C
    dt = grid.dt

    def f(P):
        K = B.T @ P
        return -(Q + P @ A + A.T @ P) + K.T @ K

    P = np.zeros((grid.N + 1, spec.n, spec.n))
    for t in range(grid.N - 1, -1, -1):
        d = f(P[t + 1])
        pred = P[t + 1] - dt * d
        P[t] = P[t + 1] - 0.5 * dt * (d + f(pred))
        _guard(t, P[t])
    return P


# ------------------------------------------------------------------ residuals
def default_probes(n: int, m: int, count: int = 5, seed: int = 0):
    """Canonical basis plus ``count`` seeded random unit vectors, for each space."""
    rng = np.random.default_rng(seed)

    def make(d):
        R = rng.standard_normal((count, d))
        R /= np.linalg.norm(R, axis=1, keepdims=True)
        return np.vstack([np.eye(d), R])

    return make(n), make(m)


@dataclass(frozen=True)
class ResidualReport:
    nodes: np.ndarray  # interior nodes checked
    p0: np.ndarray  # per-node sup over probes
    p1: np.ndarray
    p2: np.ndarray

    @property
    def sup(self) -> dict:
        return {
            "P0": float(np.max(self.p0, initial=0.0)),
            "P1": float(np.max(self.p1, initial=0.0)),
            "P2": float(np.max(self.p2, initial=0.0)),
        }

    @property
    def max(self) -> float:
        return max(self.sup.values())


def dre_residual(field: CostOperatorField, ops: DiscretizedOperators,
                 probes_n: np.ndarray | None = None,
                 probes_m: np.ndarray | None = None) -> ResidualReport:
    """Weak residual of the coupled system at interior nodes by central differences.

    The history cells tested at node ``t`` are ``p <= t-2``, those lying
    entirely in the past at every slice of the stencil.
    """
    if field.N != ops.N:
        raise IndexOutOfRange("field and operators use different grids")
    if probes_n is None or probes_m is None:
        dn, dm = default_probes(ops.n, ops.m)
        probes_n = dn if probes_n is None else np.atleast_2d(probes_n)
        probes_m = dm if probes_m is None else np.atleast_2d(probes_m)
    dt, N = field.dt, field.N
    nodes = np.arange(1, N)
    r0 = np.zeros(nodes.size)
    r1 = np.zeros(nodes.size)
    r2 = np.zeros(nodes.size)
    X, V = probes_n, probes_m
    for k, t in enumerate(nodes):
        c = max(t - 1, 0)
        d0, d1, d2 = riccati_rhs(ops, t, field.P0[t], field.P1[t], field.P2[t], c)
        R0 = (field.P0[t + 1] - field.P0[t - 1]) / (2 * dt) - d0
        r0[k] = np.max(np.abs(X @ R0 @ X.T))
        if c == 0:
            continue
        R1 = (field.P1[t + 1][:c] - field.P1[t - 1][:c]) / (2 * dt) - d1
        R2 = (field.P2[t + 1][:c, :c] - field.P2[t - 1][:c, :c]) / (2 * dt) - d2
        r1[k] = np.max(np.abs(np.einsum("ya,pab,vb->pyv", X, R1, V)))
        r2[k] = np.max(np.abs(np.einsum("ue,pqef,vf->pquv", V, R2, V)))
    return ResidualReport(nodes=nodes, p0=r0, p1=r1, p2=r2)


@dataclass(frozen=True)
class MatrixFormCoefficients:
    """Coefficients of the block Riccati equation on ``R^n x`` (history cells).

    ``S`` is the Gram matrix of the slice space (identity on the state,
    ``dt`` per history cell); ``select`` picks the point ``t`` with unit weight.
    """

    Q: np.ndarray
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    S: np.ndarray
    ncells: int


def matrix_form_coefficients(ops: DiscretizedOperators, t: int, ncells: int) -> MatrixFormCoefficients:
    n, m, dt = ops.n, ops.m, ops.dt
    d = n + ncells * m
    Qb = np.zeros((d, d))
    Qb[:n, :n] = ops.Q
    Ab = np.zeros((d, d))
    Ab[:n, :n] = ops.spec.A
    Kb = np.zeros((d, d))
    kb = _kbar(ops, t, np.arange(ncells))
    for p in range(ncells):
        Kb[:n, n + p * m : n + (p + 1) * m] = dt * kb[p] * ops.spec.B
    B = ops.spec.B
    Bb = np.block([[B @ B.T, B], [B.T, np.eye(m)]])
    S = np.diag(np.r_[np.ones(n), np.full(ncells * m, dt)])
    return MatrixFormCoefficients(Q=Qb, A=Ab, B=Bb, K=Kb, S=S, ncells=ncells)


def block_operator(field: CostOperatorField, t: int, ncells: int) -> np.ndarray:
    """Matrix of the cost form on ``(w, eta_0..eta_{ncells-1})``."""
    dt = field.dt
    P0 = field.P0[t]
    n = P0.shape[0]
    P1 = field.P1[t][:ncells]
    m = P1.shape[2]
    off = dt * np.transpose(P1, (1, 0, 2)).reshape(n, ncells * m)
    low = history_block(field.P2[t][:ncells, :ncells], dt)
    return np.block([[P0, off], [off.T, low]])


def _selector_gain(field: CostOperatorField, t: int, ncells: int) -> np.ndarray:
    """Rows ``[[P0, dt P1(t,p)], [P1(t,t)', dt P2(t,p,t)]]`` feeding the control quadratic."""
    dt = field.dt
    P0 = field.P0[t]
    n = P0.shape[0]
    P1 = field.P1[t]
    m = P1.shape[2]
    top = np.hstack([P0, dt * np.transpose(P1[:ncells], (1, 0, 2)).reshape(n, ncells * m)])
    diag = field.P2[t][:ncells, t]  # (p, m, m) = P2(t,p,t)
    bottom = np.hstack([P1[t].T, dt * np.transpose(diag, (1, 0, 2)).reshape(m, ncells * m)])
    return np.vstack([top, bottom])


def matrix_form_residual(field: CostOperatorField, ops: DiscretizedOperators) -> np.ndarray:
    """Operator-norm residual of the block Riccati equation at interior nodes.

    Entry ``k`` belongs to node ``k + 1``. Norms are taken in coordinates
    orthonormal for the slice inner product.
    """
    if field.N != ops.N:
        raise IndexOutOfRange("field and operators use different grids")
    dt, N = field.dt, field.N
    out = np.zeros(N - 1)
    for t in range(1, N):
        c = max(t - 1, 0)
        co = matrix_form_coefficients(ops, t, c)
        F = block_operator(field, t, c)
        slope = (block_operator(field, t + 1, c) - block_operator(field, t - 1, c)) / (2 * dt)
        R = _selector_gain(field, t, c)
        M = co.A + co.K
        rhs = -co.Q - F @ M - M.T @ F + R.T @ co.B @ R
        s = 1.0 / np.sqrt(np.diag(co.S))
        E = (slope - rhs) * s[:, None] * s[None, :]
        out[t - 1] = np.linalg.norm(E, 2)
    return out


# ------------------------------------------------------- kernel derivatives
def kernel_derivative_check(ops: DiscretizedOperators, t: int,
                            probes_n: np.ndarray | None = None,
                            probes_m: np.ndarray | None = None,
                            tol: float = 1e-10) -> dict:
    """Central differences in ``t`` of ``psi1, psi2, Z1, Z2, lambda`` versus closed forms.

    Compared on ``sigma`` in ``t+1..N-1`` and history cells ``p <= t-2``.
    Returns the sup discrepancy per quantity, over probes.
    """
    N, dt = ops.N, ops.dt
    if not 2 <= t <= N - 2:
        raise IndexOutOfRange(f"derivative check needs 2 <= t <= N-2, got {t}")
    if probes_n is None or probes_m is None:
        dn, dm = default_probes(ops.n, ops.m)
        probes_n = dn if probes_n is None else np.atleast_2d(probes_n)
        probes_m = dm if probes_m is None else np.atleast_2d(probes_m)
    X, V = probes_n.T, probes_m.T
    Lam0 = assemble_Lambda(ops, 0) if dense_allowed(ops) else None
    ks = {}
    solver = None
    for s in (t - 1, t, t + 1):
        sv = LambdaSolver(ops, s, tol=tol, Lambda0=Lam0)
        if s == t:
            solver = sv
        ks[s] = build_feedback_kernels(ops, s, tol, sv)
    k = ks[t]
    c = t - 1  # cells 0..t-2
    cells = np.arange(c)
    B, A = ops.spec.B, ops.spec.A
    sig = np.arange(t + 1, N)  # absolute sigma

    def fd(name, sel=None):
        a = getattr(ks[t + 1], name)[sig - (t + 1)]
        b = getattr(ks[t - 1], name)[sig - (t - 1)]
        if sel is not None:
            a, b = a[..., sel], b[..., sel]
        return (a - b) / (2 * dt)

    E = k.free
    gam_c = E @ B + k.lam[..., t]  # direct plus memory response to a point input at t
    Q = ops.Q

    def qmul(v):
        return np.einsum("ab,jb...->ja...", Q, v)

    # psi1, Z1
    rhs1 = apply_G_adjoint(ops, t, qmul(E @ A + np.einsum("jnm,mk->jnk", gam_c, k.psi1[0])))
    dpsi1 = solver.solve(rhs1)
    dz1 = -E @ A + apply_G(ops, t, dpsi1) - np.einsum("jnm,mk->jnk", gam_c, k.psi1[0])
    # psi2, Z2, lambda on the tested cells
    kb = _kbar(ops, t, cells)
    EkB = np.einsum("jab,bm,p->jamp", E, B, kb)
    rhs2 = apply_G_adjoint(ops, t, qmul(EkB + np.einsum("jnm,mkp->jnkp", gam_c, k.psi2[0][..., :c])))
    dpsi2 = solver.solve(rhs2)
    dz2 = -EkB + apply_G(ops, t, dpsi2) - np.einsum("jnm,mkp->jnkp", gam_c, k.psi2[0][..., :c])
    dlam = -EkB

    loc = sig - t

    def sup(a, probes):
        return float(np.max(np.abs(np.einsum("j...k,kr->j...r", a, probes)))) if a.size else 0.0

    def sup_cells(a, probes):
        if not a.size:
            return 0.0
        return float(np.max(np.abs(np.einsum("jakp,kr->jarp", a, probes))))

    out = {
        "psi1": sup(fd("psi1") - dpsi1[loc], X),
        "Z1": sup(fd("z1") - dz1[loc], X),
        "psi2": sup_cells(fd("psi2", cells) - dpsi2[loc], V),
        "Z2": sup_cells(fd("z2", cells) - dz2[loc], V),
        "lambda": sup_cells(fd("lam", cells) - dlam[loc], V),
    }
    out["max"] = max(out.values())
    return out
