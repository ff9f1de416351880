"""Matrix exponentials and the cached grid propagators ``E_j = exp(j dt A)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonFinite
from .problem import TimeGrid


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """``exp(t A)`` by scaling-and-squaring with a Pade approximant."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if t < 0:
        raise ValueError("propagators are only defined for t >= 0")
    if not np.all(np.isfinite(A)):
        raise NonFinite("generator has non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(t * A)
    if not np.all(np.isfinite(E)):
        raise NonFinite(f"exp(tA) overflowed for t={t}")
    return E


def input_integral(A, B, h: float) -> np.ndarray:
    """``int_0^h exp(rA) dr B`` via the exponential of an augmented block matrix."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    return matrix_exponential(M, h)[:n, n:]


@dataclass(frozen=True)
class PropagatorCache:
    """``steps[j] = exp(j dt A)`` for ``j = 0..N`` plus the one-cell input map.

    ``hold_input`` is ``int_0^dt exp(rA) dr B``, the exact response after one
    cell to a unit control held over that cell.
    """

    steps: np.ndarray  # (N+1, n, n)
    hold_input: np.ndarray  # (n, m)
    dt: float

    @property
    def N(self) -> int:
        return self.steps.shape[0] - 1

    def adjoint(self, j: int) -> np.ndarray:
        return self.steps[j].T


def build_propagators(A, B, grid: TimeGrid) -> PropagatorCache:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    steps = np.empty((grid.N + 1, n, n))
    steps[0] = np.eye(n)
    # each power from its own expm call, not by repeated multiplication
    for j in range(1, grid.N + 1):
        steps[j] = matrix_exponential(A, j * grid.dt)
    hold = input_integral(A, B, grid.dt)
    steps.setflags(write=False)
    hold.setflags(write=False)
    return PropagatorCache(steps=steps, hold_input=hold, dt=grid.dt)


def semigroup_defect(cache: PropagatorCache) -> float:
    """``max ||E_{i+j} - E_i E_j|| / (1 + ||E_{i+j}||)`` over ``i + j <= N``."""
    E = cache.steps
    N = cache.N
    worst = 0.0
    for i in range(N + 1):
        prods = np.einsum("ab,jbc->jac", E[i], E[: N - i + 1])
        ref = E[i : N + 1]
        err = np.linalg.norm(ref - prods, axis=(1, 2))
        scale = 1.0 + np.linalg.norm(ref, axis=(1, 2))
        worst = max(worst, float(np.max(err / scale)))
    return worst
