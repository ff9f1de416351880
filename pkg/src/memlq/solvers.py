"""Linear solves against ``Lambda_s``: conjugate gradient or a dense Cholesky."""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.linalg

from .errors import NoConvergence
from .lifted import (
    DiscretizedOperators,
    assemble_Lambda,
    dense_allowed,
    lambda_apply,
)


def conjugate_gradient(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-10,
    maxiter: int | None = None,
    x0: np.ndarray | None = None,
):
    """Solve ``apply(x) = b`` for a symmetric positive definite operator.

    Stops when ``||b - apply(x)|| <= tol * ||b||``. Returns ``(x, info)``.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    bnorm = np.linalg.norm(b)
    if maxiter is None:
        maxiter = 50 * b.size
    if bnorm == 0.0:
        return x, {"niter": 0, "res_norm": 0.0}
    r = b - apply(x)
    p = r.copy()
    rr = float(np.vdot(r, r))
    target = (tol * bnorm) ** 2
    for it in range(1, maxiter + 1):
        if rr <= target:
            return x, {"niter": it - 1, "res_norm": np.sqrt(rr)}
        Ap = apply(p)
        alpha = rr / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    if rr <= target:
        return x, {"niter": maxiter, "res_norm": np.sqrt(rr)}
    raise NoConvergence(
        f"CG hit {maxiter} iterations with relative residual {np.sqrt(rr) / bnorm:.3e}"
    )


class LambdaSolver:
    """Solves ``Lambda_s u = b`` for control-shaped right-hand sides.

    ``b`` has shape (N-s+1, m, ...); trailing axes are independent columns.
    The final sample is decoupled (``Lambda`` acts as the identity there).
    """

    def __init__(self, ops: DiscretizedOperators, s: int, method: str = "auto",
                 tol: float = 1e-10, Lambda0: np.ndarray | None = None):
        self.ops = ops
        self.s = s
        self.tol = tol
        if method == "auto":
            method = "dense" if dense_allowed(ops) else "cg"
        self.method = method
        K, m = ops.N - s, ops.m
        self.free = K * m
        if method == "dense" and self.free > 0:
            if Lambda0 is not None:
                off = s * m
                Lam = Lambda0[off : off + self.free, off : off + self.free]
            else:
                Lam = assemble_Lambda(ops, s)[: self.free, : self.free]
            self._chol = scipy.linalg.cho_factor(Lam, lower=True)
        elif method not in ("dense", "cg"):
            raise ValueError(f"unknown method {method!r}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        out = np.array(b, dtype=float, copy=True)
        if self.free == 0:
            return out
        shape = b.shape
        K, m = self.ops.N - self.s, self.ops.m
        rhs = b[:K].reshape(self.free, -1)
        if self.method == "dense":
            sol = scipy.linalg.cho_solve(self._chol, rhs)
        else:
            sol = np.empty_like(rhs)
            for c in range(rhs.shape[1]):
                sol[:, c] = self._cg(rhs[:, c])
        out[:K] = sol.reshape((K, m) + shape[2:])
        return out

    def _cg(self, rhs: np.ndarray) -> np.ndarray:
        ops, s = self.ops, self.s
        K, m = ops.N - s, ops.m

        def apply(x):
            full = np.zeros((K + 1, m))
            full[:K] = x.reshape(K, m)
            return lambda_apply(ops, s, full)[:K].ravel()

        x, _ = conjugate_gradient(apply, rhs, tol=self.tol)
        return x
