"""The invariant suite run by ``memlq verify``.

Each check returns a :class:`Check`; a check passes when its value is at
most its tolerance (for lower bounds the value is the violation).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .closed_loop import check_control_transition, check_state_transition, simulate_closed_loop
from .cost_operators import CostOperatorField, build_field, quadratic_cost_form, representation_gaps
from .lifted import (
    DiscretizedOperators,
    apply_G,
    apply_G_adjoint,
    apply_H,
    assemble_Lambda,
    dense_allowed,
    lambda_apply,
)
from .open_loop import evaluate_cost, first_representation, grid_norm, solve_open_loop
from .problem import AugmentedState
from .riccati import dre_residual, integrate_dre, matrix_form_residual
from .semigroup import semigroup_defect


@dataclass(frozen=True)
class Check:
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def as_json(self) -> dict:
        return {"value": float(self.value), "tolerance": float(self.tolerance), "pass": self.passed}


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 0.0)
    diff = float(np.max(np.abs(a - b)))
    return diff / scale if scale > 0 else diff


class Context:
    """Lazily computed shared results for one problem and initial state."""

    def __init__(self, ops: DiscretizedOperators, X0: AugmentedState, tol: float,
                 scheme: str, memory_cap: int):
        self.ops, self.X0, self.tol = ops, X0, tol
        self.scheme, self.memory_cap = scheme, memory_cap
        self._field = None
        self._integrated = None
        self._open = None

    @property
    def s(self) -> int:
        return self.X0.s_index

    @property
    def field(self) -> CostOperatorField:
        if self._field is None:
            self._field = build_field(self.ops, self.tol, self.memory_cap)
        return self._field

    @property
    def integrated(self) -> CostOperatorField:
        if self._integrated is None:
            self._integrated = integrate_dre(self.ops, self.scheme, self.memory_cap)
        return self._integrated

    @property
    def open_loop(self):
        if self._open is None:
            self._open = solve_open_loop(self.ops, self.s, self.X0, self.tol)
        return self._open


# ------------------------------------------------------------------- checks
def check_semigroup(ctx):
    return Check(semigroup_defect(ctx.ops.propagators), 1e-8)


def check_adjointness(ctx):
    ops, s = ctx.ops, ctx.s
    rng = np.random.default_rng(1)
    K = ops.N - s
    u = rng.standard_normal((K + 1, ops.m))
    v = rng.standard_normal((K + 1, ops.n))
    lhs = float(np.einsum("i,ia,ia->", ops.local_weights(s), apply_G(ops, s, u), v))
    rhs = float(np.einsum("j,ja,ja->", ops.control_weights(s), u, apply_G_adjoint(ops, s, v)))
    return Check(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300), 1e-8)


def check_fubini(ctx):
    ops, s = ctx.ops, ctx.s
    u = np.random.default_rng(2).standard_normal((ops.N - s + 1, ops.m))
    a = apply_H(ops, s, u, "nested").samples
    b = apply_H(ops, s, u, "fubini").samples
    return Check(_rel(a, b), 1e-10)


def check_coercivity(ctx):
    ops, s = ctx.ops, ctx.s
    if dense_allowed(ops):
        lam_min = float(np.min(np.linalg.eigvalsh(assemble_Lambda(ops, s))))
    else:
        rng = np.random.default_rng(3)
        lam_min = np.inf
        for _ in range(20):
            u = rng.standard_normal((ops.N - s + 1, ops.m))
            u[-1] = 0.0
            num = grid_norm(ops, s, u) ** 2
            val = float(np.einsum("j,ja,ja->", ops.control_weights(s), lambda_apply(ops, s, u), u))
            lam_min = min(lam_min, val / num)
    return Check(max(0.0, 1.0 - lam_min), 1e-8)


def check_optimality(ctx):
    r = ctx.open_loop
    scale = r.extra["rhs_norm"]
    value = r.residual / scale if scale > 0 else r.residual
    return Check(value, max(ctx.tol, 1e-12) * 10)


def check_convexity(ctx):
    ops, s, X0 = ctx.ops, ctx.s, ctx.X0
    u = ctx.open_loop.control.samples
    J = ctx.open_loop.cost
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        d = rng.standard_normal(u.shape)
        gap = evaluate_cost(ops, s, X0, u + d) - J - grid_norm(ops, s, d) ** 2
        worst = max(worst, -gap / max(1.0, J))
    return Check(worst, 1e-10)


def check_first_representation(ctx):
    r = ctx.open_loop
    u = r.control.samples
    # the control is the weighted adjoint of its own optimal state
    again = first_representation(ctx.ops, ctx.s, r.state.samples)
    return Check(_rel(again, u), 1e-8)


def check_cost_identity(ctx):
    J = ctx.open_loop.cost
    V = quadratic_cost_form(ctx.field, ctx.X0)
    return Check(abs(V - J) / max(abs(J), 1e-300) if J else abs(V), 1e-8)


def check_representations(ctx):
    N = ctx.ops.N
    worst = 0.0
    for t in sorted({0, ctx.s, (ctx.s + N) // 2, N - 1}):
        worst = max(worst, max(representation_gaps(ctx.ops, t).values()))
    return Check(worst, 1e-8)


def _field_checks(field: CostOperatorField):
    inv = field.invariants()
    scale = max(1.0, field.sup_norm())
    return {
        "P0_symmetry": Check(inv["P0_symmetry"], 1e-10),
        "P0_psd": Check(max(0.0, -inv["P0_min_eig"]) / scale, 1e-10),
        "P2_exchange": Check(inv["P2_exchange"], 1e-10),
        "final_slice": Check(inv["final_slice"], 0.0),
    }


def check_transition(ctx):
    ops, s = ctx.ops, ctx.s
    tau = (s + ops.N) // 2
    c = check_control_transition(ops, s, tau, ctx.X0, min(ctx.tol, 1e-12))
    w = check_state_transition(ops, s, tau, ctx.X0, min(ctx.tol, 1e-12))
    return {"control_transition": Check(c, 1e-8), "state_transition": Check(w, 1e-8)}


def check_closed_loop(ctx):
    rec = simulate_closed_loop(ctx.ops, ctx.field, ctx.X0)
    r = ctx.open_loop
    gap = _rel(rec.controls[:-1], r.control.samples[:-1])
    below = r.cost - rec.total_cost
    return {
        "closed_loop_control_gap": Check(gap, 5e-2),
        "closed_loop_suboptimality": Check(below, 1e-10),
    }


def check_uniqueness(ctx):
    return Check(ctx.field.gap(ctx.integrated)["relative"], 5e-2)


def check_residuals(ctx):
    """Componentwise residual relative to the field scale, and the block residual consistency."""
    rep = dre_residual(ctx.field, ctx.ops)
    mf = matrix_form_residual(ctx.field, ctx.ops)
    comp = rep.max
    scale = max(1.0, ctx.field.sup_norm())
    top = float(np.max(mf))
    if comp > 0 and top > 0:
        ratio = top / comp
    else:
        ratio = 1.0 if comp == top else np.inf
    A = np.linalg.norm(ctx.ops.spec.A, 2)
    tol = 10.0 * ctx.ops.dt * (1.0 + A) ** 2
    return {
        "dre_residual": Check(comp / scale, tol),
        "matrix_form_consistency": Check(max(ratio, 1.0 / ratio), 2.0),
    }


SUITE: dict[str, Callable] = {
    "semigroup_defect": check_semigroup,
    "adjointness": check_adjointness,
    "fubini_consistency": check_fubini,
    "coercivity": check_coercivity,
    "optimality_residual": check_optimality,
    "convexity": check_convexity,
    "first_representation": check_first_representation,
    "cost_identity": check_cost_identity,
    "representation_equivalence": check_representations,
    "field_invariants": lambda ctx: _field_checks(ctx.field),
    "integrated_invariants": lambda ctx: {
        "integrated_" + k: v for k, v in _field_checks(ctx.integrated).items()
    },
    "transition": check_transition,
    "closed_loop": check_closed_loop,
    "uniqueness_gap": check_uniqueness,
    "residuals": check_residuals,
}


def run_suite(ops: DiscretizedOperators, X0: AugmentedState, tol: float = 1e-10,
              scheme: str = "euler", memory_cap: int = 2 * 1024**3,
              threads: int = 1) -> dict[str, Check]:
    """All checks, keyed by name; deterministic order regardless of ``threads``."""
    return run_checks(Context(ops, X0, tol, scheme, memory_cap), threads)


def run_checks(ctx: Context, threads: int = 1) -> dict[str, Check]:
    # shared results first, so worker threads only read them
    ctx.open_loop
    ctx.field
    ctx.integrated

    def one(item):
        name, fn = item
        out = fn(ctx)
        return out if isinstance(out, dict) else {name: out}

    items = list(SUITE.items())
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, items))
    else:
        parts = [one(it) for it in items]
    results = {}
    for p in parts:
        results.update(p)
    return results

