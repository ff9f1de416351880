"""Grid-refinement study for a built-in example.

Prints, for each grid size, the residual and gap quantities that should
decay at first order, and the ratio between successive grids.

Usage: python3 scripts/convergence_study.py [example] [N1 N2 ...]
"""
import sys
import time

import numpy as np

from memlq.closed_loop import simulate_closed_loop
from memlq.cost_operators import build_field
from memlq.examples import BUILTIN, build_example
from memlq.open_loop import solve_open_loop
from memlq.riccati import dre_residual, integrate_dre, kernel_derivative_check


def measure(name, N):
    ops, X, _ = build_example(name, N)
    field = build_field(ops)
    rec = simulate_closed_loop(ops, field, X)
    u = solve_open_loop(ops, X.s_index, X).control.samples[:-1]
    return {
        "dre_residual": dre_residual(field, ops).max,
        "integrated_gap": field.gap(integrate_dre(ops))["relative"],
        "closed_loop_gap": float(np.max(np.abs(rec.controls[:-1] - u)) / np.max(np.abs(u))),
        "derivative_check": kernel_derivative_check(ops, N // 2)["max"],
    }


def main(argv):
    name = argv[0] if argv else "scalar_memory"
    if name not in BUILTIN:
        raise SystemExit(f"unknown example {name!r}; choose from {sorted(BUILTIN)}")
    grids = [int(a) for a in argv[1:]] or [50, 100, 200]
    prev = None
    for N in grids:
        t0 = time.perf_counter()
        vals = measure(name, N)
        cols = []
        for k, v in vals.items():
            ratio = f" (x{prev[k] / v:.2f})" if prev and v else ""
            cols.append(f"{k}={v:.3e}{ratio}")
        print(f"N={N:<5d} " + "  ".join(cols) + f"  [{time.perf_counter() - t0:.1f} s]")
        prev = vals


if __name__ == "__main__":
    main(sys.argv[1:])
