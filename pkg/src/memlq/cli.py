"""Command line interface: ``memlq <command> --config <path> [--out DIR] [--threads K]``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closed_loop import simulate_closed_loop
from .cost_operators import DEFAULT_MEMORY_CAP, CostOperatorField, build_field, quadratic_cost_form
from .errors import ConfigError, MemLQError, NonFinite, ParseError, SchemaError
from .lifted import discretize
from .open_loop import solve_open_loop
from .problem import (
    AugmentedState,
    KernelSpec,
    ProblemSpec,
    TimeGrid,
    build_grid,
    make_augmented_state,
    validate_spec,
)
from .riccati import classical_riccati_reference, integrate_dre
from .verify import Check, Context, run_checks, run_suite

COMMANDS = ("simulate", "solve", "feedback", "riccati", "verify", "report")
REQUIRED = ("n", "m", "T", "N", "A", "B", "C", "kernel", "s_index", "w0", "eta")
OPTIONAL = {"tol": 1e-10, "scheme": "euler", "memory_cap_bytes": DEFAULT_MEMORY_CAP}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RESOURCE = 0, 1, 2, 3


@dataclass(frozen=True)
class RunPlan:
    spec: ProblemSpec
    grid: TimeGrid
    command: str
    start: int
    initial: AugmentedState
    tol: float
    scheme: str
    out_dir: Path
    memory_cap: int
    threads: int = 1


def heat1d(n: int) -> np.ndarray:
    """Dirichlet second-difference Laplacian on ``n`` interior points of (0, 1)."""
    L = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    return (n + 1) ** 2 * L


def _number(cfg, key, kind=float):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{key!r} must be a number")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise SchemaError(f"{key!r} must be an integer")
        return int(v)
    return float(v)


def _matrix(cfg, key, rows, cols, allow_identity=False):
    v = cfg[key]
    if isinstance(v, str):
        if allow_identity and v == "identity":
            if rows != cols:
                raise SchemaError(f"{key!r}='identity' needs a square shape, got {rows}x{cols}")
            return np.eye(rows)
        raise SchemaError(f"{key!r}: unknown preset {v!r}")
    try:
        arr = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{key!r} is not a numeric array") from exc
    if arr.size != rows * cols or arr.ndim not in (1, 2):
        raise SchemaError(f"{key!r} has {arr.size} entries, expected {rows * cols}")
    if arr.ndim == 2 and arr.shape != (rows, cols):
        raise SchemaError(f"{key!r} has shape {arr.shape}, expected {(rows, cols)}")
    return arr.reshape(rows, cols)


def _kernel(raw, N):
    if not isinstance(raw, dict) or "type" not in raw:
        raise SchemaError("'kernel' must be an object with a 'type'")
    kind = raw["type"]
    allowed = {"zero": {"type"}, "exponential": {"type", "a"}, "samples": {"type", "values"}}
    if kind not in allowed:
        raise SchemaError(f"unknown kernel type {kind!r}")
    if set(raw) != allowed[kind]:
        raise SchemaError(f"kernel {kind!r} takes keys {sorted(allowed[kind])}, got {sorted(raw)}")
    if kind == "zero":
        return KernelSpec.zero()
    if kind == "exponential":
        a = raw["a"]
        if isinstance(a, bool) or not isinstance(a, (int, float)):
            raise SchemaError("kernel 'a' must be a number")
        return KernelSpec.exponential(a)
    vals = np.array(raw["values"], dtype=float)
    if vals.ndim != 1 or vals.size != N + 1:
        raise SchemaError(f"sampled kernel needs {N + 1} values, got {vals.size}")
    return KernelSpec.samples(vals)


def _history(raw, s, m):
    if isinstance(raw, str):
        if raw != "zero":
            raise SchemaError(f"'eta' must be an array or 'zero', got {raw!r}")
        return np.zeros((s + 1 if s > 0 else 0, m))
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError("'eta' is not a numeric array") from exc
    if arr.size == 0:
        arr = arr.reshape(0, m)
    if arr.ndim == 1 and m == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != m:
        raise SchemaError(f"'eta' samples must have length {m}")
    if s == 0:
        # the start node alone carries no weight
        if arr.shape[0] > 1:
            raise SchemaError("'eta' for s_index=0 holds at most one sample")
        return np.zeros((0, m))
    if arr.shape[0] != s + 1:
        raise SchemaError(f"'eta' has {arr.shape[0]} samples, s_index={s} needs {s + 1}")
    return arr


def config_to_plan(cfg: dict, command: str = "verify", out_dir=".", threads: int = 1) -> RunPlan:
    """Validate a parsed config document against the closed schema."""
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object")
    missing = [k for k in REQUIRED if k not in cfg]
    extra = sorted(set(cfg) - set(REQUIRED) - set(OPTIONAL))
    if missing:
        raise SchemaError(f"missing keys: {missing}")
    if extra:
        raise SchemaError(f"unknown keys: {extra}")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    n, m, N = _number(cfg, "n", int), _number(cfg, "m", int), _number(cfg, "N", int)
    T = _number(cfg, "T")
    if n < 1 or m < 1:
        raise SchemaError("n and m must be positive")
    A = heat1d(n) if cfg["A"] == "heat1d" else _matrix(cfg, "A", n, n)
    B = _matrix(cfg, "B", n, m, allow_identity=True)
    C = _matrix(cfg, "C", n, n, allow_identity=True)
    try:
        spec = validate_spec(n, m, A, B, C, _kernel(cfg["kernel"], N), T)
        grid = build_grid(T, N)
        s = _number(cfg, "s_index", int)
        if not 0 <= s < N:
            raise SchemaError(f"s_index must lie in 0..{N - 1}")
        w0 = np.array(cfg["w0"], dtype=float)
        if w0.shape != (n,):
            raise SchemaError(f"'w0' must have length {n}")
        X0 = make_augmented_state(w0, _history(cfg["eta"], s, m), s, m=m)
    except NonFinite as exc:
        raise SchemaError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc)) from exc
    tol = _number(cfg, "tol") if "tol" in cfg else OPTIONAL["tol"]
    if not tol > 0:
        raise SchemaError("'tol' must be positive")
    scheme = cfg.get("scheme", OPTIONAL["scheme"])
    if scheme not in ("euler", "heun"):
        raise SchemaError(f"'scheme' must be 'euler' or 'heun', got {scheme!r}")
    cap = _number(cfg, "memory_cap_bytes", int) if "memory_cap_bytes" in cfg else OPTIONAL["memory_cap_bytes"]
    if cap <= 0:
        raise SchemaError("'memory_cap_bytes' must be positive")
    return RunPlan(spec=spec, grid=grid, command=command, start=s, initial=X0, tol=tol,
                   scheme=scheme, out_dir=Path(out_dir), memory_cap=cap, threads=int(threads))


def parse_config(path, command: str = "verify", out_dir=".", threads: int = 1) -> RunPlan:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_to_plan(cfg, command, out_dir, threads)


def spec_to_config(spec: ProblemSpec, grid: TimeGrid, X0: AugmentedState, **optional) -> dict:
    """Inverse of :func:`config_to_plan` for explicit (non-preset) data."""
    k = spec.kernel
    if k.form == "zero":
        kern = {"type": "zero"}
    elif k.form == "exponential":
        kern = {"type": "exponential", "a": k.a}
    else:
        kern = {"type": "samples", "values": k.values.tolist()}
    s = X0.s_index
    cfg = {
        "n": spec.n, "m": spec.m, "T": spec.T, "N": grid.N,
        "A": spec.A.ravel().tolist(), "B": spec.B.ravel().tolist(), "C": spec.C.ravel().tolist(),
        "kernel": kern, "s_index": s, "w0": X0.w0.tolist(),
        "eta": X0.history.tolist() if s > 0 else "zero",
    }
    cfg.update(optional)
    return cfg


# ------------------------------------------------------------------ emission
def _fmt(x) -> str:
    return "%.17g" % float(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_trajectory(path: Path, nodes, w, u) -> None:
    n, m = w.shape[1], u.shape[1]
    header = ["t"] + [f"w_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)]
    write_csv(path, header, np.column_stack([nodes, w, u]))


def emit_report(results: dict, out_dir) -> dict:
    """Write the artifacts in ``results`` and return the file paths.

    Recognised keys: ``trajectory`` (nodes, w, u), ``cost`` (dict),
    ``field`` (header, rows), ``riccati`` (header, rows), ``verify``
    (name -> Check) and ``report`` (text).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    if "trajectory" in results:
        written["trajectory"] = out / "trajectory.csv"
        write_trajectory(written["trajectory"], *results["trajectory"])
    if "cost" in results:
        written["cost"] = out / "cost.json"
        write_json(written["cost"], results["cost"])
    for key in ("field", "riccati"):
        if key in results:
            written[key] = out / f"{key}.csv"
            write_csv(written[key], *results[key])
    if "verify" in results or not results:
        written["verify"] = out / "verify.json"
        checks = results.get("verify", {})
        write_json(written["verify"], {k: c.as_json() for k, c in checks.items()})
    if "report" in results:
        written["report"] = out / "report.txt"
        written["report"].write_text(results["report"])
    return written


def field_rows(field: CostOperatorField, nodes):
    header = ["t", "p0_norm", "p1_norm", "p2_norm", "p0_min_eig", "p0_symmetry"]
    rows = []
    for t in range(field.N + 1):
        P0 = field.P0[t]
        rows.append([
            nodes[t],
            np.linalg.norm(P0, 2),
            np.max(np.abs(field.P1[t][:t])) if t else 0.0,
            np.max(np.abs(field.P2[t][:t, :t])) if t else 0.0,
            np.min(np.linalg.eigvalsh(0.5 * (P0 + P0.T))),
            np.max(np.abs(P0 - P0.T)),
        ])
    return header, rows


def riccati_rows(integ: CostOperatorField, direct: CostOperatorField, nodes, classical=None):
    header = ["t", "p0_norm", "gap_p0", "gap_p1", "gap_p2"]
    if classical is not None:
        header.append("gap_classical")
    rows = []
    for t in range(integ.N + 1):
        row = [
            nodes[t],
            np.linalg.norm(integ.P0[t], 2),
            np.max(np.abs(integ.P0[t] - direct.P0[t])),
            np.max(np.abs(integ.P1[t] - direct.P1[t])),
            np.max(np.abs(integ.P2[t] - direct.P2[t])),
        ]
        if classical is not None:
            row.append(np.max(np.abs(integ.P0[t] - classical[t])))
        rows.append(row)
    return header, rows


def _digest(plan: RunPlan, open_res, field, integ, closed, checks) -> str:
    spec = plan.spec
    lines = [
        "memory-kernel LQ problem",
        f"  n={spec.n} m={spec.m} T={spec.T:g} N={plan.grid.N} kernel={spec.kernel.form}"
        f" start={plan.start}",
        "",
        f"open-loop optimal cost       {open_res.cost:.12g}",
        f"optimality residual          {open_res.residual:.3e}",
        f"quadratic cost form          {quadratic_cost_form(field, plan.initial):.12g}",
        f"closed-loop cost             {closed.total_cost:.12g}",
        f"P0(start) norm               {np.linalg.norm(field.P0[plan.start], 2):.12g}",
        f"integrated vs direct gap     {field.gap(integ)['relative']:.3e} ({plan.scheme})",
        "",
        "checks",
    ]
    width = max(len(k) for k in checks) if checks else 0
    for name, c in checks.items():
        tag = "pass" if c.passed else "FAIL"
        lines.append(f"  {name:<{width}}  {tag}  {c.value:.3e} (tol {c.tolerance:.1e})")
    return "\n".join(lines) + "\n"


def run(plan: RunPlan) -> int:
    """Execute ``plan``, write its artifacts and return the exit status."""
    ops = discretize(plan.spec, plan.grid)
    nodes = plan.grid.nodes
    s = plan.start
    results = {}
    checks: dict[str, Check] = {}
    if plan.command == "solve":
        r = solve_open_loop(ops, s, plan.initial, plan.tol)
        results["trajectory"] = (nodes[s:], r.state.samples, r.control.samples)
        results["cost"] = {"cost": r.cost, "residual": r.residual,
                           "relative_residual": r.residual / r.extra["rhs_norm"]
                           if r.extra["rhs_norm"] > 0 else 0.0,
                           "method": r.extra["method"], "s_index": s}
        scale = r.extra["rhs_norm"]
        checks["optimality_residual"] = Check(r.residual / scale if scale > 0 else r.residual,
                                              10 * plan.tol)
    elif plan.command == "simulate":
        field = build_field(ops, plan.tol, plan.memory_cap)
        rec = simulate_closed_loop(ops, field, plan.initial)
        results["trajectory"] = (nodes[s:], rec.state.samples, rec.controls)
    elif plan.command == "feedback":
        field = build_field(ops, plan.tol, plan.memory_cap)
        results["field"] = field_rows(field, nodes)
    elif plan.command == "riccati":
        integ = integrate_dre(ops, plan.scheme, plan.memory_cap)
        direct = build_field(ops, plan.tol, plan.memory_cap)
        classical = (classical_riccati_reference(plan.spec, plan.grid)
                     if plan.spec.kernel.is_zero else None)
        results["riccati"] = riccati_rows(integ, direct, nodes, classical)
    elif plan.command == "verify":
        checks = run_suite(ops, plan.initial, plan.tol, plan.scheme, plan.memory_cap,
                           plan.threads)
        results["verify"] = checks
    elif plan.command == "report":
        ctx = Context(ops, plan.initial, plan.tol, plan.scheme, plan.memory_cap)
        checks = run_checks(ctx, plan.threads)
        closed = simulate_closed_loop(ops, ctx.field, plan.initial)
        text = _digest(plan, ctx.open_loop, ctx.field, ctx.integrated, closed, checks)
        results["report"] = text
        sys.stdout.write(text)
    emit_report(results, plan.out_dir)
    return EXIT_OK if all(c.passed for c in checks.values()) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memlq", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON problem configuration")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for verify")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("memlq: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        plan = parse_config(args.config, args.command, args.out, args.threads)
        return run(plan)
    except FileNotFoundError as exc:
        print(f"memlq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemLQError as exc:
        print(f"memlq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.category
    except MemoryError as exc:
        print(f"memlq: out of memory: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except OSError as exc:
        print(f"memlq: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
