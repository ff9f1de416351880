"""Built-in problem configurations, in the CLI's JSON schema."""
from __future__ import annotations

import copy

BUILTIN = {
    "scalar_memoryless": {
        "n": 1, "m": 1, "T": 1.0, "N": 100,
        "A": [-1.0], "B": [1.0], "C": [1.0],
        "kernel": {"type": "zero"},
        "s_index": 0, "w0": [1.0], "eta": "zero",
    },
    "scalar_memory": {
        "n": 1, "m": 1, "T": 1.0, "N": 100,
        "A": [-1.0], "B": [1.0], "C": [1.0],
        "kernel": {"type": "exponential", "a": 1.0},
        "s_index": 0, "w0": [1.0], "eta": "zero",
    },
    "oscillator_memory": {
        "n": 2, "m": 1, "T": 1.0, "N": 100,
        "A": [0.0, 1.0, -1.0, 0.0], "B": [0.0, 1.0], "C": "identity",
        "kernel": {"type": "exponential", "a": 2.0},
        "s_index": 0, "w0": [1.0, 0.0], "eta": "zero",
    },
    "heat1d_memory": {
        "n": 3, "m": 3, "T": 0.5, "N": 100,
        "A": "heat1d", "B": "identity", "C": "identity",
        "kernel": {"type": "exponential", "a": 1.0},
        "s_index": 0, "w0": [0.5, 1.0, 0.5], "eta": "zero",
    },
}


def builtin(name: str, N: int | None = None, **overrides) -> dict:
    """A fresh copy of a built-in config, optionally with a different grid size."""
    if name not in BUILTIN:
        raise KeyError(f"unknown built-in {name!r}; have {sorted(BUILTIN)}")
    cfg = copy.deepcopy(BUILTIN[name])
    if N is not None:
        cfg["N"] = int(N)
    cfg.update(overrides)
    return cfg


def build_example(name: str, N: int | None = None, **overrides):
    """``(ops, X0, plan)`` for a built-in config."""
    from .cli import config_to_plan
    from .lifted import discretize

    plan = config_to_plan(builtin(name, N, **overrides))
    return discretize(plan.spec, plan.grid), plan.initial, plan
