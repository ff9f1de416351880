"""Problem data, time grid and trajectory containers.

All containers are frozen dataclasses holding read-only numpy arrays.

Control samples are node values, each held constant over its cell
``[t_j, t_{j+1})``. The sample at the final node and the history sample
at the start node have zero quadrature weight (they sit at the right edge
of the last cell of their range).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    BadGrid,
    BadHorizon,
    DimensionMismatch,
    HistoryLengthMismatch,
    NonFinite,
)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or Inf entries")


@dataclass(frozen=True)
class KernelSpec:
    """Scalar memory kernel ``k`` on ``[0, T]``.

    ``form`` is one of ``"zero"``, ``"exponential"`` (``k(tau) = exp(-a tau)``)
    or ``"samples"`` (values on the grid nodes, linear in between).
    """

    form: str = "zero"
    a: float = 0.0
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.form not in ("zero", "exponential", "samples"):
            raise ValueError(f"unknown kernel form {self.form!r}")
        if self.form == "exponential" and not np.isfinite(self.a):
            raise NonFinite("exponential kernel decay rate must be finite")
        if self.form == "samples":
            if self.values is None:
                raise ValueError("sampled kernel needs values")
            vals = _frozen(self.values)
            if vals.ndim != 1:
                raise DimensionMismatch("kernel samples must be a flat array")
            _check_finite("kernel samples", vals)
            object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls) -> "KernelSpec":
        return cls("zero")

    @classmethod
    def exponential(cls, a: float) -> "KernelSpec":
        return cls("exponential", a=float(a))

    @classmethod
    def samples(cls, values) -> "KernelSpec":
        return cls("samples", values=np.asarray(values, dtype=float))

    @property
    def is_zero(self) -> bool:
        if self.form == "zero":
            return True
        if self.form == "samples":
            return not np.any(self.values)
        return False

    def evaluate(self, tau, T: float) -> np.ndarray:
        """Point values ``k(tau)``; zero for negative arguments."""
        tau = np.asarray(tau, dtype=float)
        if self.form == "zero":
            out = np.zeros_like(tau)
        elif self.form == "exponential":
            out = np.exp(-self.a * np.maximum(tau, 0.0))
        else:
            nodes = np.linspace(0.0, T, self.values.size)
            out = np.interp(tau, nodes, self.values)
        return np.where(tau < 0.0, 0.0, out)

    def cell_integrals(self, grid: "TimeGrid") -> np.ndarray:
        """``D[r] = int_{(r-1)dt}^{r dt} k``, with ``D[0] = 0``; length ``N+1``."""
        N, dt = grid.N, grid.dt
        D = np.zeros(N + 1)
        r = np.arange(1, N + 1)
        if self.form == "exponential":
            if self.a == 0.0:
                D[1:] = dt
            else:
                D[1:] = np.exp(-self.a * (r - 1) * dt) * (-np.expm1(-self.a * dt)) / self.a
        elif self.form == "samples":
            if self.values.size != N + 1:
                raise DimensionMismatch(
                    f"kernel has {self.values.size} samples, grid needs {N + 1}"
                )
            v = self.values
            D[1:] = 0.5 * dt * (v[:-1] + v[1:])
        return D


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    m: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    kernel: KernelSpec
    T: float

    def __post_init__(self):
        for name in ("A", "B", "C"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int
    dt: float
    nodes: np.ndarray

    def trapezoid(self, start: int = 0) -> np.ndarray:
        """Trapezoid weights on nodes ``start..N`` (length ``N - start + 1``)."""
        w = np.full(self.N - start + 1, self.dt)
        if w.size == 1:
            return np.zeros(1)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def cell_weights(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        """Weights for held samples on nodes ``start..stop``: ``dt`` except the last, 0."""
        stop = self.N if stop is None else stop
        w = np.full(stop - start + 1, self.dt)
        w[-1] = 0.0
        return w


@dataclass(frozen=True)
class AugmentedState:
    """Current state paired with the control history on ``[0, s]``."""

    s_index: int
    w0: np.ndarray
    history: np.ndarray  # shape (s_index + 1, m), or (0, m) when s_index == 0

    @property
    def n(self) -> int:
        return self.w0.shape[0]


@dataclass(frozen=True)
class ControlTrajectory:
    s_index: int
    samples: np.ndarray  # (N - s + 1, m)


@dataclass(frozen=True)
class StateTrajectory:
    s_index: int
    samples: np.ndarray  # (N - s + 1, n)


@dataclass(frozen=True)
class SolveResult:
    control: ControlTrajectory
    state: StateTrajectory
    cost: float
    residual: float
    extra: dict = field(default_factory=dict, compare=False)


def _as_matrix(name, raw, rows, cols):
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 1 and arr.size == rows * cols:
        arr = arr.reshape(rows, cols)
    if arr.ndim == 0 and rows == cols == 1:
        arr = arr.reshape(1, 1)
    if arr.shape != (rows, cols):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {(rows, cols)}")
    return arr


def validate_spec(n, m, A, B, C, kernel: KernelSpec, T) -> ProblemSpec:
    """Check dimensions, finiteness and horizon; return an immutable spec."""
    n, m = int(n), int(m)
    if n < 1 or m < 1:
        raise DimensionMismatch("n and m must be at least 1")
    A = _as_matrix("A", A, n, n)
    B = _as_matrix("B", B, n, m)
    C = _as_matrix("C", C, n, n)
    for name, arr in (("A", A), ("B", B), ("C", C)):
        _check_finite(name, arr)
    T = float(T)
    if not np.isfinite(T):
        raise NonFinite("T must be finite")
    if T <= 0.0:
        raise BadHorizon(f"horizon must be positive, got {T}")
    if not isinstance(kernel, KernelSpec):
        raise TypeError("kernel must be a KernelSpec")
    return ProblemSpec(n=n, m=m, A=A, B=B, C=C, kernel=kernel, T=T)


def build_grid(T: float, N: int) -> TimeGrid:
    N = int(N)
    if N < 2:
        raise BadGrid(f"need at least 2 steps, got {N}")
    if not T > 0.0:
        raise BadHorizon(f"horizon must be positive, got {T}")
    dt = T / N
    nodes = np.arange(N + 1) * dt
    nodes[-1] = T
    return TimeGrid(T=float(T), N=N, dt=dt, nodes=_frozen(nodes))


def make_augmented_state(w0, history, s_index: int, m: Optional[int] = None) -> AugmentedState:
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    _check_finite("w0", w0)
    s_index = int(s_index)
    if s_index < 0:
        raise HistoryLengthMismatch("s_index must be non-negative")
    if history is None:
        history = np.zeros((0, m or 1))
    hist = np.asarray(history, dtype=float)
    if hist.ndim == 1:
        hist = hist.reshape(-1, 1) if (m in (None, 1)) else hist.reshape(-1, m)
    if hist.size == 0:
        hist = hist.reshape(0, m if m is not None else (hist.shape[1] if hist.ndim == 2 else 1))
    expected = s_index + 1 if s_index > 0 else 0
    if hist.shape[0] != expected:
        raise HistoryLengthMismatch(
            f"history has {hist.shape[0]} samples, s_index={s_index} needs {expected}"
        )
    if m is not None and hist.shape[1] != m:
        raise DimensionMismatch(f"history samples have width {hist.shape[1]}, expected {m}")
    _check_finite("history", hist)
    return AugmentedState(s_index=s_index, w0=_frozen(w0), history=_frozen(hist))


def zero_state(n: int, m: int, s_index: int = 0) -> AugmentedState:
    hist = np.zeros((s_index + 1 if s_index > 0 else 0, m))
    return make_augmented_state(np.zeros(n), hist, s_index, m=m)


def control(s_index: int, samples) -> ControlTrajectory:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    _check_finite("control", arr)
    return ControlTrajectory(s_index=int(s_index), samples=_frozen(arr))


def state(s_index: int, samples) -> StateTrajectory:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    _check_finite("state", arr)
    return StateTrajectory(s_index=int(s_index), samples=_frozen(arr))
