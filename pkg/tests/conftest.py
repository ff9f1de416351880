import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from memlq.examples import build_example
from memlq.lifted import discretize
from memlq.problem import KernelSpec, build_grid, validate_spec

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def make_ops(A=(-1.0,), B=(1.0,), C=(1.0,), kernel=None, T=1.0, N=50, n=1, m=1):
    kernel = KernelSpec.zero() if kernel is None else kernel
    spec = validate_spec(n, m, np.reshape(A, (n, n)), np.reshape(B, (n, m)),
                         np.reshape(C, (n, n)), kernel, T)
    return discretize(spec, build_grid(T, N))


@pytest.fixture(scope="session")
def memory_ops():
    """The 1-D memory example: A=-1, B=C=1, k=exp(-tau), T=1, N=100."""
    ops, _, _ = build_example("scalar_memory", N=100)
    return ops


@pytest.fixture(scope="session")
def memory_field(memory_ops):
    from memlq.cost_operators import build_field

    return build_field(memory_ops)


@pytest.fixture(scope="session")
def oscillator_ops():
    ops, _, _ = build_example("oscillator_memory", N=40)
    return ops


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
