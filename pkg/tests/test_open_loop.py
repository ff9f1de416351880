import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import make_ops
from memlq.closed_loop import step_state
from memlq.errors import IndexOutOfRange, NoConvergence
from memlq.lifted import free_evolution, lambda_apply
from memlq.open_loop import (
    evaluate_cost,
    first_representation,
    grid_norm,
    optimality_residual,
    rhs_of,
    solve_open_loop,
)
from memlq.problem import KernelSpec, make_augmented_state
from memlq.solvers import conjugate_gradient


def scalar_riccati_value(a=-1.0, b=1.0, c=1.0, T=1.0):
    """P(0) of p' = -c^2 - 2ap + b^2 p^2, p(T) = 0, by an adaptive ODE solver."""
    sol = solve_ivp(lambda t, p: -(c * c + 2 * a * p - b * b * p * p), (T, 0.0), [0.0],
                    rtol=1e-12, atol=1e-14)
    return sol.y[0, -1]


def stepped_forward_matrix(ops, s):
    """Forward map columns by marching the mild-solution recursion on unit controls."""
    K = ops.N - s
    cols = []
    D = ops.kernel_cells
    for j in range(K * ops.m):
        u = np.zeros((K + 1, ops.m))
        u.flat[j] = 1.0
        w = [np.zeros(ops.n)]
        for i in range(K):
            mem_now = D[i - np.arange(i)] @ u[:i] if i else np.zeros(ops.m)
            mem_next = D[i + 1 - np.arange(i + 1)] @ u[: i + 1]
            w.append(step_state(ops, w[-1], u[i], mem_now, mem_next))
        cols.append(np.ravel(w))
    return np.array(cols).T


def test_no_output_means_no_control():
    ops = make_ops(C=[0.0], kernel=KernelSpec.exponential(1.0), N=30)
    X = make_augmented_state([1.0], np.ones(11), 10)
    r = solve_open_loop(ops, 10, X)
    assert not r.control.samples.any()
    assert np.array_equal(r.state.samples, free_evolution(ops, X))
    assert r.cost == 0.0


def test_zero_state_means_zero_control(memory_ops):
    r = solve_open_loop(memory_ops, 0, make_augmented_state([0.0], None, 0, m=1))
    assert not r.control.samples.any() and r.cost == 0.0


def test_memoryless_cost_matches_riccati_ode():
    ops = make_ops(N=400)
    r = solve_open_loop(ops, 0, make_augmented_state([1.0], None, 0, m=1))
    assert r.cost == pytest.approx(scalar_riccati_value(), rel=1e-3)


def test_cost_examples():
    ops = make_ops(kernel=KernelSpec.exponential(1.0), N=20)
    assert evaluate_cost(ops, 0, make_augmented_state([0.0], None, 0, m=1), np.zeros(21)) == 0.0
    dark = make_ops(C=[0.0], N=20)
    assert evaluate_cost(dark, 0, make_augmented_state([1.0], None, 0, m=1),
                         np.ones(21)) == pytest.approx(1.0, abs=1e-12)


def test_dense_normal_equations_oracle(oscillator_ops):
    ops = oscillator_ops
    X = make_augmented_state([1.0, -0.5], None, 0, m=1)
    G = stepped_forward_matrix(ops, 0)
    W = np.repeat(ops.local_weights(0), ops.n)
    Cb = np.kron(np.eye(ops.N + 1), ops.spec.C)
    f = free_evolution(ops, X).ravel()
    # minimize |sqrt(W) C (f + G u)|^2 + dt |u|^2 over the free samples
    rows = np.vstack([np.sqrt(W)[:, None] * (Cb @ G), np.sqrt(ops.dt) * np.eye(G.shape[1])])
    rhs = np.concatenate([-np.sqrt(W) * (Cb @ f), np.zeros(G.shape[1])])
    u_ref = np.linalg.lstsq(rows, rhs, rcond=None)[0]
    r = solve_open_loop(ops, 0, X)
    u = r.control.samples[:-1, 0]
    assert np.max(np.abs(u - u_ref)) <= 1e-8 * np.max(np.abs(u_ref))
    rng = np.random.default_rng(0)
    for _ in range(100):
        trial = r.control.samples + rng.standard_normal(r.control.samples.shape)
        assert evaluate_cost(ops, 0, X, trial) >= r.cost


def test_cg_matches_dense(oscillator_ops):
    ops = oscillator_ops
    X = make_augmented_state([0.3, 1.0], np.random.default_rng(2).standard_normal((11, 1)), 10, m=1)
    a = solve_open_loop(ops, 10, X, method="dense")
    b = solve_open_loop(ops, 10, X, method="cg")
    assert a.extra["method"] == "dense" and b.extra["method"] == "cg"
    u = a.control.samples
    assert np.max(np.abs(u - b.control.samples)) <= 1e-8 * np.max(np.abs(u))
    assert b.residual <= 1e-10 * b.extra["rhs_norm"]


def test_residual_examples(memory_ops):
    ops = memory_ops
    X = make_augmented_state([1.0], None, 0, m=1)
    r = solve_open_loop(ops, 0, X, tol=1e-10)
    assert optimality_residual(ops, 0, X, r.control) <= 1e-10 * grid_norm(ops, 0, rhs_of(ops, 0, X))
    dark = make_ops(C=[0.0], N=20)
    assert optimality_residual(dark, 0, make_augmented_state([1.0], None, 0, m=1), np.zeros(21)) == 0.0
    d = np.random.default_rng(5).standard_normal(r.control.samples.shape)
    d[-1] = 0.0
    res = optimality_residual(ops, 0, X, r.control.samples + d)
    assert res == pytest.approx(grid_norm(ops, 0, lambda_apply(ops, 0, d)), rel=1e-8)
    assert res > 0


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_strict_convexity_gap(memory_ops, seed, scale):
    ops = memory_ops
    X = make_augmented_state([1.0], None, 0, m=1)
    r = solve_open_loop(ops, 0, X)
    d = scale * np.random.default_rng(seed).standard_normal(r.control.samples.shape)
    gap = evaluate_cost(ops, 0, X, r.control.samples + d) - r.cost
    assert gap >= grid_norm(ops, 0, d) ** 2 - 1e-10 * max(1.0, gap)


def test_first_representation(memory_ops):
    ops = memory_ops
    eta = np.sin(np.linspace(0, 3, 41))
    X = make_augmented_state([0.7], eta, 40)
    r = solve_open_loop(ops, 40, X)
    again = first_representation(ops, 40, r.state.samples)
    assert np.max(np.abs(again - r.control.samples)) <= 1e-8 * np.max(np.abs(r.control.samples))


def test_cg_reports_nonconvergence():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((30, 30))
    M = M @ M.T + 1e-6 * np.eye(30)
    with pytest.raises(NoConvergence):
        conjugate_gradient(lambda x: M @ x, rng.standard_normal(30), tol=1e-14, maxiter=2)


def test_bad_anchor(memory_ops):
    with pytest.raises(IndexOutOfRange):
        solve_open_loop(memory_ops, 3, make_augmented_state([1.0], None, 0, m=1))
