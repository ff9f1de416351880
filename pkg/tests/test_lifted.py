import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_ops
from memlq.closed_loop import step_state
from memlq.errors import IndexOutOfRange
from memlq.lifted import (
    apply_E,
    apply_G,
    apply_G_adjoint,
    apply_H,
    apply_K,
    apply_L,
    apply_LH_adjoint,
    apply_Lambda,
    apply_N,
    assemble_Lambda,
    free_evolution,
    gram_M,
    lambda_cells,
    lambda_eval,
)
from memlq.problem import KernelSpec, make_augmented_state

seeds = st.integers(0, 2**32 - 1)


def test_L_of_constant_input():
    ops = make_ops(A=[0.0], N=20)
    out = apply_L(ops, 0, np.ones(21)).samples[:, 0]
    assert np.allclose(out, ops.grid.nodes, atol=1e-12)
    ops = make_ops(A=[-1.0], N=400)
    out = apply_L(ops, 0, np.ones(401)).samples[-1, 0]
    assert out == pytest.approx(1 - np.exp(-1.0), abs=1e-4)


def test_H_double_integral():
    ops = make_ops(A=[0.0], kernel=KernelSpec.exponential(0.0), N=40)
    out = apply_H(ops, 0, np.ones(41)).samples[:, 0]
    assert np.allclose(out, ops.grid.nodes**2 / 2, atol=ops.dt**2)
    assert not apply_H(make_ops(N=10), 0, np.ones(11)).samples.any()


@given(seed=seeds, s=st.integers(0, 30))
def test_H_fubini_matches_nested(oscillator_ops, seed, s):
    u = np.random.default_rng(seed).standard_normal((oscillator_ops.N - s + 1, 1))
    a = apply_H(oscillator_ops, s, u, "nested").samples
    b = apply_H(oscillator_ops, s, u, "fubini").samples
    assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


def test_lambda_examples():
    ops = make_ops(A=[0.0], kernel=KernelSpec.exponential(0.0), N=8)
    assert not lambda_eval(ops, 3, 1, 3).any()
    assert lambda_eval(ops, 6, 1, 2)[0, 0] == pytest.approx(4 * ops.dt)
    assert not lambda_eval(make_ops(N=8), 6, 1, 2).any()
    with pytest.raises(IndexOutOfRange):
        lambda_eval(ops, 2, 3, 1)


def test_lambda_split_at_node(oscillator_ops):
    ops = oscillator_ops
    E = ops.propagators.steps
    for t, s, p in [(30, 12, 5), (39, 20, 0), (25, 25, 3)]:
        whole = lambda_eval(ops, t, p, p)
        split = E[t - s] @ lambda_eval(ops, s, p, p) + lambda_eval(ops, t, p, s)
        assert np.allclose(whole, split, rtol=0, atol=1e-12)


def test_lambda_cells_average_point_values(memory_ops):
    # a cell average sits half a cell from the point value
    ops = memory_ops
    lam = lambda_cells(ops, 50)
    point = np.array([lambda_eval(ops, 80, p, 50)[0, 0] for p in range(50)])
    assert np.max(np.abs(lam[30, 0, 0, :50] - point)) < ops.dt


def test_K_example():
    ops = make_ops(A=[0.0], kernel=KernelSpec.exponential(0.0), N=40)
    out = apply_K(ops, 20, np.ones(21)).samples[:, 0]
    assert out[0] == 0.0
    assert out[-1] == pytest.approx(0.25, abs=ops.dt**2)
    assert not apply_K(make_ops(N=40), 20, np.ones(21)).samples.any()
    assert not apply_K(ops, 20, np.zeros(21)).samples.any()


def test_free_evolution_decomposition():
    ops = make_ops(A=[0.0], kernel=KernelSpec.exponential(0.0), N=40)
    X = make_augmented_state([2.0], np.zeros(21), 20)
    assert np.allclose(free_evolution(ops, X), 2.0)
    assert apply_E(ops, 20, 20, X)[0] == 2.0
    eta = np.linspace(0, 1, 21)
    X = make_augmented_state([0.0], eta, 20)
    assert np.array_equal(free_evolution(ops, X), apply_K(ops, 20, eta).samples)


def test_forward_map_matches_time_stepping(oscillator_ops):
    """Independent oracle: march the one-cell recursion of the mild solution."""
    ops = oscillator_ops
    rng = np.random.default_rng(7)
    s = 9
    eta = rng.standard_normal((s + 1, 1))
    X = make_augmented_state(rng.standard_normal(2), eta, s, m=1)
    u = rng.standard_normal((ops.N - s + 1, 1))
    v = np.vstack([eta[:s], u])
    D = ops.kernel_cells

    def mem(l):
        return D[l - np.arange(l)] @ v[:l]

    w = [X.w0]
    for i in range(s, ops.N):
        w.append(step_state(ops, w[-1], v[i], mem(i), mem(i + 1)))
    lifted = free_evolution(ops, X) + apply_G(ops, s, u)
    assert np.allclose(np.array(w), lifted, rtol=1e-12, atol=1e-13)


@given(seed=seeds, s=st.integers(0, 35))
def test_discrete_adjointness(oscillator_ops, seed, s):
    ops = oscillator_ops
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((ops.N - s + 1, 1))
    v = rng.standard_normal((ops.N - s + 1, 2))
    lhs = np.einsum("i,ia,ia->", ops.local_weights(s), apply_G(ops, s, u), v)
    Gv = apply_LH_adjoint(ops, s, v).samples
    rhs = np.einsum("j,ja,ja->", ops.control_weights(s), u, Gv)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    assert not Gv[-1].any()


@given(seed=seeds)
def test_linearity(oscillator_ops, seed):
    ops = oscillator_ops
    rng = np.random.default_rng(seed)
    u1, u2 = rng.standard_normal((2, ops.N + 1, 1))
    a = rng.uniform(-3, 3)
    for f in (lambda u: apply_L(ops, 0, u).samples, lambda u: apply_H(ops, 0, u).samples,
              lambda u: apply_Lambda(ops, 0, u).samples):
        lhs = f(a * u1 + u2)
        rhs = a * f(u1) + f(u2)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_lambda_identity_without_output():
    ops = make_ops(C=[0.0], kernel=KernelSpec.exponential(1.0), N=20)
    u = np.random.default_rng(0).standard_normal((21, 1))
    assert np.array_equal(apply_Lambda(ops, 0, u).samples, u)
    assert not apply_Lambda(ops, 0, np.zeros(21)).samples.any()


def test_coercivity_dense(memory_ops):
    ops = make_ops(kernel=KernelSpec.exponential(1.0), N=50)
    Lam = assemble_Lambda(ops, 0)
    assert np.allclose(Lam, Lam.T, atol=0)
    assert np.min(np.linalg.eigvalsh(Lam)) >= 1 - 1e-10
    u = np.random.default_rng(1).standard_normal(51)
    assert np.allclose(Lam @ u, apply_Lambda(ops, 0, u).samples[:, 0], atol=1e-12)


def test_N_and_M():
    ops = make_ops(kernel=KernelSpec.exponential(1.0), N=30)
    zero = make_augmented_state([0.0], np.zeros(11), 10)
    assert not apply_N(ops, 10, zero).samples.any()
    X = make_augmented_state([1.0], None, 0, m=1)
    expect = apply_LH_adjoint(ops, 0, free_evolution(ops, X) @ ops.Q.T).samples
    assert np.array_equal(apply_N(ops, 0, X).samples, expect)
    dark = make_ops(C=[0.0], kernel=KernelSpec.exponential(1.0), N=30)
    assert not apply_N(dark, 0, X).samples.any()
    assert gram_M(dark, 0, X, X) == 0.0
    rng = np.random.default_rng(3)
    Y = make_augmented_state(rng.standard_normal(1), rng.standard_normal(11), 10)
    Z = make_augmented_state(rng.standard_normal(1), rng.standard_normal(11), 10)
    assert gram_M(ops, 10, Y, Z) == pytest.approx(gram_M(ops, 10, Z, Y), rel=1e-12)
    assert gram_M(ops, 10, Y, Y) >= 0.0
    assert gram_M(ops, 10, zero, zero) == 0.0


def test_index_checks(memory_ops):
    with pytest.raises(IndexOutOfRange):
        apply_L(memory_ops, 0, np.ones(5))
    with pytest.raises(IndexOutOfRange):
        apply_L(memory_ops, 200, np.ones(5))
