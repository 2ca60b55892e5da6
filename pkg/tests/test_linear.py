import numpy as np
import pytest

from mtocc import kernels, ocksr
from mtocc.errors import InputError, ParameterError
from mtocc.linear import (
    LinearHyperparams,
    grad_B,
    kronecker_solve_A,
    objective_QL,
    solve_A_sylvester,
    train_linear,
)

from conftest import central_diff, random_psd, rel_err, small_problem


def nuclear_norm_loop(B):
    return sum(np.linalg.svd(B, compute_uv=False))


def scalar_QL(K, A, B, R, g1, g2, g3):
    n, T = R.shape
    KAB = K @ A @ B
    data = sum((KAB[i, j] - R[i, j]) ** 2 for i in range(n) for j in range(T))
    reg1 = sum(A[i, t] * K[i, j] * A[j, t] for i in range(n) for j in range(n) for t in range(T))
    reg2 = sum(B[i, j] ** 2 for i in range(T) for j in range(T))
    return data + g1 * reg1 + g2 * reg2 + g3 * nuclear_norm_loop(B)


def test_objective_zero_params():
    R = np.array([[1.0, 0], [0, 1], [1, 0]])
    hp = LinearHyperparams(gamma_L1=1, gamma_L2=1, gamma_L3=1)
    assert objective_QL(np.eye(3), np.zeros((3, 2)), np.zeros((2, 2)), R, hp) == 3.0


def test_objective_identity_structure():
    T = 3
    hp = LinearHyperparams(gamma_L1=1, gamma_L2=1, gamma_L3=1)
    val = objective_QL(np.eye(4), np.zeros((4, T)), np.eye(T), np.zeros((4, T)), hp)
    assert val == pytest.approx(2 * T)


def test_objective_scalar_oracle(rng):
    K, _, R = small_problem(0, n=6, T=3)
    A, B = rng.normal(size=(6, 3)), rng.normal(size=(3, 3))
    hp = LinearHyperparams(gamma_L1=0.3, gamma_L2=0.2, gamma_L3=0.7)
    assert objective_QL(K, A, B, R, hp) == pytest.approx(scalar_QL(K, A, B, R, 0.3, 0.2, 0.7), rel=1e-10)


def test_objective_dimension_mismatch():
    with pytest.raises(InputError):
        objective_QL(np.eye(3), np.zeros((3, 2)), np.eye(3), np.zeros((3, 2)), LinearHyperparams())


def test_sylvester_identity_reduces_to_ridge(rng):
    K, _, R = small_problem(1)
    A = solve_A_sylvester(K, np.eye(3), R, 0.4)
    np.testing.assert_allclose(A, np.linalg.solve(K + 0.4 * np.eye(12), R), atol=1e-10)


def test_sylvester_scalar_structure(rng):
    K, _, _ = small_problem(2, T=1)
    R = np.ones((12, 1))
    b = 1.7
    A = solve_A_sylvester(K, np.array([[b]]), R, 0.3)
    np.testing.assert_allclose(A, np.linalg.solve(b * b * K + 0.3 * np.eye(12), b * R), atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_sylvester_matches_kronecker(seed):
    rng = np.random.default_rng(seed)
    K = random_psd(rng, 6) + 0.1 * np.eye(6)
    S = rng.normal(size=(3, 3))
    B = S + S.T
    R = rng.normal(size=(6, 3))
    A = solve_A_sylvester(K, B, R, 0.25)
    np.testing.assert_allclose(A, kronecker_solve_A(K, B, R, 0.25), rtol=0, atol=1e-8)
    resid = K @ A @ B @ B - R @ B + 0.25 * A
    assert np.linalg.norm(resid) / np.linalg.norm(R @ B) < 1e-8


def test_sylvester_general_B_is_stationary(rng):
    # for non-symmetric B the solve is still the exact minimiser over A
    K, _, R = small_problem(3)
    B = rng.normal(size=(3, 3))
    hp = LinearHyperparams(gamma_L1=0.2, gamma_L2=0, gamma_L3=0)
    A = solve_A_sylvester(K, B, R, hp.gamma_L1)
    g = central_diff(lambda a: objective_QL(K, a, B, R, hp), A)
    assert np.max(np.abs(g)) < 1e-6


def test_sylvester_needs_positive_gamma():
    with pytest.raises(ParameterError):
        solve_A_sylvester(np.eye(2), np.eye(1), np.ones((2, 1)), 0.0)


def test_grad_B_frobenius_only(rng):
    B = rng.normal(size=(3, 3))
    hp = LinearHyperparams(gamma_L2=0.6, gamma_L3=0)
    g = grad_B(np.eye(4), np.zeros((4, 3)), B, np.zeros((4, 3)), hp)
    np.testing.assert_allclose(g, 1.2 * B)


def test_grad_B_scaled_identity_nuclear():
    hp = LinearHyperparams(gamma_L2=0, gamma_L3=0.9)
    g = grad_B(np.eye(4), np.zeros((4, 3)), 2.5 * np.eye(3), np.zeros((4, 3)), hp)
    np.testing.assert_allclose(g, 0.9 * np.eye(3), atol=1e-14)


def test_grad_B_zero_matrix_nuclear_contribution_is_zero():
    hp = LinearHyperparams(gamma_L2=0, gamma_L3=1.0)
    g = grad_B(np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), hp)
    np.testing.assert_array_equal(g, 0)


@pytest.mark.parametrize("seed", range(20))
def test_grad_B_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, T = int(rng.integers(4, 21)), int(rng.integers(1, 5))
    K, _, R = small_problem(seed, n=max(n, T), T=T)
    A = rng.normal(size=(K.shape[0], T))
    B = rng.normal(size=(T, T))
    hp = LinearHyperparams(gamma_L1=0.5, gamma_L2=rng.uniform(0, 1), gamma_L3=rng.uniform(0, 1))
    g = grad_B(K, A, B, R, hp)
    fd = central_diff(lambda b: objective_QL(K, A, b, R, hp), B)
    assert rel_err(g, fd) < 1e-5


def test_train_linear_frozen_B_equals_c_ocksr():
    K, tid, R = small_problem(4)
    hp = LinearHyperparams(gamma_L1=0.3, gamma_L2=0, gamma_L3=0, max_outer_iters=0)
    model = train_linear(K, R, hp)
    np.testing.assert_array_equal(model.B, np.eye(3))
    np.testing.assert_allclose(model.A, ocksr.fit_c_ocksr(K, tid, 3, 0.3), rtol=0, atol=1e-8)


def test_train_linear_single_task_matches_baseline():
    K, tid, _ = small_problem(5, T=1)
    R = np.ones((12, 1))
    hp = LinearHyperparams(gamma_L1=0.5, gamma_L2=0.01, gamma_L3=0.01)
    model = train_linear(K, R, hp)
    b = model.B[0, 0]
    ref = ocksr.fit_single(K, R[:, 0], 0.5 / b**2)
    np.testing.assert_allclose(model.C[:, 0], ref, rtol=1e-6, atol=1e-6)


def test_train_linear_two_related_tasks():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(20, 3))  # both tasks share one generating distribution
    tid = np.repeat([0, 1], 10)
    K = kernels.rbf_gram(X, kernels.median_heuristic_width(X))
    R = ocksr.build_responses(tid, 2)
    model = train_linear(K, R, LinearHyperparams(gamma_L1=0.1, gamma_L2=1e-3, gamma_L3=1e-3))
    q = np.array(model.trace.objective)
    assert q[-1] <= q[0]
    assert np.all(np.diff(q) <= 1e-10 * q[0])
    assert abs(model.B[0, 1]) > 0


def test_large_trace_penalty_reduces_rank():
    K, _, R = small_problem(8)
    hp = LinearHyperparams(gamma_L1=0.5, gamma_L2=0, gamma_L3=0, eta_B=1e-3)
    s0 = np.linalg.svd(train_linear(K, R, hp).B, compute_uv=False)
    hp = LinearHyperparams(gamma_L1=0.5, gamma_L2=0, gamma_L3=5.0, eta_B=1e-3)
    s1 = np.linalg.svd(train_linear(K, R, hp).B, compute_uv=False)
    assert s0[-1] > 0.1 * s0[0]
    assert s1[1] < 1e-3 * s1[0]


def test_permutation_equivariance():
    K, tid, R = small_problem(9)
    perm = [2, 0, 1]
    hp = LinearHyperparams(gamma_L1=0.5, gamma_L2=0.01, gamma_L3=0.01, max_outer_iters=50)
    m1 = train_linear(K, R, hp)
    m2 = train_linear(K, R[:, perm], hp)
    np.testing.assert_allclose(m2.B, m1.B[np.ix_(perm, perm)], atol=1e-8)
    np.testing.assert_allclose(m2.A, m1.A[:, perm], atol=1e-8)


def test_psd_projection_flag():
    K, _, R = small_problem(10)
    hp = LinearHyperparams(gamma_L1=0.5, gamma_L2=0.01, gamma_L3=0.01, project_psd=True, max_outer_iters=30)
    B = train_linear(K, R, hp).B
    np.testing.assert_allclose(B, B.T, atol=1e-12)
    assert np.linalg.eigvalsh(B).min() >= -1e-12


@pytest.mark.xfail(reason="at this weight B collapses towards zero in every direction "
                   "(singular values ~1e-6 of similar size) instead of losing rank; "
                   "see decisions ledger")
def test_trace_penalty_at_stated_scale():
    K, _, R = small_problem(8)
    hp0 = LinearHyperparams(gamma_L1=0.5, gamma_L2=0, gamma_L3=0, max_outer_iters=0)
    A0 = train_linear(K, R, hp0).A
    big = 1e3 * np.linalg.norm((K @ A0).T @ R)
    model = train_linear(K, R, LinearHyperparams(gamma_L1=0.5, gamma_L2=0, gamma_L3=big))
    s = np.linalg.svd(model.B, compute_uv=False)
    assert s[-1] < 1e-3 * s[0]


def test_growing_step_reaches_long_run_optimum():
    K, tid, _ = small_problem(3, T=3)
    R = ocksr.build_responses(tid, 3)
    model = train_linear(K, R)
    assert model.trace.converged and model.trace.iterations < 500
    ref = train_linear(K, R, LinearHyperparams(epsilon=1e-15, max_outer_iters=20000))
    q, q_ref = model.trace.objective[-1], ref.trace.objective[-1]
    assert q_ref <= q <= q_ref * (1 + 1e-6)


def test_capped_step_matches_plain_backtracking():
    K, tid, _ = small_problem(4, T=2)
    R = ocksr.build_responses(tid, 2)
    model = train_linear(K, R, LinearHyperparams(max_step_scale=1.0, max_outer_iters=30))
    assert max(model.trace.step_scale) <= 1.0


def test_step_scale_cap_below_one_rejected():
    with pytest.raises(ParameterError):
        train_linear(np.eye(3), np.ones((3, 1)), LinearHyperparams(max_step_scale=0.5))
