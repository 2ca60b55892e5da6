import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from mtocc import kernels, ocksr
from mtocc.errors import DegenerateDataError, InputError, StateError
from mtocc.experiment import ExperimentConfig, evaluate_model, train_model
from mtocc.data import synth_tasks
from mtocc.model import NONLINEAR, TrainedModel
from mtocc.nonlinear import (
    NonlinearHyperparams,
    SecondLayerState,
    backprop_chain,
    block_ones,
    grad_J_tikhonov,
    grad_theta,
    grad_total_A,
    init_nonlinear,
    objective_QN,
    predict_nonlinear,
    solve_B_closed,
    train_nonlinear,
    training_responses,
)

from conftest import central_diff, random_psd, rel_err, small_problem


def q_of(K, A, theta, B, R, hp):
    s = SecondLayerState.derive(K, A, theta)
    return objective_QN(K, A, s.J, B, R, hp)


def test_objective_zero_params():
    R = np.eye(3)[:, :2]
    hp = NonlinearHyperparams(gamma_N1=1, gamma_N2=1)
    assert objective_QN(np.eye(3), np.zeros((3, 2)), np.eye(3), np.zeros((3, 2)), R, hp) == 2.0


def test_objective_exact_fit():
    R = np.eye(3)[:, :2]
    hp = NonlinearHyperparams(gamma_N1=0, gamma_N2=1e-9)
    val = objective_QN(np.eye(3), np.zeros((3, 2)), np.eye(3), R, R, hp)
    assert val == pytest.approx(2e-9)


def test_objective_shape_mismatch():
    with pytest.raises(StateError):
        objective_QN(np.eye(3), np.zeros((3, 2)), np.eye(2), np.zeros((3, 2)), np.zeros((3, 2)),
                     NonlinearHyperparams())


def test_grad_J_finite_differences(rng):
    J = random_psd(rng, 6)
    B, R = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))

    def f(j):
        return np.sum((j @ B - R) ** 2) + 0.3 * np.sum(B * (j @ B))

    assert rel_err(grad_J_tikhonov(J, B, R, 0.3), central_diff(f, J)) < 1e-6


def test_grad_J_trivial_cases():
    J = np.eye(3)
    np.testing.assert_array_equal(grad_J_tikhonov(J, np.zeros((3, 2)), np.ones((3, 2)), 0.5), 0)
    B = np.ones((3, 2))
    np.testing.assert_allclose(grad_J_tikhonov(J, B, J @ B, 0.5), 0.5 * B @ B.T)


def test_backprop_zero_upstream():
    K, _, _ = small_problem(0)
    A = np.ones((12, 3))
    s = SecondLayerState.derive(K, A, 1.0)
    dA, dY = backprop_chain(np.zeros((12, 12)), s.J, s.E, s.Y, 1.0, K)
    np.testing.assert_array_equal(dA, 0)
    np.testing.assert_array_equal(dY, 0)


@pytest.mark.parametrize("seed", range(20))
def test_grad_A_end_to_end(seed):
    rng = np.random.default_rng(seed)
    n, T = int(rng.integers(4, 16)), int(rng.integers(1, 4))
    K, _, R = small_problem(seed, n=n, T=T)
    A = 0.5 * rng.normal(size=(n, T))
    B = rng.normal(size=(n, T))
    theta = rng.uniform(0.2, 2.0)
    hp = NonlinearHyperparams(gamma_N1=rng.uniform(0, 1), gamma_N2=rng.uniform(0.01, 1))
    s = SecondLayerState.derive(K, A, theta)
    dJ = grad_J_tikhonov(s.J, B, R, hp.gamma_N2)
    chain, _ = backprop_chain(dJ, s.J, s.E, s.Y, theta, K)
    g = grad_total_A(chain, K, A, hp.gamma_N1)
    fd = central_diff(lambda a: q_of(K, a, theta, B, R, hp), A)
    assert rel_err(g, fd) < 1e-5
    fd_theta = central_diff(lambda t: q_of(K, A, float(t[0]), B, R, hp), [theta])
    assert rel_err([grad_theta(dJ, s.J, s.E)], fd_theta) < 1e-5


def test_dY_matches_finite_differences(rng):
    Y = rng.normal(size=(6, 2))
    W = rng.normal(size=(6, 6))
    theta = 0.7

    def f(y):
        E, _ = kernels.pairwise_sq_dist(y)
        return np.sum(W * np.exp(-theta * E))

    E, _ = kernels.pairwise_sq_dist(Y)
    J = np.exp(-theta * E)
    _, dY = backprop_chain(W, J, E, Y, theta, np.eye(6))
    assert rel_err(dY, central_diff(f, Y)) < 1e-6


def test_grad_theta_trivial():
    J = np.ones((3, 3))
    assert grad_theta(np.ones((3, 3)), J, np.zeros((3, 3))) == 0
    E = 1.0 - np.eye(3)
    assert grad_theta(np.eye(3), np.exp(-E), E) == 0


def test_solve_B_closed_cases(rng):
    R = rng.normal(size=(5, 2))
    np.testing.assert_allclose(solve_B_closed(np.eye(5), R, 1e-12), R, atol=1e-10)
    np.testing.assert_allclose(solve_B_closed(np.eye(5), R, 1.0), R / 2, atol=1e-14)
    J = random_psd(rng, 5)
    B = solve_B_closed(J, R, 0.1)
    np.testing.assert_allclose(B, np.linalg.solve(J + 0.1 * np.eye(5), R), atol=1e-10)
    assert np.linalg.norm((J + 0.1 * np.eye(5)) @ B - R) <= 1e-10 * np.linalg.norm(R)


def test_block_ones_two_tasks():
    expected = np.kron(np.eye(2), np.ones((2, 2)))
    np.testing.assert_array_equal(block_ones([0, 0, 1, 1]), expected)


def test_theta_from_mean_distance():
    # E off-diagonal 2, diagonal 0 on two points: mean(E) = 1
    K = np.eye(2)
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    tid = np.array([0, 1])
    s = init_nonlinear(K, tid, A, 1e-12, 1.0)
    assert s.theta == pytest.approx(1.0, rel=1e-9)


def test_init_matches_per_task_solves():
    K, tid, R = small_problem(3)
    s = init_nonlinear(K, tid, R, 0.4, 0.1)
    for t in range(3):
        np.testing.assert_allclose(s.A[:, t], ocksr.fit_single(K, R[:, t], 0.4), atol=1e-10)
    np.testing.assert_allclose(s.B, np.linalg.solve(block_ones(tid) + 0.1 * np.eye(12), R), atol=1e-10)
    assert s.theta == pytest.approx(1.0 / np.mean(s.E))


def test_init_degenerate_and_unordered():
    K = np.ones((4, 4))
    R = np.ones((4, 1))
    with pytest.raises(DegenerateDataError):
        init_nonlinear(K, np.zeros(4, int), R, 1.0, 1.0)
    K, tid, R = small_problem(3)
    with pytest.raises(InputError):
        init_nonlinear(K, tid[::-1], R, 1.0, 1.0)


def test_frozen_first_layer():
    K, tid, R = small_problem(4)
    hp = NonlinearHyperparams(eta_A=0, eta_theta=0, max_outer_iters=10)
    init = init_nonlinear(K, tid, R, hp.gamma_N1, hp.gamma_N2)
    model = train_nonlinear(K, tid, R, hp)
    np.testing.assert_array_equal(model.A, init.A)
    assert model.theta == init.theta
    q = model.trace.objective
    assert len(set(q[1:])) == 1
    assert model.trace.converged


def test_training_descends_and_keeps_invariants():
    K, tid, R = small_problem(5, n=15)
    hp = NonlinearHyperparams(max_outer_iters=60)
    model = train_nonlinear(K, tid, R, hp)
    q = np.array(model.trace.objective)
    assert np.all(np.diff(q) <= 1e-8 * q[0])
    E, _ = kernels.pairwise_sq_dist(model.Y)
    J = np.exp(-model.theta * E)
    np.testing.assert_allclose(J, J.T, atol=0)
    np.testing.assert_array_equal(np.diag(J), 1.0)
    resid = (J + hp.gamma_N2 * np.eye(15)) @ model.B - R
    assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(R)
    np.testing.assert_allclose(model.Y, K @ model.A, atol=1e-12)


def test_predict_reproduces_training_rows():
    K, tid, R = small_problem(6)
    model = train_nonlinear(K, tid, R, NonlinearHyperparams(max_outer_iters=20))
    np.testing.assert_allclose(predict_nonlinear(model, K), training_responses(model), atol=1e-12)


def test_predict_zero_first_layer():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(4, 2))
    model = TrainedModel(NONLINEAR, A=np.zeros((4, 2)), B=B, Y=np.zeros((4, 2)), theta=1.0)
    out = predict_nonlinear(model, rng.normal(size=(3, 4)))
    np.testing.assert_allclose(out, np.tile(B.sum(axis=0), (3, 1)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_predict_matches_scalar_loop(seed):
    rng = np.random.default_rng(seed)
    n, T, m = 5, 2, 3
    A, B, Kc = rng.normal(size=(n, T)), rng.normal(size=(n, T)), rng.normal(size=(m, n))
    Y = rng.normal(size=(n, T))
    model = TrainedModel(NONLINEAR, A=A, B=B, Y=Y, theta=0.3)
    out = predict_nonlinear(model, Kc)
    for i in range(m):
        y = [sum(Kc[i, k] * A[k, t] for k in range(n)) for t in range(T)]
        for t in range(T):
            val = 0.0
            for j in range(n):
                d2 = sum((y[s] - Y[j, s]) ** 2 for s in range(T))
                val += np.exp(-0.3 * d2) * B[j, t]
            assert out[i, t] == pytest.approx(val, rel=1e-10, abs=1e-12)


def test_predict_rejects_wrong_width():
    model = TrainedModel(NONLINEAR, A=np.zeros((4, 2)), B=np.zeros((4, 2)), Y=np.zeros((4, 2)), theta=1.0)
    with pytest.raises(InputError):
        predict_nonlinear(model, np.zeros((2, 3)))


def test_stale_state_detected():
    K, tid, R = small_problem(7)
    s = init_nonlinear(K, tid, R, 1.0, 0.1)
    s.check(K)
    s.A = s.A + 1.0
    with pytest.raises(StateError):
        s.check(K)


@pytest.mark.xfail(reason="two-layer scores rank test points differently from the "
                   "single-layer baseline; measured correlation 0.65-0.92 at "
                   "initialisation and lower after training (see decisions ledger)")
def test_single_task_tracks_baseline():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(20, 3))
    Xt = rng.normal(size=(40, 3))
    sigma = kernels.median_heuristic_width(X)
    K = kernels.rbf_gram(X, sigma)
    Kc = kernels.rbf_gram(Xt, sigma, X)
    tid = np.zeros(20, int)
    R = np.ones((20, 1))
    model = train_nonlinear(K, tid, R, NonlinearHyperparams(gamma_N1=1.0))
    a = ocksr.fit_single(K, R[:, 0], 1.0)
    base = ocksr.score_task(Kc @ a, np.mean(K @ a))
    ours = ocksr.score_task(predict_nonlinear(model, Kc)[:, 0], np.mean(training_responses(model)))
    rho = spearmanr(base, ours).correlation
    assert rho >= 0.99


@pytest.mark.xfail(reason="OCKSR-N trails C-OCKSR on the synthetic benchmark "
                   "(see decisions ledger and the acceptance suite)")
def test_related_tasks_beat_joint_baseline():
    n_aucs, c_aucs = [], []
    for seed in range(10):
        b = synth_tasks(2, 15, 4, 0.8, seed)
        m = train_model(ExperimentConfig(variant="OCKSR-N"), b)
        assert m.trace.objective[-1] < m.trace.objective[0]
        n_aucs.append(np.mean(evaluate_model(m, b)))
        c_aucs.append(np.mean(evaluate_model(train_model(ExperimentConfig(variant="C-OCKSR"), b), b)))
    assert np.mean(n_aucs) >= np.mean(c_aucs)
