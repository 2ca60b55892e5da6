"""Non-linear structure learning with a second RBF layer.

Intermediate responses ``Y = K A`` are compared through a second kernel
``J = exp(-theta * E)`` where ``E`` holds squared distances between rows of
``Y``; final responses are ``J B``. ``A`` and ``theta`` are updated by
gradient descent through ``J``, ``B`` by an exact (Tikhonov) solve.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels, ocksr
from .errors import (
    DegenerateDataError,
    InputError,
    ParameterError,
    StateError,
    TrainingError,
)
from .model import NONLINEAR, TrainedModel, TrainingTrace

THETA_MAX = 1e6


@dataclass
class NonlinearHyperparams:
    gamma_N1: float = 1.0
    gamma_N2: float = 1e-2
    eta_A: float = 1e-1
    eta_theta: float = 1e-1
    epsilon: float = 1e-8
    max_outer_iters: int = 500
    max_halvings: int = 30
    # cap on the backtracking scales, which double after each accepted step
    max_step_scale: float = 1.0
    theta_floor: float = kernels.THETA_FLOOR

    def validate(self):
        if self.gamma_N1 < 0:
            raise ParameterError("gamma_N1 must be nonnegative")
        if not self.gamma_N2 > 0:
            raise ParameterError("gamma_N2 must be positive for the closed-form B")
        if self.eta_A < 0 or self.eta_theta < 0:
            raise ParameterError("step sizes must be nonnegative")
        if not self.max_step_scale >= 1.0:
            raise ParameterError("max_step_scale must be at least 1")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        return self


@dataclass
class SecondLayerState:
    """Second-layer quantities derived from ``(A, theta)`` plus ``B``."""

    A: np.ndarray
    theta: float
    Y: np.ndarray
    E: np.ndarray
    F: np.ndarray
    J: np.ndarray
    B: np.ndarray = None

    @classmethod
    def derive(cls, K, A, theta, B=None, floor=kernels.THETA_FLOOR, warn_list=None):
        theta = kernels.clamp_theta(theta, floor, warn_list)
        Y = K @ A
        E, F = kernels.pairwise_sq_dist(Y)
        J = kernels.second_layer_kernel(E, theta, floor)
        return cls(A=A, theta=theta, Y=Y, E=E, F=F, J=J, B=B)

    def check(self, K, atol=1e-10):
        """Raise ``StateError`` unless ``Y = K A`` and ``J = exp(-theta E)``."""
        Y = K @ self.A
        scale = max(1.0, np.max(np.abs(Y)))
        if Y.shape != self.Y.shape or np.max(np.abs(Y - self.Y)) > atol * scale:
            raise StateError("intermediate responses are stale; re-derive the state")
        E, _ = kernels.pairwise_sq_dist(self.Y)
        if np.max(np.abs(np.exp(-self.theta * E) - self.J)) > atol:
            raise StateError("second-layer kernel is stale; re-derive the state")


def _check_second_layer(K, A, J, B, R):
    n, T = R.shape
    if K.shape != (n, n) or A.shape != (n, T) or J.shape != (n, n) or B.shape != (n, T):
        raise StateError(
            f"inconsistent shapes K{K.shape} A{A.shape} J{J.shape} B{B.shape} R{R.shape}"
        )


def objective_QN(K, A, J, B, R, hp):
    """``||J B - R||^2 + gamma_N1 tr(A^T K A) + gamma_N2 tr(B^T J B)``."""
    K, A, J, B, R = (np.asarray(M, dtype=np.float64) for M in (K, A, J, B, R))
    _check_second_layer(K, A, J, B, R)
    JB = J @ B
    resid = JB - R
    return float(
        np.sum(resid * resid)
        + hp.gamma_N1 * np.sum(A * (K @ A))
        + hp.gamma_N2 * np.sum(B * JB)
    )


def grad_J_tikhonov(J, B, R, gamma_N2):
    return 2.0 * (J @ B - R) @ B.T + gamma_N2 * (B @ B.T)


def backprop_chain(dQdJ, J, E, Y, theta, K):
    """Push a gradient w.r.t. ``J`` back to ``Y = K A`` and ``A``.

    Returns
    -------
    dQdA : (n, T) ndarray
    dQdY : (n, T) ndarray
    """
    dQdE = -theta * J * dQdJ
    S = dQdE + dQdE.T
    dQdF = np.diag(S.sum(axis=1)) - 2.0 * dQdE
    dQdY = (dQdF + dQdF.T) @ Y
    return K @ dQdY, dQdY


def grad_total_A(dQdA_chain, K, A, gamma_N1):
    return dQdA_chain + 2.0 * gamma_N1 * (K @ A)


def grad_theta(dQdJ, J, E):
    return float(np.sum(dQdJ * (-J * E)))


def solve_B_closed(J, R, gamma_N2):
    """``B = (J + gamma_N2 I)^{-1} R``."""
    if not gamma_N2 > 0:
        raise ParameterError("gamma_N2 must be positive")
    J = np.asarray(J, dtype=np.float64)
    return ocksr.spd_solve(J + gamma_N2 * np.eye(J.shape[0]), R)


def block_ones(task_ids):
    """Block-diagonal matrix of all-ones blocks, one per task."""
    task_ids = np.asarray(task_ids)
    return (task_ids[:, None] == task_ids[None, :]).astype(np.float64)


def init_nonlinear(K, task_ids, R, gamma_N1, gamma_N2, floor=kernels.THETA_FLOOR):
    """Independent-task initialisation.

    ``A`` comes from per-task ridge solves, ``B`` from the block-diagonal
    all-ones kernel, and ``theta`` is the reciprocal of the mean squared
    distance between intermediate responses.
    """
    K = np.asarray(K, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    task_ids = np.asarray(task_ids)
    if np.any(np.diff(task_ids) < 0):
        raise InputError("training samples must be grouped contiguously by task")
    A = ocksr.fit_single(K, R, gamma_N1)
    J_init = block_ones(task_ids)
    B = solve_B_closed(J_init, R, gamma_N2)
    Y = K @ A
    E, _ = kernels.pairwise_sq_dist(Y)
    mean_E = float(np.mean(E))
    if not mean_E > 0:
        raise DegenerateDataError("all intermediate responses coincide")
    return SecondLayerState.derive(K, A, 1.0 / mean_E, B=B, floor=floor)


def _gradients(K, state, R, hp, dQdJ):
    dA_chain, _ = backprop_chain(dQdJ, state.J, state.E, state.Y, state.theta, K)
    dA = grad_total_A(dA_chain, K, state.A, hp.gamma_N1)
    return dA, grad_theta(dQdJ, state.J, state.E)


def _descend(K, task_ids, R, hp, state, objective, grad_J, solve_B, trace, variant):
    """Shared outer loop of the Tikhonov and sparse variants.

    ``A`` and ``theta`` are stepped in turn, each with its own step scale
    that is halved until the objective does not increase and doubled
    (up to ``max_step_scale``) after every accepted step.
    """
    q = objective(state)
    q0 = q
    tol = hp.epsilon * max(abs(q0), np.finfo(float).tiny)
    trace.objective.append(q)
    scale_A = scale_theta = 1.0
    for _ in range(hp.max_outer_iters):
        q_prev = q
        dQdJ = grad_J(state)
        dA, _ = _gradients(K, state, R, hp, dQdJ)
        scale_A = min(hp.max_step_scale, 2.0 * scale_A)
        for _ in range(hp.max_halvings + 1):
            trial = SecondLayerState.derive(
                K, state.A - scale_A * hp.eta_A * dA, state.theta,
                B=state.B, floor=hp.theta_floor,
            )
            q_try = objective(trial)
            if q_try <= q:
                state, q = trial, q_try
                break
            scale_A *= 0.5

        dQdJ = grad_J(state)
        dtheta = grad_theta(dQdJ, state.J, state.E)
        scale_theta = min(hp.max_step_scale, 2.0 * scale_theta)
        for _ in range(hp.max_halvings + 1):
            warns = []
            theta_try = min(state.theta - scale_theta * hp.eta_theta * dtheta, THETA_MAX)
            trial = SecondLayerState.derive(
                K, state.A, theta_try, B=state.B, floor=hp.theta_floor, warn_list=warns
            )
            q_try = objective(trial)
            if q_try <= q:
                trace.warnings.extend(warns)
                state, q = trial, q_try
                break
            scale_theta *= 0.5

        state.B = solve_B(state)
        q_new = objective(state)
        if not np.isfinite(q_new) or q_new > 1e3 * q0:
            raise TrainingError(f"{variant} training diverged", trace)
        trace.objective.append(q_new)
        trace.step_scale.append([scale_A, scale_theta])
        q = q_new
        if abs(q_prev - q_new) < tol:
            trace.converged = True
            break
    return state


def train_nonlinear(K, task_ids, R, hp=None):
    """Alternate gradient steps on ``(A, theta)`` with the closed-form ``B``.

    Each iteration takes a descent step on ``A``, then on ``theta`` (see
    :func:`_descend`), rebuilds ``J`` from the new values and re-solves
    ``B``. With both step sizes zero the first layer stays at its
    initialisation and only the first ``B`` solve changes the objective.
    """
    hp = (hp or NonlinearHyperparams()).validate()
    K = np.asarray(K, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    state = init_nonlinear(K, task_ids, R, hp.gamma_N1, hp.gamma_N2, hp.theta_floor)
    trace = TrainingTrace()

    def objective(s):
        return objective_QN(K, s.A, s.J, s.B, R, hp)

    state = _descend(
        K,
        task_ids,
        R,
        hp,
        state,
        objective,
        grad_J=lambda s: grad_J_tikhonov(s.J, s.B, R, hp.gamma_N2),
        solve_B=lambda s: solve_B_closed(s.J, R, hp.gamma_N2),
        trace=trace,
        variant=NONLINEAR,
    )
    return _to_model(NONLINEAR, state, trace)


def _to_model(variant, state, trace):
    return TrainedModel(
        variant=variant, A=state.A, B=state.B, Y=state.Y, theta=state.theta, trace=trace
    )


def training_responses(model):
    """Final responses ``J B`` on the training set."""
    E, _ = kernels.pairwise_sq_dist(model.Y)
    return np.exp(-model.theta * E) @ model.B


def predict_nonlinear(model, K_cross_test):
    """Final responses for test samples given their first-layer cross kernel."""
    K_cross_test = np.asarray(K_cross_test, dtype=np.float64)
    if K_cross_test.ndim != 2 or K_cross_test.shape[1] != model.A.shape[0]:
        raise InputError(
            f"cross kernel must be m x {model.A.shape[0]}, got {K_cross_test.shape}"
        )
    y_test = K_cross_test @ model.A
    J_test = np.exp(-model.theta * kernels.cross_sq_dist(y_test, model.Y))
    return J_test @ model.B
