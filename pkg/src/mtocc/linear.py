"""Linear structure learning between tasks.

Alternates an exact Sylvester solve for the first-layer coefficients ``A``
with backtracked (sub)gradient steps on the ``T x T`` structure matrix ``B``
under Frobenius and nuclear-norm penalties.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError, ParameterError, TrainingError
from .model import LINEAR, TrainedModel, TrainingTrace


@dataclass
class LinearHyperparams:
    gamma_L1: float = 1.0
    gamma_L2: float = 1e-3
    gamma_L3: float = 1e-3
    eta_B: float = 1e-2
    epsilon: float = 1e-8
    max_outer_iters: int = 500
    max_halvings: int = 30
    # cap on the backtracking scale, which doubles after each accepted step
    max_step_scale: float = float("inf")
    project_psd: bool = False

    def validate(self):
        if not self.gamma_L1 > 0:
            raise ParameterError("gamma_L1 must be positive for the Sylvester solve")
        if self.gamma_L2 < 0 or self.gamma_L3 < 0:
            raise ParameterError("gamma_L2 and gamma_L3 must be nonnegative")
        if self.eta_B < 0:
            raise ParameterError("eta_B must be nonnegative (0 freezes B)")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if not self.max_step_scale >= 1.0:
            raise ParameterError("max_step_scale must be at least 1")
        if self.max_outer_iters < 0:
            raise ParameterError("max_outer_iters must be nonnegative")
        return self


def _check_dims(K, A, B, R):
    n = K.shape[0]
    T = R.shape[1]
    if K.shape != (n, n) or A.shape != (n, T) or B.shape != (T, T) or R.shape[0] != n:
        raise InputError(
            f"inconsistent shapes K{K.shape} A{A.shape} B{B.shape} R{R.shape}"
        )


def objective_QL(K, A, B, R, hp):
    K, A, B, R = (np.asarray(M, dtype=np.float64) for M in (K, A, B, R))
    _check_dims(K, A, B, R)
    KA = K @ A
    resid = KA @ B - R
    value = np.sum(resid * resid) + hp.gamma_L1 * np.sum(A * KA)
    if hp.gamma_L2:
        value += hp.gamma_L2 * np.sum(B * B)
    if hp.gamma_L3:
        value += hp.gamma_L3 * np.sum(linalg.svd(B, compute_uv=False))
    return float(value)


def solve_A_sylvester(K, B, R, gamma_L1, K_eig=None):
    """Minimiser of the structured objective over ``A`` for fixed ``B``.

    Solves ``K A (B B^T) - R B^T + gamma_L1 A = 0`` (identical to
    ``K A B B - R B + gamma A = 0`` for symmetric ``B``) in the joint
    eigenbasis of ``K`` and ``B B^T``.

    Parameters
    ----------
    K : (n, n) ndarray
    B : (T, T) ndarray
    R : (n, T) ndarray
    gamma_L1 : float
        Must be positive.
    K_eig : tuple, optional
        Precomputed ``(eigenvalues, eigenvectors)`` of ``K``; reused across
        outer iterations since ``K`` never changes.
    """
    if not gamma_L1 > 0:
        raise ParameterError("gamma_L1 must be positive for the Sylvester solve")
    B = np.asarray(B, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if K_eig is None:
        K_eig = linalg.eigh(np.asarray(K, dtype=np.float64))
    d, V = K_eig
    lam, Q = linalg.eigh(B @ B.T)
    denom = np.outer(d, lam) + gamma_L1
    if not np.all(denom > 0):
        raise NumericalError("Sylvester operator is singular", float(np.min(denom)))
    rhs = V.T @ (R @ B.T) @ Q
    A = V @ (rhs / denom) @ Q.T
    if not np.all(np.isfinite(A)):
        raise NumericalError("Sylvester solve produced non-finite values")
    return A


def kronecker_solve_A(K, B, R, gamma_L1):
    """Dense ``nT x nT`` Kronecker-form solve; reference for small problems."""
    K = np.asarray(K, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    n, T = R.shape
    K_inv = linalg.inv(K)
    M = B @ B.T
    lhs = gamma_L1 * np.kron(np.eye(T), K_inv) + np.kron(M.T, np.eye(n))
    rhs = (K_inv @ R @ B.T).ravel(order="F")
    return linalg.solve(lhs, rhs).reshape((n, T), order="F")


def grad_B(K, A, B, R, hp):
    """Gradient of ``objective_QL`` w.r.t. ``B``.

    The nuclear-norm part uses the subgradient ``U V^T`` restricted to
    nonzero singular values.
    """
    K, A, B, R = (np.asarray(M, dtype=np.float64) for M in (K, A, B, R))
    _check_dims(K, A, B, R)
    KA = K @ A
    g = 2.0 * KA.T @ (KA @ B - R)
    if hp.gamma_L2:
        g += 2.0 * hp.gamma_L2 * B
    if hp.gamma_L3:
        try:
            U, s, Vt = linalg.svd(B)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"SVD of structure matrix failed: {exc}") from None
        tol = s.max(initial=0.0) * B.shape[0] * np.finfo(float).eps
        keep = s > tol
        g += hp.gamma_L3 * (U[:, keep] @ Vt[keep])
    return g


def _project_psd(B):
    S = 0.5 * (B + B.T)
    w, V = linalg.eigh(S)
    return (V * np.maximum(w, 0.0)) @ V.T


def train_linear(K, R, hp=None, B0=None):
    """Alternating minimisation of the linear structure objective.

    Starts from ``B = I`` (tasks independent). Each outer iteration takes a
    gradient step on ``B`` with step ``scale * eta_B``, then re-solves ``A``
    exactly. ``scale`` is halved until the objective does not increase and
    doubled (up to ``max_step_scale``) after every accepted step. Stops when the
    objective change falls below ``epsilon`` times its initial value.
    """
    hp = (hp or LinearHyperparams()).validate()
    K = np.asarray(K, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    T = R.shape[1]
    K_eig = linalg.eigh(K)
    B = np.eye(T) if B0 is None else np.array(B0, dtype=np.float64)
    A = solve_A_sylvester(K, B, R, hp.gamma_L1, K_eig)
    q = objective_QL(K, A, B, R, hp)
    q0 = q
    tol = hp.epsilon * max(abs(q0), np.finfo(float).tiny)
    trace = TrainingTrace(objective=[q])
    scale = 1.0

    for _ in range(hp.max_outer_iters):
        g = grad_B(K, A, B, R, hp)
        scale = min(hp.max_step_scale, 2.0 * scale)
        for _ in range(hp.max_halvings + 1):
            B_try = B - scale * hp.eta_B * g
            if hp.project_psd:
                B_try = _project_psd(B_try)
            q_try = objective_QL(K, A, B_try, R, hp)
            if q_try <= q:
                break
            scale *= 0.5
        else:
            trace.warnings.append("no descent step on B; stopping")
            trace.converged = True
            break
        B = B_try
        A = solve_A_sylvester(K, B, R, hp.gamma_L1, K_eig)
        q_new = objective_QL(K, A, B, R, hp)
        if not np.isfinite(q_new) or q_new > 1e3 * q0:
            raise TrainingError("linear structure learning diverged", trace)
        trace.objective.append(q_new)
        trace.step_scale.append(scale)
        done = abs(q - q_new) < tol
        q = q_new
        if done:
            trace.converged = True
            break

    return TrainedModel(variant=LINEAR, A=A, B=B, trace=trace)
