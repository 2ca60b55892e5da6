"""Sparse non-linear structure learning.

Same two-layer model as :mod:`mtocc.nonlinear`, but the second-layer
coefficients carry a sparse-group-lasso penalty (element-wise L1 plus an
L2 norm per task column) and are fitted with an accelerated proximal
gradient method.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ParameterError
from .model import SPARSE, TrainingTrace
from .nonlinear import _descend, _to_model, init_nonlinear


@dataclass
class SparseHyperparams:
    gamma_N1: float = 1.0
    gamma_N2: float = 1e-3
    gamma_N3: float = 1e-3
    eta_A: float = 1e-1
    eta_theta: float = 1e-1
    epsilon: float = 1e-8
    max_outer_iters: int = 500
    max_halvings: int = 30
    # cap on the backtracking scales, which double after each accepted step
    max_step_scale: float = 1.0
    theta_floor: float = kernels.THETA_FLOOR
    prox_max_iters: int = 5000
    prox_tol: float = 1e-11
    squared_group: bool = False
    # ridge weight of the closed-form B used only at initialisation
    gamma_init: float = None

    def validate(self):
        if min(self.gamma_N1, self.gamma_N2, self.gamma_N3) < 0:
            raise ParameterError("regularisation weights must be nonnegative")
        if self.eta_A < 0 or self.eta_theta < 0:
            raise ParameterError("step sizes must be nonnegative")
        if not self.max_step_scale >= 1.0:
            raise ParameterError("max_step_scale must be at least 1")
        if not self.epsilon > 0 or not self.prox_tol > 0:
            raise ParameterError("tolerances must be positive")
        if self.gamma_init is not None and not self.gamma_init > 0:
            raise ParameterError("gamma_init must be positive")
        return self

    @property
    def init_ridge(self):
        return self.gamma_init if self.gamma_init is not None else max(self.gamma_N1, 1e-8)


@dataclass
class SparsityReport:
    nonzero_fraction: float
    column_norms: np.ndarray
    zero_columns: list = field(default_factory=list)

    @classmethod
    def of(cls, B):
        B = np.asarray(B)
        return cls(
            nonzero_fraction=float(np.count_nonzero(B)) / B.size,
            column_norms=np.linalg.norm(B, axis=0),
            zero_columns=[int(t) for t in np.flatnonzero(~np.any(B != 0, axis=0))],
        )

    def to_dict(self):
        return {
            "nonzero_fraction": self.nonzero_fraction,
            "column_norms": [float(v) for v in self.column_norms],
            "zero_columns": list(self.zero_columns),
        }

_TINY = np.finfo(float).tiny


def penalty(B, gamma_l1, gamma_group, squared_group=False):
    sq = (B * B).sum(axis=0)
    group = sq.sum() if squared_group else np.sqrt(sq).sum()
    return float(gamma_l1 * np.abs(B).sum() + gamma_group * group)


def objective_QNS(K, A, J, B, R, hp):
    """``||J B - R||^2 + gamma_N1 tr(A^T K A) + gamma_N2 |B|_1 + gamma_N3 sum_t |b_t|``."""
    K, A, J, B, R = (np.asarray(M, dtype=np.float64) for M in (K, A, J, B, R))
    resid = J @ B - R
    return float(
        np.sum(resid * resid)
        + hp.gamma_N1 * np.sum(A * (K @ A))
        + penalty(B, hp.gamma_N2, hp.gamma_N3, hp.squared_group)
    )


def prox_sparse_group(V, t1, t2, squared_group=False):
    """Proximal map of ``t1 |X|_1 + t2 sum_t |x_t|_2`` (columns as groups).

    Soft-thresholds entry-wise, then shrinks each column towards zero. With
    ``squared_group`` the group term is ``t2 sum_t |x_t|_2^2`` instead.
    """
    V = np.asarray(V, dtype=np.float64)
    X = np.maximum(V - t1, 0.0) + np.minimum(V + t1, 0.0)
    if t2 == 0:
        return X
    if squared_group:
        return X / (1.0 + 2.0 * t2)
    norms = np.sqrt((X * X).sum(axis=0))
    shrink = np.maximum(1.0 - t2 / np.maximum(norms, _TINY), 0.0)
    return X * shrink


def top_eigenvalue(J, iters=50):
    """Largest eigenvalue of symmetric PSD ``J`` by power iteration."""
    v = np.ones(J.shape[0]) / np.sqrt(J.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = J @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        lam = float(v @ (J @ v))
    return lam


def solve_B_sparse(J, R, hp, B0=None):
    """Accelerated proximal gradient for the sparse-group-lasso ``B`` problem.

    Minimises ``||J B - R||^2 + gamma_N2 |B|_1 + gamma_N3 sum_t |b_t|_2``.
    Momentum is reset whenever the objective would increase, so the
    objective sequence is monotone. The step is ``1 / L`` with
    ``L = 2 lambda_max(J)^2``; ``L`` is doubled if a plain proximal step
    fails the sufficient-decrease test (power iteration underestimates).

    Returns
    -------
    B : (n, T) ndarray
    report : SparsityReport
    info : dict
        ``iterations``, ``converged``, ``objective`` (history).
    """
    J = np.asarray(J, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    g1, g2, sq = hp.gamma_N2, hp.gamma_N3, hp.squared_group
    if g1 == 0 and g2 == 0:
        # no penalty: the proximal map is the identity and the problem is
        # plain least squares, which first-order steps solve poorly when J
        # is ill-conditioned
        X = np.linalg.lstsq(J, R, rcond=None)[0]
        resid = J @ X - R
        return X, SparsityReport.of(X), {
            "iterations": 0,
            "converged": True,
            "objective": [float(np.sum(resid * resid))],
        }
    L = max(2.0 * top_eigenvalue(J) ** 2, np.finfo(float).tiny)
    JtR = J.T @ R
    JtJ = J.T @ J
    rr = float(R.ravel() @ R.ravel())
    tiny = np.finfo(float).tiny

    # ||J X - R||^2 from G = JtJ X; products are carried along the
    # momentum combination so each iteration costs one matrix product
    def smooth(X, G):
        return max(float(X.ravel() @ (G - 2.0 * JtR).ravel()) + rr, 0.0)

    def total(X, G):
        return smooth(X, G) + penalty(X, g1, g2, sq)

    X = np.zeros_like(R) if B0 is None else np.array(B0, dtype=np.float64)
    GX = JtJ @ X
    F_x = total(X, GX)
    Yk, GY, t = X, GX, 1.0
    history = [F_x]
    converged = False
    it = 0
    while it < hp.prox_max_iters:
        it += 1
        X_new = prox_sparse_group(Yk - (2.0 / L) * (GY - JtR), g1 / L, g2 / L, sq)
        G_new = JtJ @ X_new
        F_new = total(X_new, G_new)
        if F_new > F_x:
            # restart from X with a plain (monotone) proximal step
            f_x = smooth(X, GX)
            gX = 2.0 * (GX - JtR)
            while True:
                X_new = prox_sparse_group(X - gX / L, g1 / L, g2 / L, sq)
                G_new = JtJ @ X_new
                D = (X_new - X).ravel()
                bound = f_x + float(gX.ravel() @ D) + 0.5 * L * float(D @ D) * (1 + 1e-12)
                if smooth(X_new, G_new) <= bound:
                    break
                L *= 2.0
            F_new = total(X_new, G_new)
            t = 1.0
            if F_new >= F_x:
                converged = True
                break
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        Yk = X_new + beta * (X_new - X)
        GY = G_new + beta * (G_new - GX)
        rel = abs(F_x - F_new) / max(abs(F_x), tiny)
        X, GX, F_x, t = X_new, G_new, F_new, t_new
        history.append(F_x)
        if rel < hp.prox_tol:
            converged = True
            break
    return X, SparsityReport.of(X), {
        "iterations": it,
        "converged": converged,
        "objective": history,
    }


def grad_J_sparse(J, B, R):
    return 2.0 * (J @ B - R) @ B.T


def train_sparse(K, task_ids, R, hp=None):
    """Sparse counterpart of :func:`mtocc.nonlinear.train_nonlinear`.

    The closed-form ``B`` update is replaced by :func:`solve_B_sparse`,
    warm-started from the current ``B`` so the objective cannot increase.
    """
    hp = (hp or SparseHyperparams()).validate()
    K = np.asarray(K, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    state = init_nonlinear(K, task_ids, R, hp.gamma_N1, hp.init_ridge, hp.theta_floor)
    trace = TrainingTrace()

    def objective(s):
        return objective_QNS(K, s.A, s.J, s.B, R, hp)

    def solve_B(s):
        B, report, info = solve_B_sparse(s.J, R, hp, B0=s.B)
        if not info["converged"]:
            trace.warnings.append(
                f"sparse B solve hit the {hp.prox_max_iters}-iteration cap"
            )
        trace.sparsity.append(report.to_dict())
        return B

    state = _descend(
        K,
        task_ids,
        R,
        hp,
        state,
        objective,
        grad_J=lambda s: grad_J_sparse(s.J, s.B, R),
        solve_B=solve_B,
        trace=trace,
        variant=SPARSE,
    )
    return _to_model(SPARSE, state, trace)
