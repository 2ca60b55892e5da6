"""Single-task kernel null-space regression and evaluation primitives."""

import numpy as np
from scipy import linalg
from scipy.stats import rankdata

from .errors import EvaluationError, InputError, NumericalError, ParameterError

JOINT = "joint"
POSITIVE = "positive"


def _condition(M):
    w = linalg.eigvalsh(M)
    lo = np.min(np.abs(w))
    return np.inf if lo == 0 else float(np.max(np.abs(w)) / lo)


def spd_solve(M, rhs, allow_jitter=False):
    """Solve ``M x = rhs`` for symmetric positive-definite ``M``.

    Uses a Cholesky factorization followed by one step of iterative
    refinement. If the factorization fails and ``allow_jitter`` is set, a
    single retry adds ``1e-10 * trace(M) / n`` to the diagonal.
    """
    M = np.asarray(M, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError:
        if not allow_jitter:
            raise NumericalError("matrix is not positive definite", _condition(M))
        n = M.shape[0]
        jitter = 1e-10 * np.trace(M) / n
        M = M + jitter * np.eye(n)
        try:
            factor = linalg.cho_factor(M, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise NumericalError(
                "matrix is not positive definite after jitter", _condition(M)
            ) from None
    x = linalg.cho_solve(factor, rhs, check_finite=False)
    x += linalg.cho_solve(factor, rhs - M @ x, check_finite=False)
    if not np.all(np.isfinite(x)):
        raise NumericalError("solve produced non-finite values", _condition(M))
    return x


def _check_gram(K):
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"kernel matrix must be square, got shape {K.shape}")
    return K


def fit_single(K, r, gamma):
    """Coefficients ``a = (K + gamma I)^{-1} r`` of the regression problem.

    ``gamma = 0`` is allowed; if ``K`` is then numerically singular a single
    jittered retry is made before giving up.
    """
    K = _check_gram(K)
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] != K.shape[0]:
        raise InputError(f"response length {r.shape[0]} != kernel size {K.shape[0]}")
    gamma = float(gamma)
    if not gamma >= 0:
        raise ParameterError(f"gamma must be nonnegative, got {gamma}")
    M = K + gamma * np.eye(K.shape[0])
    return spd_solve(M, r, allow_jitter=gamma == 0)


def project(K_cross, coeffs):
    """Project samples onto the null space: ``Y = K_cross @ coeffs``."""
    K_cross = np.asarray(K_cross, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if K_cross.shape[-1] != coeffs.shape[0]:
        raise InputError(
            f"inner dimensions disagree: {K_cross.shape} @ {coeffs.shape}"
        )
    return K_cross @ coeffs


def build_responses(task_ids, T, mode=JOINT):
    """Target response matrix.

    In ``"joint"`` mode row ``i`` is the one-hot indicator of ``task_ids[i]``
    (other tasks' positives act as negatives mapped to the origin). In
    ``"positive"`` mode a single column of ones is returned.
    """
    task_ids = np.asarray(task_ids)
    n = task_ids.shape[0]
    if mode == POSITIVE:
        return np.ones((n, 1))
    if mode != JOINT:
        raise InputError(f"unknown response mode {mode!r}")
    if not np.issubdtype(task_ids.dtype, np.integer):
        raise InputError("task ids must be integers")
    if n and (task_ids.min() < 0 or task_ids.max() >= T):
        raise InputError(f"task ids must lie in [0, {T})")
    R = np.zeros((n, int(T)))
    R[np.arange(n), task_ids] = 1.0
    return R


def score_task(y_test, target_mean):
    """Dissimilarity ``|y - target_mean|``; lower is more target-like."""
    return np.abs(np.asarray(y_test, dtype=np.float64) - target_mean)


def auc(scores, labels):
    """Area under the ROC curve for dissimilarity scores.

    ``labels`` is truthy for target samples. The result is the probability
    that a target sample scores strictly lower than a non-target one, ties
    counting one half (Mann-Whitney statistic on average ranks).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise InputError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs both target and non-target samples")
    ranks = rankdata(scores)
    u = ranks[~labels].sum() - n_neg * (n_neg + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fit_c_ocksr(K, task_ids, T, gamma):
    """Joint regression on one-hot responses, one discriminant per task."""
    R = build_responses(task_ids, T, JOINT)
    return fit_single(K, R, gamma)


def fit_ocksr(K, task_ids, T, gamma):
    """Independent single-task models trained on each task's positives only.

    The result is an ``(n, T)`` matrix whose column ``t`` is zero outside the
    rows of task ``t``, so ``K_cross @ A`` gives every task's projections.
    """
    K = _check_gram(K)
    task_ids = np.asarray(task_ids)
    A = np.zeros((K.shape[0], int(T)))
    for t in range(int(T)):
        idx = np.flatnonzero(task_ids == t)
        if idx.size == 0:
            raise InputError(f"task {t} has no training samples")
        A[idx, t] = fit_single(K[np.ix_(idx, idx)], np.ones(idx.size), gamma)
    return A


def target_means(responses, task_ids, T):
    """Per-task mean of training responses over that task's positives."""
    responses = np.asarray(responses, dtype=np.float64)
    task_ids = np.asarray(task_ids)
    return np.array(
        [responses[task_ids == t, t].mean() for t in range(int(T))]
    )
