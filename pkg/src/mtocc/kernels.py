"""Kernel and pairwise-distance machinery shared by both layers."""

import warnings

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateDataError, InputError, ParameterError

THETA_FLOOR = 1e-8


def as_features(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InputError(f"{name} must be a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite entries")
    return X


def rbf_gram(X, sigma, Z=None):
    """Gaussian kernel matrix ``exp(-||x_i - z_j||^2 / (2 sigma^2))``.

    Parameters
    ----------
    X : (n, d) array_like
    sigma : float
        Kernel width, strictly positive.
    Z : (m, d) array_like, optional
        Second argument of the kernel. When omitted the symmetric Gram
        matrix over ``X`` is returned with an exactly unit diagonal.

    Returns
    -------
    K : (n, n) or (n, m) ndarray
    """
    X = as_features(X)
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma <= 0:
        raise ParameterError(f"kernel width must be positive, got {sigma}")
    if Z is None:
        sq = cdist(X, X, "sqeuclidean")
        sq = 0.5 * (sq + sq.T)
        np.fill_diagonal(sq, 0.0)
    else:
        Z = as_features(Z, "Z")
        if Z.shape[1] != X.shape[1]:
            raise InputError(
                f"feature dimension mismatch: {X.shape[1]} vs {Z.shape[1]}"
            )
        sq = cdist(X, Z, "sqeuclidean")
    return np.exp(-sq / (2.0 * sigma * sigma))


def pairwise_sq_dist(Y):
    """Squared distances between the rows of ``Y`` via the Gram expansion.

    Returns ``(E, F)`` where ``F = Y Y^T`` and
    ``E_ij = F_ii + F_jj - 2 F_ij``. Rounding negatives are clamped to zero
    and the diagonal of ``E`` is exactly zero.
    """
    Y = as_features(Y, "Y")
    F = Y @ Y.T
    F = 0.5 * (F + F.T)
    d = np.diag(F)
    E = d[:, None] + d[None, :] - 2.0 * F
    np.maximum(E, 0.0, out=E)
    np.fill_diagonal(E, 0.0)
    return E, F


def cross_sq_dist(Y_new, Y):
    """Squared distances from rows of ``Y_new`` to rows of ``Y`` (same expansion)."""
    Y_new = np.asarray(Y_new, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y_new.ndim != 2 or Y.ndim != 2 or Y_new.shape[1] != Y.shape[1]:
        raise InputError(f"incompatible shapes {Y_new.shape} and {Y.shape}")
    a = np.einsum("ij,ij->i", Y_new, Y_new)
    b = np.einsum("ij,ij->i", Y, Y)
    E = a[:, None] + b[None, :] - 2.0 * (Y_new @ Y.T)
    return np.maximum(E, 0.0)


def clamp_theta(theta, floor=THETA_FLOOR, warn_list=None):
    """Clamp ``theta`` from below, recording a warning when the floor is hit."""
    theta = float(theta)
    if not theta >= floor:
        msg = f"theta={theta:.3e} below floor, clamped to {floor:.1e}"
        if warn_list is not None:
            warn_list.append(msg)
        else:
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
        theta = floor
    return theta


def second_layer_kernel(E, theta, floor=THETA_FLOOR, warn_list=None):
    """Element-wise ``exp(-theta * E)``; ``theta`` is clamped to ``floor``."""
    theta = clamp_theta(theta, floor, warn_list)
    return np.exp(-theta * np.asarray(E, dtype=np.float64))


def median_heuristic_width(X):
    """Width ``sqrt(median(nonzero squared distances) / 2)``."""
    X = as_features(X)
    if X.shape[0] < 2:
        raise InputError("median heuristic needs at least two samples")
    sq = pdist(X, "sqeuclidean")
    sq = sq[sq > 0]
    if sq.size == 0:
        raise DegenerateDataError("all pairwise distances are zero")
    return float(np.sqrt(np.median(sq) / 2.0))
