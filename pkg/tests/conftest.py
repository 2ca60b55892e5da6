import numpy as np
import pytest

from mtocc import kernels, ocksr


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_psd(rng, n, rank=None):
    G = rng.normal(size=(n, rank or n))
    return G @ G.T / (rank or n)


def small_problem(seed, n=12, T=3, d=4):
    """RBF kernel over random features with contiguous task ids."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    tid = np.sort(np.arange(n) % T)
    K = kernels.rbf_gram(X, kernels.median_heuristic_width(X))
    return K, tid, ocksr.build_responses(tid, T)


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - b) / max(np.linalg.norm(b), 1e-300)
