"""Numeric primitives shared by the memory, reasoning and metric code.

Everything here is a pure function of its arguments.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import DegenerateInputError, check_count, check_matrix, check_vector

__all__ = [
    "SmoothingConfig",
    "cosine_similarity",
    "cosine_matrix",
    "smooth_min",
    "smooth_max",
    "kmeans",
    "kmeans_objective",
    "ema_blend",
    "softmax",
    "sigmoid",
]


@dataclass(frozen=True)
class SmoothingConfig:
    """Temperature for the log-sum-exp min/max; ``hard_mode`` gives exact min/max."""

    beta: float = 20.0
    hard_mode: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


def cosine_similarity(a, b):
    a = check_vector(a, name="a")
    b = check_vector(b, dim=a.shape[0], name="b")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_matrix(q, X):
    """Cosine similarity of ``q`` against every row of ``X``.

    Rows with zero norm score 0 instead of raising, since memory rows are
    averages and can cancel.
    """
    q = np.asarray(q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq == 0.0:
        raise DegenerateInputError("cosine similarity is undefined for a zero vector")
    norms = np.linalg.norm(X, axis=1)
    out = np.zeros(X.shape[0])
    ok = norms > 0
    out[ok] = (X[ok] @ q) / (norms[ok] * nq)
    return np.clip(out, -1.0, 1.0)


def _check_finite_scalars(*values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {v!r}")


def smooth_min(a, b, cfg=None):
    """Log-sum-exp minimum, ``-(1/beta) ln(exp(-beta a) + exp(-beta b))``.

    The result is never above ``min(a, b)`` and never more than
    ``ln 2 / beta`` below it.
    """
    cfg = cfg or SmoothingConfig(hard_mode=False)
    _check_finite_scalars(a, b)
    lo = min(a, b)
    if cfg.hard_mode:
        return float(lo)
    return float(lo - math.log1p(math.exp(-cfg.beta * abs(a - b))) / cfg.beta)


def smooth_max(a, b, cfg=None):
    cfg = cfg or SmoothingConfig(hard_mode=False)
    return -smooth_min(-a, -b, cfg)


def sigmoid(x):
    """Numerically stable logistic function for scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    e = np.exp(x - x.max())
    return e / e.sum()


def ema_blend(old, new, alpha):
    """Return ``(1 - alpha) * old + alpha * new``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    old = check_vector(old, name="old")
    new = check_vector(new, dim=old.shape[0], name="new")
    return (1.0 - alpha) * old + alpha * new


def _sq_distances(X, C):
    # exact per-pair differences; the expanded |x|^2 - 2xc + |c|^2 form loses
    # the monotone-objective guarantee to cancellation on near-duplicate points
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _assign(X, C):
    # argmin returns the first minimum, so ties go to the lowest centroid index
    return np.argmin(_sq_distances(X, C), axis=1)


def kmeans_objective(points, centroids, assignments):
    """Total within-cluster sum of squared distances."""
    X = np.asarray(points, dtype=np.float64)
    C = np.asarray(centroids, dtype=np.float64)
    diff = X - C[np.asarray(assignments)]
    return float(np.einsum("ij,ij->", diff, diff))


def _farthest_point_init(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_distances(X, X[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_distances(X, X[nxt][None, :])[:, 0])
    return X[chosen].copy()


def kmeans(points, k, max_iters=100, seed=0):
    """Lloyd's algorithm from a seeded farthest-point start.

    Parameters
    ----------
    points : array-like of shape (n, d)
    k : int
        Number of clusters, ``1 <= k <= n``.
    max_iters : int
        Cap on Lloyd update steps. ``0`` returns the initial centres.
    seed : int
        Picks the first centre; everything after it is deterministic.

    Returns
    -------
    centroids : ndarray of shape (k, d)
    assignments : ndarray of shape (n,)
        Index of the nearest returned centroid for every point.

    Notes
    -----
    A centre that loses all of its points keeps its previous position, so the
    objective never increases from one iteration to the next.
    """
    X = check_matrix(points, name="points")
    k = check_count(k, "k")
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the number of points ({X.shape[0]})")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    rng = np.random.default_rng(seed)
    C = _farthest_point_init(X, k, rng)
    labels = _assign(X, C)
    for _ in range(max_iters):
        newC = C.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                newC[j] = X[members].mean(axis=0)
        new_labels = _assign(X, newC)
        moved = not np.array_equal(newC, C)
        C = newC
        if not moved and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return C, labels
