"""Query-conditioned coarse-to-fine retrieval and attention pooling.

A question first routes through the prototype level (top-K, softmax-weighted)
and then ranks the centroids owned by the routed prototypes (top-m, raw
scores). Attention pooling over the retrieved items stands in for the learned
short- and long-term query branches.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import DegenerateInputError, check_count, check_matrix, check_vector, frozen
from .vecmath import softmax

__all__ = [
    "RetrievalConfig",
    "ProjectionPair",
    "ReasoningState",
    "top_indices",
    "select_prototypes",
    "select_centroids",
    "attention_pool",
    "reason_short",
    "reason_long",
    "fuse_context",
    "CoarseToFineReasoner",
]


@dataclass(frozen=True)
class RetrievalConfig:
    n_prototypes: int = 8
    n_centroids: int = 24
    normalize_prototype_scores: bool = True

    def __post_init__(self):
        check_count(self.n_prototypes, "n_prototypes")
        check_count(self.n_centroids, "n_centroids")


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    """Scoring projections for the prototype and centroid levels."""

    prototype: np.ndarray
    centroid: np.ndarray

    @classmethod
    def identity(cls, dim):
        return cls(frozen(np.eye(dim)), frozen(np.eye(dim)))

    def __post_init__(self):
        for name in ("prototype", "centroid"):
            M = np.asarray(getattr(self, name), dtype=np.float64)
            if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
                raise ValueError(f"{name} projection must be a finite square matrix")
            object.__setattr__(self, name, frozen(M))

    def checksum(self):
        """Byte-level digest of both matrices."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.prototype.tobytes())
        h.update(self.centroid.tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ReasoningState:
    z_s: np.ndarray
    z_l: np.ndarray
    retrieved_prototype_ids: tuple = ()
    retrieved_centroid_ids: tuple = ()
    routing_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    has_long_term_evidence: bool = True


def top_indices(scores, k):
    """Indices of the ``k`` largest scores, ties to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def select_prototypes(q, snapshot, proj, cfg):
    """Route ``q`` to the top-K prototypes.

    Returns ``(ids, weights)``. Weights are the softmax of the selected scores
    when normalisation is on and the raw scores otherwise. With no prototypes
    both are empty, which :func:`select_centroids` reads as "search every
    centroid".
    """
    if snapshot.n_prototypes == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    scores = snapshot.prototype_vectors @ (proj.prototype @ q)
    ids = top_indices(scores, cfg.n_prototypes)
    chosen = scores[ids]
    weights = softmax(chosen) if cfg.normalize_prototype_scores else chosen.copy()
    return ids, weights


def candidate_pool(snapshot, prototype_ids):
    if snapshot.n_prototypes == 0:
        return np.arange(snapshot.n_centroids)
    pool = set()
    for u in prototype_ids:
        pool.update(snapshot.prototype_members[int(u)])
    return np.array(sorted(pool), dtype=np.int64)


def select_centroids(q, snapshot, prototype_ids, proj, cfg):
    """Top-m centroids by raw projected score within the routed pool."""
    pool = candidate_pool(snapshot, prototype_ids)
    if pool.size == 0:
        return pool
    scores = snapshot.centroid_vectors[pool] @ (proj.centroid @ q)
    return pool[top_indices(scores, cfg.n_centroids)]


def attention_pool(query, items, return_weights=False):
    """Scaled dot-product pooling, ``sum_i softmax_i(query . item_i / sqrt(d)) item_i``."""
    query = check_vector(query, name="query")
    items = np.asarray(items, dtype=np.float64)
    if items.ndim != 2 or items.shape[0] == 0:
        raise DegenerateInputError("attention pooling needs at least one item")
    d = query.shape[0]
    if items.shape[1] != d:
        raise ValueError(f"items have dimension {items.shape[1]}, expected {d}")
    w = softmax(items @ query / np.sqrt(d))
    out = w @ items
    return (out, w) if return_weights else out


def reason_short(q, snapshot):
    """Pool the recent-frame buffer together with the question itself."""
    q = check_vector(q, dim=snapshot.dim, name="q")
    if snapshot.frames.shape[0] == 0:
        return q.copy()
    return attention_pool(q, np.vstack([snapshot.frames, q]))


def reason_long(q, z_s, snapshot, proj, cfg, short_term_residual=False):
    """Coarse-to-fine retrieval and pooling into the long-term representation.

    The pooling query is the mean of ``q`` and ``z_s``. With
    ``short_term_residual`` the pooled vector is further averaged with
    ``z_s``, so what is on screen now stays visible in ``z_l``.
    """
    q = check_vector(q, dim=snapshot.dim, name="q")
    z_s = check_vector(z_s, dim=snapshot.dim, name="z_s")
    proto_ids, weights = select_prototypes(q, snapshot, proj, cfg)
    cent_ids = select_centroids(q, snapshot, proto_ids, proj, cfg)
    if cent_ids.size == 0 and proto_ids.size == 0:
        return ReasoningState(z_s=z_s, z_l=z_s.copy(), has_long_term_evidence=False)
    items = np.vstack(
        [snapshot.prototype_vectors[proto_ids], snapshot.centroid_vectors[cent_ids], q[None, :]]
    )
    z_l = attention_pool(0.5 * (q + z_s), items)
    if short_term_residual:
        z_l = 0.5 * (z_s + z_l)
    return ReasoningState(
        z_s=z_s,
        z_l=z_l,
        retrieved_prototype_ids=tuple(int(i) for i in proto_ids),
        retrieved_centroid_ids=tuple(int(i) for i in cent_ids),
        routing_weights=weights,
    )


def fuse_context(z_l, entries):
    """Cross-attend ``z_l`` over the answer representations of past turns."""
    if not entries:
        return np.asarray(z_l, dtype=np.float64).copy()
    items = np.vstack([z_l] + [e.answer_representation for e in entries])
    return attention_pool(z_l, items)


class CoarseToFineReasoner(BaseEstimator, TransformerMixin):
    """Frozen query-aware reasoner over memory snapshots.

    ``fit`` only fixes the embedding dimension and, unless projections were
    passed in, sets both scoring projections to the identity. The reasoner has
    no trainable state beyond that.

    Parameters
    ----------
    n_prototypes, n_centroids : int
        Retrieval slots at the coarse and fine level.
    normalize_prototype_scores : bool
    projections : ProjectionPair or None
    context_gate : float
        Minimum question similarity for a past turn to be fused in.
    context_top_n : int
    short_term_residual : bool
        Average the pooled long-term vector with ``z_s``. Without it the
        long-term vector changes little once evidence has been stored, which
        leaves the readiness head nothing time-local to work with.
    """

    def __init__(
        self,
        n_prototypes=8,
        n_centroids=24,
        normalize_prototype_scores=True,
        projections=None,
        context_gate=0.5,
        context_top_n=2,
        short_term_residual=True,
    ):
        self.n_prototypes = n_prototypes
        self.n_centroids = n_centroids
        self.normalize_prototype_scores = normalize_prototype_scores
        self.projections = projections
        self.context_gate = context_gate
        self.context_top_n = context_top_n
        self.short_term_residual = short_term_residual

    def fit(self, X, y=None):
        X = check_matrix(X, name="X")
        self.dim_ = X.shape[1]
        self.retrieval_ = RetrievalConfig(
            self.n_prototypes, self.n_centroids, self.normalize_prototype_scores
        )
        proj = self.projections or ProjectionPair.identity(self.dim_)
        if proj.prototype.shape[0] != self.dim_:
            raise ValueError("projection size does not match the embedding dimension")
        self.projections_ = proj
        return self

    def reason(self, q, snapshot, context=None):
        """Full reasoning pass for one question on one snapshot.

        ``context`` is an optional :class:`~ontime.memory.ContextBank`; matching
        past turns are fused into the returned long-term representation.
        """
        check_is_fitted(self, "dim_")
        if snapshot.dim != self.dim_:
            raise ValueError(f"snapshot dimension {snapshot.dim} != reasoner dimension {self.dim_}")
        z_s = reason_short(q, snapshot)
        state = reason_long(q, z_s, snapshot, self.projections_, self.retrieval_, self.short_term_residual)
        if context is not None and len(context):
            entries = context.lookup(q, self.context_gate, self.context_top_n)
            if entries:
                fused = fuse_context(state.z_l, entries)
                state = ReasoningState(
                    z_s=state.z_s,
                    z_l=fused,
                    retrieved_prototype_ids=state.retrieved_prototype_ids,
                    retrieved_centroid_ids=state.retrieved_centroid_ids,
                    routing_weights=state.routing_weights,
                    has_long_term_evidence=state.has_long_term_evidence,
                )
        return state

    def transform(self, X, snapshot=None):
        """Long-term representation for each row of ``X`` against ``snapshot``."""
        check_is_fitted(self, "dim_")
        if snapshot is None:
            raise ValueError("transform needs a memory snapshot")
        X = check_matrix(X, dim=self.dim_, name="X")
        return np.vstack([self.reason(q, snapshot).z_l for q in X])
