"""Three-level streaming visual memory plus the contextual QA bank.

Level 1 is a FIFO of raw frame embeddings. Frames evicted from it are folded
into level 2, a bounded set of EMA centroids that carry time metadata. Level 2
is summarised by level 3, a small set of prototypes used as coarse routing
anchors. :class:`HierarchicalMemory` is the single writer;
:class:`MemoryTreeSnapshot` is the read-only view handed to reasoning code.
"""

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_matrix, check_vector, frozen
from .vecmath import cosine_matrix, ema_blend, kmeans

__all__ = [
    "MemoryConfig",
    "Centroid",
    "Prototype",
    "AdaptiveThresholdState",
    "IngestEvent",
    "ContextEntry",
    "ContextBank",
    "MemoryTreeSnapshot",
    "HierarchicalMemory",
    "threshold_rule",
    "update_threshold",
    "TREE_SCHEMA_VERSION",
]

TREE_SCHEMA_VERSION = 1
UNASSIGNED = -1


@dataclass(frozen=True)
class MemoryConfig:
    frame_capacity: int = 24
    centroid_capacity: int = 96
    prototype_capacity: int = 12
    alpha: float = 0.985
    tau0: float = 0.60
    tau_min: float = 0.40
    tau_max: float = 0.85
    novelty_window: int = 32
    drift_rate: float = 0.5
    hetero_threshold: float = 0.35
    mini_kmeans_iters: int = 5
    threshold_gain: float = 0.5
    novelty_gain: float = 0.5
    sim_target: float = 0.7
    sim_decay: float = 0.9
    context_limit: int | None = 256
    random_state: int = 0

    def __post_init__(self):
        check_count(self.frame_capacity, "frame_capacity")
        check_count(self.centroid_capacity, "centroid_capacity")
        check_count(self.prototype_capacity, "prototype_capacity")
        check_count(self.novelty_window, "novelty_window")
        if self.prototype_capacity > self.centroid_capacity:
            raise ValueError("prototype_capacity must not exceed centroid_capacity")
        if not self.tau_min <= self.tau0 <= self.tau_max:
            raise ValueError("need tau_min <= tau0 <= tau_max")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.sim_decay < 1.0:
            raise ValueError("sim_decay must lie in [0, 1)")
        if self.context_limit is not None:
            check_count(self.context_limit, "context_limit")


@dataclass(frozen=True)
class Centroid:
    vector: np.ndarray
    weight: float
    time_mean: float
    time_span: tuple
    prototype_id: int = UNASSIGNED


@dataclass(frozen=True)
class Prototype:
    vector: np.ndarray
    member_ids: frozenset
    weight: float


@dataclass(frozen=True)
class AdaptiveThresholdState:
    tau_t: float
    sim_ema: float
    novelty_events: tuple = ()

    def novelty_rate(self, window):
        # a partially filled window counts its missing slots as "no novelty"
        return sum(self.novelty_events) / window


def threshold_rule(sim_ema, novelty, cfg):
    """Merge threshold from the smoothed match similarity and novelty rate.

    Stable scenes (high ``sim_ema``) raise the threshold, and a high rate of
    new-centroid creation lowers it.
    """
    tau = cfg.tau0 + cfg.threshold_gain * (sim_ema - cfg.sim_target) - cfg.novelty_gain * novelty
    return float(min(max(tau, cfg.tau_min), cfg.tau_max))


def update_threshold(state, best_sim, created_new, cfg):
    """Fold one eviction outcome into the threshold state and return the new state.

    ``best_sim`` may be ``None`` when there was nothing to compare against; the
    similarity average is then left alone.
    """
    sim_ema = state.sim_ema
    if best_sim is not None:
        if not -1.0 <= best_sim <= 1.0:
            raise ValueError(f"best_sim must lie in [-1, 1], got {best_sim}")
        sim_ema = cfg.sim_decay * sim_ema + (1.0 - cfg.sim_decay) * best_sim
    events = (state.novelty_events + (bool(created_new),))[-cfg.novelty_window:]
    novelty = sum(events) / cfg.novelty_window
    return AdaptiveThresholdState(threshold_rule(sim_ema, novelty, cfg), sim_ema, events)


@dataclass(frozen=True)
class IngestEvent:
    """What one call to :meth:`HierarchicalMemory.ingest_frame` did."""

    t: float
    appended: bool = True
    evicted: bool = False
    merged_into: int | None = None
    created: int | None = None
    best_similarity: float | None = None
    abstraction: bool = False
    realignment: bool = False
    overflow_merge: tuple | None = None


@dataclass(frozen=True)
class ContextEntry:
    question_embedding: np.ndarray
    answer_representation: np.ndarray
    turn_id: str


class ContextBank:
    """Past question/answer representations, optionally ring-limited."""

    def __init__(self, limit=256):
        self.limit = limit
        self._entries = deque(maxlen=limit)
        self._serial = 0

    def __len__(self):
        return len(self._entries)

    def store(self, entry):
        q = check_vector(entry.question_embedding, name="question_embedding")
        check_vector(entry.answer_representation, dim=q.shape[0], name="answer_representation")
        self._entries.append((self._serial, entry))
        self._serial += 1

    def entries(self):
        return tuple(e for _, e in self._entries)

    def lookup(self, q, gate=0.5, top_n=3):
        """Entries whose question is at least ``gate``-similar to ``q``.

        Sorted by similarity, most recent first among equal similarities.
        """
        if not -1.0 <= gate <= 1.0:
            raise ValueError(f"gate must lie in [-1, 1], got {gate}")
        check_count(top_n, "top_n")
        if not self._entries:
            return []
        Q = np.stack([e.question_embedding for _, e in self._entries])
        sims = cosine_matrix(check_vector(q, dim=Q.shape[1], name="q"), Q)
        serials = np.array([s for s, _ in self._entries])
        keep = np.flatnonzero(sims >= gate)
        order = keep[np.lexsort((-serials[keep], -sims[keep]))]
        return [self._entries[i][1] for i in order[:top_n]]


@dataclass(frozen=True, eq=False)
class MemoryTreeSnapshot:
    """Read-only copy of all three memory levels at one stream time.

    Arrays are copies with the write flag cleared, so later ingestion can
    never show through.
    """

    frames: np.ndarray
    frame_times: np.ndarray
    centroid_vectors: np.ndarray
    centroid_weights: np.ndarray
    centroid_time_mean: np.ndarray
    centroid_time_span: np.ndarray
    centroid_prototype: np.ndarray
    prototype_vectors: np.ndarray
    prototype_members: tuple
    prototype_weights: np.ndarray
    threshold_state: AdaptiveThresholdState
    stream_clock: float
    dim: int

    @classmethod
    def from_arrays(cls, centroids, prototypes=None, members=None, frames=None, frame_times=None, times=None):
        """Build a snapshot directly from level contents.

        ``members[u]`` lists the centroid ids owned by prototype ``u``.
        Centroid ``j`` gets weight 1 and timestamp ``times[j]`` (default ``j``).
        """
        C = check_matrix(centroids, name="centroids", allow_empty=True)
        d = C.shape[1]
        n = C.shape[0]
        S = np.zeros((0, d)) if prototypes is None else check_matrix(prototypes, dim=d, name="prototypes", allow_empty=True)
        members = tuple(frozenset(int(j) for j in m) for m in (members or ()))
        if len(members) != S.shape[0]:
            raise ValueError("need one member set per prototype")
        owner = np.full(n, UNASSIGNED, dtype=np.int64)
        for u, m in enumerate(members):
            for j in m:
                if not 0 <= j < n or owner[j] != UNASSIGNED:
                    raise ValueError(f"centroid {j} is out of range or owned twice")
                owner[j] = u
        F = np.zeros((0, d)) if frames is None else check_matrix(frames, dim=d, name="frames", allow_empty=True)
        ft = np.arange(F.shape[0], dtype=np.float64) if frame_times is None else np.asarray(frame_times, float)
        tm = np.arange(n, dtype=np.float64) if times is None else np.asarray(times, float)
        return cls(
            frames=frozen(F),
            frame_times=frozen(ft),
            centroid_vectors=frozen(C),
            centroid_weights=frozen(np.ones(n)),
            centroid_time_mean=frozen(tm),
            centroid_time_span=frozen(np.column_stack([tm, tm]) if n else np.zeros((0, 2))),
            centroid_prototype=frozen(owner, np.int64),
            prototype_vectors=frozen(S),
            prototype_members=members,
            prototype_weights=frozen(np.array([float(len(m)) for m in members])),
            threshold_state=AdaptiveThresholdState(0.6, 0.7, ()),
            stream_clock=float(ft[-1]) if ft.size else 0.0,
            dim=d,
        )

    @property
    def n_centroids(self):
        return self.centroid_vectors.shape[0]

    @property
    def n_prototypes(self):
        return self.prototype_vectors.shape[0]

    @property
    def n_items(self):
        return self.frames.shape[0] + self.n_centroids + self.n_prototypes

    @cached_property
    def centroids(self):
        return tuple(
            Centroid(
                vector=self.centroid_vectors[j],
                weight=float(self.centroid_weights[j]),
                time_mean=float(self.centroid_time_mean[j]),
                time_span=(float(self.centroid_time_span[j, 0]), float(self.centroid_time_span[j, 1])),
                prototype_id=int(self.centroid_prototype[j]),
            )
            for j in range(self.n_centroids)
        )

    @cached_property
    def prototypes(self):
        return tuple(
            Prototype(self.prototype_vectors[u], self.prototype_members[u], float(self.prototype_weights[u]))
            for u in range(self.n_prototypes)
        )

    def to_dict(self):
        return {
            "schema": "ontime.memory_tree",
            "version": TREE_SCHEMA_VERSION,
            "dim": self.dim,
            "stream_clock": self.stream_clock,
            "frames": [
                {"t": float(t), "vector": v.tolist()} for t, v in zip(self.frame_times, self.frames)
            ],
            "centroids": [
                {
                    "vector": c.vector.tolist(),
                    "weight": c.weight,
                    "time_mean": c.time_mean,
                    "time_span": list(c.time_span),
                    "prototype_id": c.prototype_id,
                }
                for c in self.centroids
            ],
            "prototypes": [
                {"vector": p.vector.tolist(), "member_ids": sorted(p.member_ids), "weight": p.weight}
                for p in self.prototypes
            ],
            "threshold_state": {
                "tau_t": self.threshold_state.tau_t,
                "sim_ema": self.threshold_state.sim_ema,
                "novelty_events": list(self.threshold_state.novelty_events),
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def __eq__(self, other):
        if not isinstance(other, MemoryTreeSnapshot):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


class HierarchicalMemory(BaseEstimator):
    """Bounded three-level memory fed one frame at a time.

    Parameters mirror :class:`MemoryConfig`. ``fit`` resets the memory and
    replays a whole stream; ``partial_fit`` and :meth:`ingest_frame` continue
    an existing one.

    Examples
    --------
    >>> import numpy as np
    >>> mem = HierarchicalMemory(frame_capacity=2).fit(np.eye(3), times=[0, 1, 2])
    >>> snap = mem.snapshot()
    >>> snap.frames.shape, snap.n_centroids
    ((2, 3), 1)
    """

    def __init__(
        self,
        frame_capacity=24,
        centroid_capacity=96,
        prototype_capacity=12,
        alpha=0.985,
        tau0=0.60,
        tau_min=0.40,
        tau_max=0.85,
        novelty_window=32,
        drift_rate=0.5,
        hetero_threshold=0.35,
        mini_kmeans_iters=5,
        threshold_gain=0.5,
        novelty_gain=0.5,
        sim_target=0.7,
        sim_decay=0.9,
        context_limit=256,
        random_state=0,
    ):
        self.frame_capacity = frame_capacity
        self.centroid_capacity = centroid_capacity
        self.prototype_capacity = prototype_capacity
        self.alpha = alpha
        self.tau0 = tau0
        self.tau_min = tau_min
        self.tau_max = tau_max
        self.novelty_window = novelty_window
        self.drift_rate = drift_rate
        self.hetero_threshold = hetero_threshold
        self.mini_kmeans_iters = mini_kmeans_iters
        self.threshold_gain = threshold_gain
        self.novelty_gain = novelty_gain
        self.sim_target = sim_target
        self.sim_decay = sim_decay
        self.context_limit = context_limit
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg):
        return cls(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})

    @property
    def config(self):
        return MemoryConfig(**self.get_params())

    # ------------------------------------------------------------------ state

    def reset(self, dim):
        """Empty every level and fix the embedding dimension."""
        self.config_ = self.config
        self.dim_ = check_count(dim, "dim")
        J = self.config_.centroid_capacity
        self._frames = deque()
        self._C = np.zeros((J, dim))
        self._w = np.zeros(J)
        self._tmean = np.zeros(J)
        self._tspan = np.zeros((J, 2))
        self._proto_of = np.full(J, UNASSIGNED, dtype=np.int64)
        self.n_centroids_ = 0
        self._S = np.zeros((0, dim))
        self._members = []
        self.threshold_state_ = AdaptiveThresholdState(self.config_.tau0, self.config_.sim_target, ())
        self.context_ = ContextBank(self.config_.context_limit)
        self.clock_ = 0.0
        self._last_t = None
        self.n_evicted_ = 0
        return self

    def fit(self, X, y=None, times=None):
        X = check_matrix(X, name="X")
        self.reset(X.shape[1])
        return self.partial_fit(X, times=times)

    def partial_fit(self, X, y=None, times=None):
        X = check_matrix(X, name="X")
        if not hasattr(self, "dim_"):
            self.reset(X.shape[1])
        if times is None:
            start = 0.0 if self._last_t is None else self._last_t + 1.0
            times = start + np.arange(X.shape[0], dtype=np.float64)
        for x, t in zip(X, times):
            self.ingest_frame(x, t)
        return self

    @property
    def tau_t(self):
        return self.threshold_state_.tau_t

    def level_sizes(self):
        check_is_fitted(self, "dim_")
        return len(self._frames), self.n_centroids_, self._S.shape[0]

    def total_weight(self):
        return float(self._w[: self.n_centroids_].sum())

    # ----------------------------------------------------------------- ingest

    def ingest_frame(self, frame, t):
        """Append one frame; on overflow fold the oldest frame into level 2."""
        if not hasattr(self, "dim_"):
            self.reset(np.asarray(frame).shape[0])
        frame = check_vector(frame, dim=self.dim_, name="frame")
        t = float(t)
        if not np.isfinite(t) or t < 0:
            raise ValueError(f"timestamp must be finite and non-negative, got {t}")
        if self._last_t is not None and t <= self._last_t:
            raise ValueError(f"timestamps must increase strictly: {t} after {self._last_t}")
        self._last_t = t
        self.clock_ = t
        self._frames.append((frame, t))
        if len(self._frames) <= self.config_.frame_capacity:
            return IngestEvent(t=t)
        f_o, t_o = self._frames.popleft()
        self.n_evicted_ += 1
        outcome = self.merge_evicted(f_o, t_o)
        abstraction = realigned = False
        cfg = self.config_
        if self.threshold_state_.novelty_rate(cfg.novelty_window) > cfg.drift_rate:
            self.abstract_to_prototypes()
            abstraction = True
        if outcome.get("abstraction"):
            abstraction = True
        if abstraction and self._S.shape[0]:
            realigned = self.realign_prototypes()
        return IngestEvent(
            t=t,
            evicted=True,
            merged_into=outcome.get("merged"),
            created=outcome.get("created"),
            best_similarity=outcome.get("best_sim"),
            abstraction=abstraction,
            realignment=realigned,
            overflow_merge=outcome.get("overflow"),
        )

    def merge_evicted(self, f_o, t):
        """Merge an evicted frame into its best-matching centroid or spawn one.

        Returns a dict with ``merged`` or ``created`` set to the centroid index.
        """
        cfg = self.config_
        n = self.n_centroids_
        tau = self.threshold_state_.tau_t
        best_sim = None
        out = {}
        if n:
            sims = cosine_matrix(f_o, self._C[:n]) if np.any(f_o) else np.zeros(n)
            j = int(np.argmax(sims))
            best_sim = float(sims[j])
            out["best_sim"] = best_sim
        if best_sim is not None and best_sim >= tau:
            self._C[j] = ema_blend(self._C[j], f_o, cfg.alpha)
            self._w[j] += 1.0
            self._tmean[j] = (1.0 - cfg.alpha) * self._tmean[j] + cfg.alpha * t
            self._tspan[j, 0] = min(self._tspan[j, 0], t)
            self._tspan[j, 1] = max(self._tspan[j, 1], t)
            out["merged"] = j
            created = False
        else:
            if n >= cfg.centroid_capacity:
                self.abstract_to_prototypes()
                out["abstraction"] = True
                slot, pair = self._free_slot_by_pair_merge()
                out["overflow"] = pair
            else:
                slot = n
                self.n_centroids_ += 1
            self._C[slot] = f_o
            self._w[slot] = 1.0
            self._tmean[slot] = t
            self._tspan[slot] = (t, t)
            self._proto_of[slot] = UNASSIGNED
            if self._S.shape[0]:
                self._attach_to_nearest_prototype(slot)
            out["created"] = slot
            created = True
        self.threshold_state_ = update_threshold(self.threshold_state_, best_sim, created, cfg)
        return out

    def _free_slot_by_pair_merge(self):
        """Merge the two most similar centroids; return the freed index."""
        n = self.n_centroids_
        C = self._C[:n]
        norms = np.linalg.norm(C, axis=1)
        norms[norms == 0] = 1.0
        U = C / norms[:, None]
        G = U @ U.T
        np.fill_diagonal(G, -np.inf)
        flat = int(np.argmax(G))
        i, j = divmod(flat, n)
        i, j = min(i, j), max(i, j)
        wi, wj = self._w[i], self._w[j]
        w = wi + wj
        self._C[i] = (wi * self._C[i] + wj * self._C[j]) / w
        self._tmean[i] = (wi * self._tmean[i] + wj * self._tmean[j]) / w
        self._tspan[i, 0] = min(self._tspan[i, 0], self._tspan[j, 0])
        self._tspan[i, 1] = max(self._tspan[i, 1], self._tspan[j, 1])
        self._w[i] = w
        pj = self._proto_of[j]
        if pj != UNASSIGNED:
            self._members[pj].discard(j)
        self._proto_of[j] = UNASSIGNED
        self._w[j] = 0.0
        return j, (i, j)

    def _attach_to_nearest_prototype(self, j):
        d2 = ((self._S - self._C[j]) ** 2).sum(axis=1)
        u = int(np.argmin(d2))
        self._proto_of[j] = u
        self._members[u].add(j)
        self._drop_empty_prototypes()

    def _drop_empty_prototypes(self):
        keep = [u for u, m in enumerate(self._members) if m]
        if len(keep) == len(self._members):
            return
        remap = {u: i for i, u in enumerate(keep)}
        self._S = self._S[keep]
        self._members = [self._members[u] for u in keep]
        n = self.n_centroids_
        self._proto_of[:n] = [remap.get(int(p), UNASSIGNED) for p in self._proto_of[:n]]

    def _rebuild_prototypes(self, centers, labels):
        n = self.n_centroids_
        self._S = np.array(centers, dtype=np.float64)
        self._members = [set() for _ in range(self._S.shape[0])]
        for j, u in enumerate(labels[:n]):
            self._members[int(u)].add(j)
            self._proto_of[j] = int(u)
        self._drop_empty_prototypes()

    def abstract_to_prototypes(self):
        """Summarise level 2 into level 3 and clear the novelty window.

        First call clusters the centroids with k-means. Later calls move each
        prototype toward the mean of its members with the EMA rate ``alpha``,
        then reassign every centroid to its nearest prototype.
        """
        cfg = self.config_
        n = self.n_centroids_
        if n == 0:
            return 0
        C = self._C[:n]
        if self._S.shape[0] == 0:
            k = min(cfg.prototype_capacity, n)
            centers, labels = kmeans(C, k, max_iters=100, seed=cfg.random_state)
            self._rebuild_prototypes(centers, labels)
        else:
            for u, members in enumerate(self._members):
                if members:
                    idx = sorted(members)
                    self._S[u] = (1.0 - cfg.alpha) * self._S[u] + cfg.alpha * C[idx].mean(axis=0)
            d2 = ((C[:, None, :] - self._S[None, :, :]) ** 2).sum(axis=2)
            self._rebuild_prototypes(self._S, np.argmin(d2, axis=1))
        ts = self.threshold_state_
        self.threshold_state_ = AdaptiveThresholdState(ts.tau_t, ts.sim_ema, ())
        return self._S.shape[0]

    def intra_prototype_similarity(self):
        """Mean cosine between each assigned centroid and its prototype."""
        n = self.n_centroids_
        sims = []
        for u, members in enumerate(self._members):
            if members:
                idx = sorted(members)
                sims.extend(cosine_matrix(self._S[u], self._C[idx]) if np.any(self._S[u]) else [0.0] * len(idx))
        return float(np.mean(sims)) if sims else 1.0

    def realign_prototypes(self):
        """Re-cluster level 2 when prototypes no longer describe their members."""
        cfg = self.config_
        n = self.n_centroids_
        if self._S.shape[0] == 0 or n == 0:
            return False
        if self.intra_prototype_similarity() >= cfg.hetero_threshold:
            return False
        k = min(cfg.prototype_capacity, n)
        centers, labels = kmeans(self._C[:n], k, max_iters=cfg.mini_kmeans_iters, seed=cfg.random_state)
        self._rebuild_prototypes(centers, labels)
        return True

    def flush(self):
        """Evict every buffered frame into level 2, oldest first.

        Used when the whole stream has been seen and the short-term buffer
        should be summarised too. Returns the list of ingest events.
        """
        check_is_fitted(self, "dim_")
        cfg = self.config_
        events = []
        while self._frames:
            f_o, t_o = self._frames.popleft()
            self.n_evicted_ += 1
            outcome = self.merge_evicted(f_o, t_o)
            abstraction = bool(outcome.get("abstraction"))
            if self.threshold_state_.novelty_rate(cfg.novelty_window) > cfg.drift_rate:
                self.abstract_to_prototypes()
                abstraction = True
            realigned = self.realign_prototypes() if abstraction else False
            events.append(
                IngestEvent(
                    t=t_o,
                    appended=False,
                    evicted=True,
                    merged_into=outcome.get("merged"),
                    created=outcome.get("created"),
                    best_similarity=outcome.get("best_sim"),
                    abstraction=abstraction,
                    realignment=realigned,
                    overflow_merge=outcome.get("overflow"),
                )
            )
        return events

    # ------------------------------------------------------------------- read

    def snapshot(self):
        check_is_fitted(self, "dim_")
        n = self.n_centroids_
        d = self.dim_
        if self._frames:
            frames = np.stack([f for f, _ in self._frames])
            times = np.array([t for _, t in self._frames])
        else:
            frames, times = np.zeros((0, d)), np.zeros(0)
        weights = np.array([sum(self._w[j] for j in m) for m in self._members])
        return MemoryTreeSnapshot(
            frames=frozen(frames),
            frame_times=frozen(times),
            centroid_vectors=frozen(self._C[:n]),
            centroid_weights=frozen(self._w[:n]),
            centroid_time_mean=frozen(self._tmean[:n]),
            centroid_time_span=frozen(self._tspan[:n]),
            centroid_prototype=frozen(self._proto_of[:n], np.int64),
            prototype_vectors=frozen(self._S),
            prototype_members=tuple(frozenset(m) for m in self._members),
            prototype_weights=frozen(weights),
            threshold_state=self.threshold_state_,
            stream_clock=float(self.clock_),
            dim=d,
        )
