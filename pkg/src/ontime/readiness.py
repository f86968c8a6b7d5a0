"""Answer-readiness scoring, pseudo-labels, training objective and trigger.

The readiness head is a two-layer perceptron over ``[z, r]``. Here ``z`` is
the long-term representation written in a frame anchored on the question,
and ``r`` is a learned readiness embedding. Training pairs come from
pseudo-labels: time spans of the centroids most and least similar to the
representation the reasoner settles on once the whole stream has been seen.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import DegenerateInputError, check_count, check_vector
from .vecmath import cosine_matrix, sigmoid

__all__ = [
    "PseudoLabelSet",
    "ReadinessTrainConfig",
    "ReadinessTrace",
    "ReadinessEpisode",
    "TrainingSkippedError",
    "question_frame",
    "merge_intervals",
    "interval_length",
    "temporal_iou",
    "build_pseudo_labels",
    "loss_ctr",
    "loss_rdy",
    "ReadinessModel",
    "trigger",
    "first_trigger",
    "MODEL_SCHEMA_VERSION",
]

MODEL_SCHEMA_VERSION = 1


class TrainingSkippedError(RuntimeError):
    """Every episode had a degenerate label set, so there is nothing to fit."""


# --------------------------------------------------------------- intervals


def merge_intervals(intervals):
    """Union of closed intervals as a sorted, non-overlapping list."""
    out = []
    for a, b in sorted((float(a), float(b)) for a, b in intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [tuple(iv) for iv in out]


def subtract_intervals(base, remove):
    """Parts of ``base`` not covered by ``remove``."""
    remove = merge_intervals(remove)
    out = []
    for a, b in merge_intervals(base):
        pieces = [(a, b)]
        for c, d in remove:
            nxt = []
            for x, y in pieces:
                if d < x or c > y:
                    nxt.append((x, y))
                    continue
                if x < c:
                    nxt.append((x, c))
                if d < y:
                    nxt.append((d, y))
            pieces = nxt
        out.extend(p for p in pieces if p[1] > p[0])
    return out


def interval_length(intervals):
    return sum(b - a for a, b in merge_intervals(intervals))


def _intersection_length(A, B):
    total = 0.0
    for a, b in merge_intervals(A):
        for c, d in merge_intervals(B):
            total += max(0.0, min(b, d) - max(a, c))
    return total


def temporal_iou(A, B):
    """Length-based IoU of two interval sets."""
    inter = _intersection_length(A, B)
    union = interval_length(A) + interval_length(B) - inter
    return inter / union if union > 0 else 0.0


def _covers(intervals, t):
    return any(a <= t <= b for a, b in intervals)


# ------------------------------------------------------------ pseudo-labels


@dataclass(frozen=True)
class ReadinessTrainConfig:
    lambda_reg: float = 0.1
    pos_quantile: float = 0.2
    neg_quantile: float = 0.4
    learning_rate: float = 0.05
    epochs: int = 200
    pairs_per_episode: int = 64
    trajectory_stride: int = 4
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.pos_quantile < 1 and 0 < self.neg_quantile < 1):
            raise ValueError("quantiles must lie in (0, 1)")
        if self.pos_quantile + self.neg_quantile > 1:
            raise ValueError("pos_quantile + neg_quantile must not exceed 1")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        check_count(self.pairs_per_episode, "pairs_per_episode")
        check_count(self.trajectory_stride, "trajectory_stride")


@dataclass(frozen=True)
class PseudoLabelSet:
    positive: tuple = ()
    negative: tuple = ()
    source_similarities: tuple = ()
    positive_ids: tuple = ()
    negative_ids: tuple = ()

    @property
    def is_degenerate(self):
        return not self.positive or not self.negative


def build_pseudo_labels(z_l, snapshot, cfg=None):
    """Positive and negative time regions from centroid similarity to ``z_l``.

    The top ``pos_quantile`` fraction of centroids (at least one) contributes
    its time spans to the positive region, the bottom ``neg_quantile`` fraction
    to the negative region. Equal similarities are ordered by centroid index.
    Wherever the two regions overlap, the positive one wins.
    """
    cfg = cfg or ReadinessTrainConfig()
    n = snapshot.n_centroids
    if n < 2:
        return PseudoLabelSet()
    z_l = check_vector(z_l, dim=snapshot.dim, name="z_l")
    sims = cosine_matrix(z_l, snapshot.centroid_vectors)
    order = np.argsort(-sims, kind="stable")
    n_pos = max(1, int(np.floor(cfg.pos_quantile * n)))
    n_neg = max(1, int(np.floor(cfg.neg_quantile * n)))
    n_neg = min(n_neg, n - n_pos)
    pos_ids = order[:n_pos]
    neg_ids = order[n - n_neg:]
    spans = snapshot.centroid_time_span
    P = merge_intervals(spans[j] for j in pos_ids)
    N = merge_intervals(subtract_intervals([spans[j] for j in neg_ids], P))
    return PseudoLabelSet(
        positive=tuple(P),
        negative=tuple(N),
        source_similarities=tuple(float(s) for s in sims),
        positive_ids=tuple(int(j) for j in pos_ids),
        negative_ids=tuple(int(j) for j in neg_ids),
    )


# ------------------------------------------------------------------ losses


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def loss_ctr(r_pos, r_neg):
    """Pairwise contrastive loss ``-log sigmoid(r_pos - r_neg)``."""
    return float(-_log_sigmoid(np.float64(r_pos) - np.float64(r_neg)))


def loss_rdy(trace, pairs, lambda_reg=0.1):
    """Mean contrastive loss over ``pairs`` plus ``lambda_reg`` times total variation.

    ``trace`` is the readiness sequence; ``pairs`` holds ``(i_pos, i_neg)``
    indices into it.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if len(pairs) == 0:
        raise ValueError("loss_rdy needs at least one (positive, negative) pair")
    if lambda_reg > 0 and trace.shape[0] < 2:
        raise ValueError("the coherence term needs a trace of length >= 2")
    idx = np.asarray(pairs, dtype=np.int64)
    ctr = float(np.mean(-_log_sigmoid(trace[idx[:, 0]] - trace[idx[:, 1]])))
    tv = float(np.abs(np.diff(trace)).sum()) if trace.shape[0] > 1 else 0.0
    return ctr + lambda_reg * tv


# ----------------------------------------------------------------- frames


def question_frame(q):
    """Orthonormal basis whose first row is the question direction.

    Built from a Householder reflection, so it is exact, deterministic and
    needs no parameters.
    """
    q = check_vector(q, name="q")
    nq = np.linalg.norm(q)
    if nq == 0:
        raise DegenerateInputError("question embedding is the zero vector")
    d = q.shape[0]
    e1 = np.zeros(d)
    e1[0] = 1.0
    v = q / nq - e1
    nv = np.linalg.norm(v)
    if nv < 1e-12:
        return np.eye(d)
    v /= nv
    return np.eye(d) - 2.0 * np.outer(v, v)


def anchor(z, q):
    """``z`` rotated into the question frame and measured in units of ``|q|``."""
    q = np.asarray(q, dtype=np.float64)
    return question_frame(q) @ np.asarray(z, dtype=np.float64) / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class ReadinessEpisode:
    """One question's representation trajectory plus its pseudo-labels.

    ``features`` rows are already anchored on the question (see :func:`anchor`).
    """

    question_id: str
    times: np.ndarray
    features: np.ndarray
    labels: PseudoLabelSet

    def label_indices(self):
        pos = np.array([i for i, t in enumerate(self.times) if _covers(self.labels.positive, t)], dtype=np.int64)
        neg = np.array([i for i, t in enumerate(self.times) if _covers(self.labels.negative, t)], dtype=np.int64)
        return pos, neg


# ------------------------------------------------------------------ model


class ReadinessModel(BaseEstimator):
    """Learned readiness head with a trigger threshold.

    Parameters
    ----------
    hidden : int
        Width of the hidden tanh layer.
    threshold : float
        Readiness level at or above which the pipeline answers.
    init_scale : float
        Standard deviation of the random initial weights.
    random_state : int
    lambda_reg, pos_quantile, neg_quantile, learning_rate, epochs,
    pairs_per_episode : see :class:`ReadinessTrainConfig`.
    """

    def __init__(
        self,
        hidden=16,
        threshold=0.35,
        init_scale=0.1,
        random_state=0,
        lambda_reg=0.1,
        pos_quantile=0.2,
        neg_quantile=0.4,
        learning_rate=0.05,
        epochs=200,
        pairs_per_episode=64,
    ):
        self.hidden = hidden
        self.threshold = threshold
        self.init_scale = init_scale
        self.random_state = random_state
        self.lambda_reg = lambda_reg
        self.pos_quantile = pos_quantile
        self.neg_quantile = neg_quantile
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.pairs_per_episode = pairs_per_episode

    @property
    def train_config(self):
        return ReadinessTrainConfig(
            lambda_reg=self.lambda_reg,
            pos_quantile=self.pos_quantile,
            neg_quantile=self.neg_quantile,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            pairs_per_episode=self.pairs_per_episode,
            seed=self.random_state,
        )

    # parameters ---------------------------------------------------------

    def initialize(self, dim):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        check_count(self.hidden, "hidden")
        rng = np.random.default_rng(self.random_state)
        s = self.init_scale
        self.dim_ = int(dim)
        self.rdy_embedding_ = rng.normal(0, s, dim)
        self.W1_ = rng.normal(0, s, (self.hidden, 2 * dim))
        self.b1_ = np.zeros(self.hidden)
        self.w2_ = rng.normal(0, s, self.hidden)
        self.b2_ = 0.0
        return self

    _PARAM_NAMES = ("rdy_embedding_", "W1_", "b1_", "w2_", "b2_")

    def get_flat_params(self):
        check_is_fitted(self, "dim_")
        return np.concatenate([np.ravel(getattr(self, n)) for n in self._PARAM_NAMES])

    def set_flat_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        d, h = self.dim_, self.hidden
        sizes = [d, h * 2 * d, h, h, 1]
        parts = np.split(theta, np.cumsum(sizes)[:-1])
        self.rdy_embedding_ = parts[0].copy()
        self.W1_ = parts[1].reshape(h, 2 * d).copy()
        self.b1_ = parts[2].copy()
        self.w2_ = parts[3].copy()
        self.b2_ = float(parts[4][0])
        return self

    # inference ----------------------------------------------------------

    def _forward(self, F):
        """Hidden activations and logits for anchored feature rows ``F``."""
        X = np.hstack([F, np.broadcast_to(self.rdy_embedding_, F.shape)])
        H = np.tanh(X @ self.W1_.T + self.b1_)
        return X, H, H @ self.w2_ + self.b2_

    def score_features(self, F):
        """Readiness for rows that are already anchored on their question."""
        check_is_fitted(self, "dim_")
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        return sigmoid(self._forward(F)[2])

    def readiness_score(self, z_l, q):
        """Readiness in ``[0, 1]`` for one long-term representation."""
        return float(self.score_features(anchor(z_l, q))[0])

    def predict_proba(self, Z, q):
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        F = (question_frame(q) @ Z.T).T / np.linalg.norm(q)
        r = self.score_features(F)
        return np.column_stack([1.0 - r, r])

    def predict(self, Z, q):
        return self.predict_proba(Z, q)[:, 1] >= self.threshold

    # objective ----------------------------------------------------------

    def objective(self, episodes, pairs, lambda_reg=None, theta=None):
        """Mean per-episode readiness loss and its gradient w.r.t. all parameters.

        ``pairs[i]`` is an ``(n, 2)`` index array into ``episodes[i].times``.
        Returns ``(loss, grad, parts)`` where ``parts`` holds the mean
        contrastive and total-variation terms.
        """
        lam = self.lambda_reg if lambda_reg is None else lambda_reg
        if theta is not None:
            saved = self.get_flat_params()
            self.set_flat_params(theta)
        try:
            gW1 = np.zeros_like(self.W1_)
            gb1 = np.zeros_like(self.b1_)
            gw2 = np.zeros_like(self.w2_)
            gb2 = 0.0
            grdy = np.zeros_like(self.rdy_embedding_)
            total = ctr_sum = tv_sum = 0.0
            m = len(episodes)
            for ep, idx in zip(episodes, pairs):
                X, H, logit = self._forward(ep.features)
                R = sigmoid(logit)
                delta = R[idx[:, 0]] - R[idx[:, 1]]
                ctr = float(np.mean(-_log_sigmoid(delta)))
                dR = np.diff(R)
                tv = float(np.abs(dR).sum())
                total += ctr + lam * tv
                ctr_sum += ctr
                tv_sum += tv
                # d ctr / d delta = -(1 - sigmoid(delta)), averaged over pairs
                g_delta = -(1.0 - sigmoid(delta)) / idx.shape[0]
                gR = np.zeros_like(R)
                np.add.at(gR, idx[:, 0], g_delta)
                np.add.at(gR, idx[:, 1], -g_delta)
                s = np.sign(dR)
                gR[1:] += lam * s
                gR[:-1] -= lam * s
                g_logit = gR * R * (1.0 - R) / m
                gw2 += H.T @ g_logit
                gb2 += float(g_logit.sum())
                g_pre = np.outer(g_logit, self.w2_) * (1.0 - H**2)
                gW1 += g_pre.T @ X
                gb1 += g_pre.sum(axis=0)
                grdy += (g_pre @ self.W1_[:, self.dim_:]).sum(axis=0)
            grad = np.concatenate([grdy, gW1.ravel(), gb1, gw2, [gb2]])
            parts = {"ctr": ctr_sum / m, "tv": tv_sum / m}
            return total / m, grad, parts
        finally:
            if theta is not None:
                self.set_flat_params(saved)

    # training -----------------------------------------------------------

    def sample_pairs(self, episodes, rng):
        out = []
        for ep in episodes:
            pos, neg = ep.label_indices()
            k = self.pairs_per_episode
            out.append(np.column_stack([rng.choice(pos, k), rng.choice(neg, k)]))
        return out

    def fit(self, episodes, y=None):
        """Gradient descent on the readiness objective.

        Only the readiness embedding and head weights change. Episodes whose
        pseudo-labels are degenerate, or whose trajectory never enters one
        of the regions, are skipped.
        """
        episodes = list(episodes)
        if not episodes:
            raise ValueError("need at least one training episode")
        usable = []
        for ep in episodes:
            if ep.labels.is_degenerate:
                continue
            pos, neg = ep.label_indices()
            if pos.size and neg.size:
                usable.append(ep)
        if not usable:
            raise TrainingSkippedError("every episode has a degenerate pseudo-label set")
        dim = usable[0].features.shape[1]
        if not hasattr(self, "dim_") or self.dim_ != dim:
            self.initialize(dim)
        rng = np.random.default_rng(self.random_state)
        theta = self.get_flat_params()
        curve = []
        for epoch in range(self.epochs):
            pairs = self.sample_pairs(usable, rng)
            loss, grad, parts = self.objective(usable, pairs)
            curve.append({"epoch": epoch, "ctr": parts["ctr"], "tv": parts["tv"], "total": loss})
            theta = theta - self.learning_rate * grad
            self.set_flat_params(theta)
        self.loss_curve_ = curve
        self.n_train_episodes_ = len(usable)
        return self

    # persistence --------------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "dim_")
        return {
            "schema": "ontime.readiness_model",
            "version": MODEL_SCHEMA_VERSION,
            "dim": self.dim_,
            "hidden": self.hidden,
            "threshold": self.threshold,
            "params": {k: v for k, v in self.get_params().items() if k not in ("hidden", "threshold")},
            "rdy_embedding": self.rdy_embedding_.tolist(),
            "W1": self.W1_.tolist(),
            "b1": self.b1_.tolist(),
            "w2": self.w2_.tolist(),
            "b2": self.b2_,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != "ontime.readiness_model":
            raise ValueError("not a readiness model document")
        if doc.get("version") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        model = cls(hidden=doc["hidden"], threshold=doc["threshold"], **doc.get("params", {}))
        model.dim_ = int(doc["dim"])
        model.rdy_embedding_ = np.array(doc["rdy_embedding"], dtype=np.float64)
        model.W1_ = np.array(doc["W1"], dtype=np.float64)
        model.b1_ = np.array(doc["b1"], dtype=np.float64)
        model.w2_ = np.array(doc["w2"], dtype=np.float64)
        model.b2_ = float(doc["b2"])
        return model

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ----------------------------------------------------------------- trigger


@dataclass
class ReadinessTrace:
    question_id: str
    times: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    t_a: float | None = None
    triggered: bool = False
    closed: bool = False

    def close(self):
        self.closed = True
        return self


def trigger(threshold, trace, t_now, score):
    """Record ``score`` at ``t_now`` and report whether to answer now.

    Returns ``True`` exactly once, on the first score at or above
    ``threshold``; the trigger time is stored as ``trace.t_a``.
    """
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"readiness score must lie in [0, 1], got {score}")
    trace.times.append(float(t_now))
    trace.scores.append(float(score))
    if trace.triggered or trace.closed:
        return False
    if score >= threshold:
        trace.triggered = True
        trace.t_a = float(t_now)
        return True
    return False


def first_trigger(scores, times, threshold):
    """Time of the first score at or above ``threshold``, or ``None``."""
    for s, t in zip(scores, times):
        if s >= threshold:
            return float(t)
    return None
