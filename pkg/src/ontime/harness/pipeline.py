"""End-to-end streaming loop, baseline policies and readiness training."""

import copy
from dataclasses import dataclass

import numpy as np

from ..ars import TimedAnswer
from ..memory import ContextEntry, HierarchicalMemory
from ..readiness import (
    ReadinessEpisode,
    ReadinessModel,
    ReadinessTrace,
    ReadinessTrainConfig,
    build_pseudo_labels,
    question_frame,
    trigger,
)
from ..reasoner import CoarseToFineReasoner

__all__ = [
    "POLICIES",
    "PipelineConfigError",
    "Engine",
    "toy_answer",
    "run_pipeline",
    "run_suite",
    "readiness_episodes",
    "train_readiness",
]

POLICIES = ("readiness", "answer_immediately", "answer_at_end", "oracle_timing")


class PipelineConfigError(ValueError):
    """Engine components disagree with each other or with the episode."""


@dataclass
class Engine:
    """Memory parameters plus the frozen reasoner and the readiness model.

    ``memory`` is a template; every episode runs on a fresh clone.
    """

    memory: HierarchicalMemory
    reasoner: CoarseToFineReasoner
    readiness: ReadinessModel | None = None
    stride: int = 1

    @classmethod
    def default(cls, dim, readiness=None, **memory_params):
        reasoner = CoarseToFineReasoner().fit(np.zeros((1, dim)))
        return cls(HierarchicalMemory(**memory_params), reasoner, readiness)

    def check(self, dim, policy):
        if policy not in POLICIES:
            raise PipelineConfigError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        if getattr(self.reasoner, "dim_", None) != dim:
            raise PipelineConfigError(
                f"reasoner dimension {getattr(self.reasoner, 'dim_', None)} != episode dimension {dim}"
            )
        if policy == "readiness":
            if self.readiness is None or getattr(self.readiness, "dim_", None) is None:
                raise PipelineConfigError("readiness policy needs a fitted readiness model")
            if self.readiness.dim_ != dim:
                raise PipelineConfigError(f"readiness dimension {self.readiness.dim_} != episode dimension {dim}")
        if self.stride < 1:
            raise PipelineConfigError("stride must be >= 1")

    def fresh_memory(self, dim):
        mem = HierarchicalMemory(**self.memory.get_params())
        mem.reset(dim)
        return mem


def toy_answer(q, snapshot, state, episode, proj):
    """Label of the scene behind the best-scoring retrieved item.

    Candidates are the retrieved centroids (placed in time by their mean
    timestamp) and the frames still in the short-term buffer.
    """
    vecs, times = [], []
    ids = list(state.retrieved_centroid_ids)
    if ids:
        vecs.append(snapshot.centroid_vectors[ids])
        times.append(snapshot.centroid_time_mean[ids])
    if snapshot.frames.shape[0]:
        vecs.append(snapshot.frames)
        times.append(snapshot.frame_times)
    if not vecs:
        return None
    V = np.vstack(vecs)
    T = np.concatenate(times)
    best = int(np.argmax(V @ (proj.centroid @ q)))
    return episode.label_at(float(T[best]))


def _answer(engine, q, snap, state, episode):
    return toy_answer(q, snap, state, episode, engine.reasoner.projections_)


def run_pipeline(episode, engine, policy="readiness", context=True):
    """Stream ``episode`` through ``engine`` and answer every question once.

    Returns ``(answers, traces)``: one :class:`TimedAnswer` per record, in
    record order, and a ``{question_id: ReadinessTrace}`` dict (empty score
    lists for the baseline policies).
    """
    engine.check(episode.dim, policy)
    mem = engine.fresh_memory(episode.dim)
    records = sorted(episode.records, key=lambda r: (r.question_time, r.turn_id))
    traces = {r.question_id: ReadinessTrace(r.question_id) for r in records}
    answers = {}
    t_end = episode.end_time
    n = episode.frames.shape[0]

    if policy == "oracle_timing":
        for r in records:
            answers[r.question_id] = TimedAnswer(r.question_id, r.answer_key, r.window.t_s)
            traces[r.question_id].t_a = r.window.t_s
            traces[r.question_id].triggered = True
        return [answers[r.question_id] for r in episode.records], traces

    threshold = engine.readiness.threshold if policy == "readiness" else None
    next_q = 0
    pending = []
    for i in range(n):
        t = float(episode.times[i])
        mem.ingest_frame(episode.frames[i], t)
        while next_q < len(records) and records[next_q].question_time <= t:
            pending.append(records[next_q])
            next_q += 1
        last = i == n - 1
        if not pending:
            continue
        if policy == "answer_at_end" and not last:
            continue
        if policy == "readiness" and i % engine.stride and not last:
            continue
        snap = mem.snapshot()
        still = []
        for r in pending:
            q = episode.queries[r.question_id]
            bank = mem.context_ if context else None
            state = engine.reasoner.reason(q, snap, context=bank)
            if policy == "readiness":
                score = engine.readiness.readiness_score(state.z_l, q)
                fire = trigger(threshold, traces[r.question_id], t, score)
                t_a = t
            elif policy == "answer_immediately":
                fire, t_a = True, r.question_time
            else:
                fire, t_a = True, t_end
            if not fire:
                still.append(r)
                continue
            traces[r.question_id].t_a = t_a
            traces[r.question_id].triggered = True
            answers[r.question_id] = TimedAnswer(r.question_id, _answer(engine, q, snap, state, episode), t_a)
            if context:
                mem.context_.store(ContextEntry(q, state.z_l, r.turn_id))
        pending = still
    for r in records:
        if r.question_id not in answers:
            traces[r.question_id].close()
            answers[r.question_id] = TimedAnswer(r.question_id, None, None)
    return [answers[r.question_id] for r in episode.records], traces


def run_suite(episodes, engine, policy="readiness", context=True):
    """Concatenated answers and records over episodes, in episode order."""
    answers, records, traces = [], [], {}
    for ep in episodes:
        a, tr = run_pipeline(ep, engine, policy, context)
        answers.extend(a)
        records.extend(ep.records)
        traces.update(tr)
    return answers, records, traces


def readiness_episodes(episode, engine, cfg=None):
    """Training data for one simulated episode, one item per question.

    The trajectory is ``z_l`` from the question time to stream end, sampled
    every ``cfg.trajectory_stride`` frames, without context fusion. Pseudo-labels
    come from the memory state at stream end, after the short-term buffer has
    been flushed into the centroid level, so every frame has a time span to
    vote with.
    """
    cfg = cfg or ReadinessTrainConfig()
    dim = episode.dim
    if getattr(engine.reasoner, "dim_", None) != dim:
        raise PipelineConfigError("reasoner dimension does not match the episode")
    mem = engine.fresh_memory(dim)
    recs = list(episode.records)
    queries = [np.asarray(episode.queries[r.question_id], dtype=np.float64) for r in recs]
    frames_of = [question_frame(q) / np.linalg.norm(q) for q in queries]
    feats = [[] for _ in recs]
    times = [[] for _ in recs]
    seen = [0] * len(recs)
    for i in range(episode.frames.shape[0]):
        t = float(episode.times[i])
        mem.ingest_frame(episode.frames[i], t)
        snap = None
        for k, r in enumerate(recs):
            if t < r.question_time:
                continue
            if seen[k] % cfg.trajectory_stride == 0:
                snap = snap or mem.snapshot()
                feats[k].append(frames_of[k] @ engine.reasoner.reason(queries[k], snap).z_l)
                times[k].append(t)
            seen[k] += 1
    final = copy.deepcopy(mem)
    final.flush()
    end_snap = final.snapshot()
    out = []
    for k, r in enumerate(recs):
        z_end = engine.reasoner.reason(queries[k], end_snap).z_l
        labels = build_pseudo_labels(z_end, end_snap, cfg)
        F = np.asarray(feats[k]).reshape(-1, dim)
        out.append(ReadinessEpisode(r.question_id, np.asarray(times[k]), F, labels))
    return out


def train_readiness(episodes, engine, model=None, cfg=None):
    """Fit the readiness head on pseudo-labelled trajectories from ``episodes``.

    Only the readiness model changes; the reasoner is read, never written.
    Returns ``(model, loss_curve, training_items)``.
    """
    cfg = cfg or ReadinessTrainConfig()
    if model is None:
        model = ReadinessModel(
            random_state=cfg.seed,
            lambda_reg=cfg.lambda_reg,
            pos_quantile=cfg.pos_quantile,
            neg_quantile=cfg.neg_quantile,
            learning_rate=cfg.learning_rate,
            epochs=cfg.epochs,
            pairs_per_episode=cfg.pairs_per_episode,
        )
    items = []
    for ep in episodes:
        items.extend(readiness_episodes(ep, engine, cfg))
    model.fit(items)
    return model, model.loss_curve_, items

