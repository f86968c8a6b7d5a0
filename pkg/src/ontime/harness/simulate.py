"""Synthetic embedding streams with planted evidence windows.

A stream is a sequence of scenes. Each scene has a latent direction, and its
frames are that direction plus isotropic Gaussian noise. Each question targets
one scene: its embedding is a noisy copy of the scene direction, it is asked
``lead`` seconds before the scene starts, and its evidence window is the
scene's span.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..ars import EvidenceWindow
from ..readiness import ReadinessTrainConfig
from .schema import TASKS, QARecord, load_dataset, save_dataset

__all__ = [
    "SimConfig",
    "Scene",
    "Episode",
    "simulate_stream",
    "SUITES",
    "load_suite",
    "suite_train_config",
    "save_episode",
    "load_episode",
]


@dataclass(frozen=True)
class SimConfig:
    dim: int = 32
    stream_length: int | None = None
    frame_rate: float = 1.0
    scene_count: int = 7
    scene_length: tuple = (60, 100)
    noise_sigma: float = 0.2
    questions_per_stream: int = 3
    evidence_lead: tuple = (20, 50)
    query_noise: float = 0.4
    min_query_cosine: float = 0.8
    embedding_scale: float = 1.0
    chain_prob: float = 0.0
    video_id: str = "sim"
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "scene_count", "questions_per_stream"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.noise_sigma < 0 or self.query_noise < 0:
            raise ValueError("noise levels must be >= 0")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be > 0")
        object.__setattr__(self, "scene_length", tuple(self.scene_length))
        object.__setattr__(self, "evidence_lead", tuple(self.evidence_lead))
        lo, hi = self.scene_length
        if not 1 <= lo <= hi:
            raise ValueError("scene_length must be an increasing positive range")
        if self.questions_per_stream > max(self.scene_count - 2, 0):
            raise ValueError("need scene_count >= questions_per_stream + 2")


@dataclass(frozen=True, eq=False)
class Scene:
    label: str
    start: float
    end: float
    vector: np.ndarray

    def contains(self, t):
        return self.start <= t < self.end


@dataclass(eq=False)
class Episode:
    video_id: str
    frames: np.ndarray
    times: np.ndarray
    scenes: list
    records: list
    queries: dict
    config: SimConfig = field(default_factory=SimConfig)

    @property
    def dim(self):
        return self.frames.shape[1]

    @property
    def end_time(self):
        return float(self.times[-1])

    def label_at(self, t):
        for s in self.scenes:
            if s.contains(t):
                return s.label
        return self.scenes[-1].label if t >= self.scenes[-1].end else self.scenes[0].label

    def fingerprint(self):
        """Bytes that change whenever anything generated changes."""
        parts = [self.frames.tobytes(), self.times.tobytes()]
        parts += [self.queries[k].tobytes() for k in sorted(self.queries)]
        parts.append(json.dumps([r.to_dict() for r in self.records], sort_keys=True).encode())
        return b"".join(parts)


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def simulate_stream(cfg=None):
    """Generate one episode; identical configs give bit-identical output."""
    cfg = cfg or SimConfig()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    dt = 1.0 / cfg.frame_rate
    lo, hi = cfg.scene_length

    lengths = []
    total = 0
    while True:
        L = int(rng.integers(lo, hi + 1))
        if cfg.stream_length is not None:
            L = min(L, cfg.stream_length - total)
            if L <= 0:
                break
        lengths.append(L)
        total += L
        if cfg.stream_length is None and len(lengths) == cfg.scene_count:
            break

    scenes, frames = [], []
    pos = 0
    for i, L in enumerate(lengths):
        vec = _unit(rng, d) * cfg.embedding_scale
        scenes.append(Scene(f"S{i:02d}", pos * dt, (pos + L) * dt, vec))
        noise = rng.normal(size=(L, d)) * (cfg.noise_sigma * cfg.embedding_scale / np.sqrt(d))
        frames.append(vec + noise)
        pos += L
    frames = np.vstack(frames)
    times = np.arange(frames.shape[0], dtype=np.float64) * dt

    # the first scene leaves room for a lead time, the last one for late answers
    candidates = np.arange(1, len(scenes) - 1)
    n_q = min(cfg.questions_per_stream, candidates.size)
    targets = np.sort(rng.choice(candidates, size=n_q, replace=False))
    records, queries = [], {}
    for k, si in enumerate(targets):
        sc = scenes[si]
        lead = float(rng.integers(cfg.evidence_lead[0], cfg.evidence_lead[1] + 1)) * dt
        qt = max(0.0, sc.start - lead)
        base = sc.vector / cfg.embedding_scale
        while True:
            q = base + rng.normal(size=d) * (cfg.query_noise / np.sqrt(d))
            if q @ base / np.linalg.norm(q) >= cfg.min_query_cosine:
                break
        deps = ()
        if k > 0 and rng.random() < cfg.chain_prob:
            deps = (records[-1].turn_id,)
        rec = QARecord(
            video_id=cfg.video_id,
            turn_id=f"q{k:02d}",
            task=TASKS[(cfg.seed + k) % len(TASKS)],
            question=f"Tell me when scene {sc.label} shows up.",
            question_time=qt,
            answer_key=sc.label,
            window=EvidenceWindow(sc.start, sc.end - dt),
            depends_on=deps,
            scope="local",
        )
        records.append(rec)
        queries[rec.question_id] = q * cfg.embedding_scale
    return Episode(cfg.video_id, frames, times, scenes, records, queries, cfg)


# Suite tiers: fixed configs, seeds and readiness-training overrides.
# Acceptance thresholds refer to "easy".
SUITES = {
    "easy": {"seeds": list(range(20)), "config": SimConfig(), "train": {"learning_rate": 2.0}},
    "medium": {
        "seeds": list(range(100, 120)),
        "config": SimConfig(scene_length=(40, 80), noise_sigma=0.5, query_noise=0.6, evidence_lead=(10, 40)),
        "train": {"learning_rate": 2.0},
    },
    "hard": {
        "seeds": list(range(200, 220)),
        "config": SimConfig(
            scene_count=10, scene_length=(25, 60), noise_sigma=0.8, query_noise=0.7, evidence_lead=(5, 30), chain_prob=0.3
        ),
        "train": {"learning_rate": 2.0},
    },
}


def suite_train_config(name="easy", **overrides):
    """Readiness training config used with a suite tier."""
    return ReadinessTrainConfig(**{**SUITES[name].get("train", {}), **overrides})


def load_suite(name="easy", **overrides):
    tier = SUITES[name]
    base = asdict(tier["config"])
    base.update(overrides)
    out = []
    for s in tier["seeds"]:
        cfg = SimConfig(**{**base, "seed": s, "video_id": f"{name}-{s:03d}"})
        out.append(simulate_stream(cfg))
    return out


def save_episode(ep, directory):
    """Write ``<video_id>.npz`` (vectors) and ``<video_id>.jsonl`` (records)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    qids = sorted(ep.queries)
    np.savez(
        directory / f"{ep.video_id}.npz",
        frames=ep.frames,
        times=ep.times,
        scene_vectors=np.stack([s.vector for s in ep.scenes]),
        scene_bounds=np.array([[s.start, s.end] for s in ep.scenes]),
        scene_labels=np.array([s.label for s in ep.scenes]),
        query_ids=np.array(qids),
        queries=np.stack([ep.queries[k] for k in qids]) if qids else np.zeros((0, ep.dim)),
        config=np.array(json.dumps(asdict(ep.config), sort_keys=True)),
    )
    save_dataset(ep.records, directory / f"{ep.video_id}.jsonl")


def load_episode(npz_path):
    npz_path = Path(npz_path)
    with np.load(npz_path, allow_pickle=False) as z:
        scenes = [
            Scene(str(lbl), float(b[0]), float(b[1]), v)
            for lbl, b, v in zip(z["scene_labels"], z["scene_bounds"], z["scene_vectors"])
        ]
        queries = {str(k): v for k, v in zip(z["query_ids"], z["queries"])}
        cfg = SimConfig(**json.loads(str(z["config"])))
        records = load_dataset(npz_path.with_suffix(".jsonl"))
        return Episode(cfg.video_id, z["frames"], z["times"], scenes, records, queries, cfg)
