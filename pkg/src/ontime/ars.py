"""Answer Readiness Score: timing-aware scoring of streamed answers.

An answer at time ``t_a`` to a question whose evidence spans ``[t_s, t_e]``
is scored by an early penalty (sigmoid-shaped, sharpness ``gamma_e``) times a
late penalty (linear ramp, slope ``gamma_l``). Both are measured in units of
the median evidence duration ``tau``. The score of a set of questions is the
mean over questions, or over multi-turn chains when turns depend on each
other.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .vecmath import SmoothingConfig, sigmoid, smooth_max, smooth_min

__all__ = [
    "ArsConfig",
    "EvidenceWindow",
    "TimedAnswer",
    "ArsValidationError",
    "median_evidence_duration",
    "early_penalty",
    "late_penalty",
    "ars_single",
    "ars_aggregate",
    "effective_accuracy",
    "penalty_sweep",
    "answer_chains",
]


class ArsValidationError(ValueError):
    """Answers and records do not line up."""


@dataclass(frozen=True)
class ArsConfig:
    gamma_e: float = 6.0
    gamma_l: float = 1.0
    epsilon: float = 1e-6
    tau_scope: str = "dataset"
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    unanswered: str = "zero"

    def __post_init__(self):
        for name in ("gamma_e", "gamma_l", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.tau_scope not in ("dataset", "per_task"):
            raise ValueError("tau_scope must be 'dataset' or 'per_task'")
        if self.unanswered not in ("zero", "exclude"):
            raise ValueError("unanswered must be 'zero' or 'exclude'")
        if isinstance(self.smoothing, dict):
            object.__setattr__(self, "smoothing", SmoothingConfig(**self.smoothing))

    @property
    def mode(self):
        return "hard" if self.smoothing.hard_mode else f"smooth(beta={self.smoothing.beta:g})"


@dataclass(frozen=True)
class EvidenceWindow:
    t_s: float
    t_e: float

    @property
    def is_sentinel(self):
        """Unanswerable question marker, ``t_s = t_e = 0``."""
        return self.t_s == 0 and self.t_e == 0

    @property
    def is_noisy(self):
        return self.t_s > self.t_e

    @property
    def duration(self):
        return max(0.0, self.t_e - self.t_s)


@dataclass(frozen=True)
class TimedAnswer:
    question_id: str
    predicted_answer: str | None
    t_a: float | None

    @property
    def answered(self):
        return self.t_a is not None


def median_evidence_duration(windows, scope="dataset", tasks=None):
    """Median of ``t_e - t_s``.

    An even count averages the two middle values. Unanswerable sentinels are
    left out unless every window is one, in which case the result is 0.
    With ``scope='per_task'``, ``tasks`` gives the task tag of each window and
    a dict ``{task: tau}`` is returned.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("median evidence duration of an empty window list")
    if scope == "per_task":
        if tasks is None or len(tasks) != len(windows):
            raise ValueError("per_task scope needs one task tag per window")
        groups = defaultdict(list)
        for w, task in zip(windows, tasks):
            groups[task].append(w)
        return {task: median_evidence_duration(ws) for task, ws in groups.items()}
    if scope != "dataset":
        raise ValueError(f"unknown scope {scope!r}")
    durations = [w.duration for w in windows if not w.is_sentinel]
    if not durations:
        return 0.0
    return float(np.median(durations))


def early_penalty(t_a, t_s, tau, cfg=None):
    """``min(1, 2 sigmoid(gamma_e (t_a - t_s) / (tau + eps)))`` or its smooth version."""
    cfg = cfg or ArsConfig()
    x = cfg.gamma_e * (t_a - t_s) / (tau + cfg.epsilon)
    v = 2.0 * sigmoid(x)
    return min(1.0, max(0.0, smooth_min(1.0, v, cfg.smoothing)))


def late_penalty(t_a, t_e, tau, cfg=None):
    """``min(1, max(0, 1 - gamma_l (t_a - t_e) / (tau + eps)))`` or its smooth version."""
    cfg = cfg or ArsConfig()
    x = 1.0 - cfg.gamma_l * (t_a - t_e) / (tau + cfg.epsilon)
    # the ramp can reach ~1e12 for sentinel windows; keep the exponentials finite
    x = max(min(x, 1e6), -1e6)
    v = smooth_min(1.0, smooth_max(0.0, x, cfg.smoothing), cfg.smoothing)
    return min(1.0, max(0.0, v))


def ars_single(answer, window, tau, cfg=None):
    """Timing score of one answer; ``0`` if it was never given.

    Unanswerable windows (``t_s = t_e = 0``) use ``tau = 0`` so any later
    answer scores close to zero.
    """
    cfg = cfg or ArsConfig()
    t_a = answer.t_a if isinstance(answer, TimedAnswer) else answer
    if t_a is None:
        return 0.0 if cfg.unanswered == "zero" else math.nan
    if window.is_sentinel:
        tau = 0.0
    return early_penalty(t_a, window.t_s, tau, cfg) * late_penalty(t_a, window.t_e, tau, cfg)


def effective_accuracy(acc, ars):
    if not (0.0 <= acc <= 1.0 and 0.0 <= ars <= 1.0):
        raise ValueError("accuracy and ARS must lie in [0, 1]")
    return acc * ars


def answer_chains(records):
    """Group question ids into multi-turn chains.

    Turns are linked through ``depends_on`` within a video. Returns a list of
    id lists in first-appearance order.
    """
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    by_turn = {}
    for r in records:
        parent[r.question_id] = r.question_id
        by_turn[(r.video_id, r.turn_id)] = r.question_id
    for r in records:
        for dep in r.depends_on:
            other = by_turn.get((r.video_id, dep))
            if other is not None:
                a, b = find(r.question_id), find(other)
                if a != b:
                    parent[a] = b
    chains = {}
    for r in records:
        chains.setdefault(find(r.question_id), []).append(r.question_id)
    return list(chains.values())


def _match(answers, records, allow_unmatched):
    by_id = {r.question_id: r for r in records}
    matched = {}
    unmatched = []
    for a in answers:
        if a.question_id in by_id:
            matched[a.question_id] = a
        else:
            unmatched.append(a.question_id)
    if unmatched and not allow_unmatched:
        raise ArsValidationError(f"answers with no matching record: {sorted(unmatched)}")
    return matched, unmatched


def resolve_tau(records, cfg, tau=None):
    """Per-record tau, from an explicit value or the configured scope."""
    if tau is not None:
        if isinstance(tau, dict):
            return {r.question_id: tau[r.task] for r in records}
        return {r.question_id: float(tau) for r in records}
    windows = [r.window for r in records]
    if cfg.tau_scope == "per_task":
        by_task = median_evidence_duration(windows, "per_task", [r.task for r in records])
        return {r.question_id: by_task[r.task] for r in records}
    t = median_evidence_duration(windows)
    return {r.question_id: t for r in records}


def per_question_ars(answers, records, cfg=None, tau=None, allow_unmatched=False):
    cfg = cfg or ArsConfig()
    matched, _ = _match(answers, records, allow_unmatched)
    taus = resolve_tau(records, cfg, tau)
    out = {}
    for r in records:
        a = matched.get(r.question_id, TimedAnswer(r.question_id, None, None))
        out[r.question_id] = ars_single(a, r.window, taus[r.question_id], cfg)
    return out


def ars_aggregate(answers, records, cfg=None, tau=None, allow_unmatched=False):
    """Mean ARS over chains, plus the same mean split by task tag.

    Returns ``(ars, per_task)``. Records with no answer count as never
    answered. A chain's value counts towards every task tag among its turns.
    """
    cfg = cfg or ArsConfig()
    records = list(records)
    values = per_question_ars(answers, records, cfg, tau, allow_unmatched)
    task_of = {r.question_id: r.task for r in records}
    chain_vals = []
    per_task = defaultdict(list)
    for chain in answer_chains(records):
        vs = [values[q] for q in chain if not math.isnan(values[q])]
        if not vs:
            continue
        v = float(np.mean(vs))
        chain_vals.append(v)
        for task in dict.fromkeys(task_of[q] for q in chain):
            per_task[task].append(v)
    if not chain_vals:
        return 0.0, {}
    return float(np.mean(chain_vals)), {k: float(np.mean(v)) for k, v in sorted(per_task.items())}


def penalty_sweep(answers, records, gamma_e_grid, gamma_l_grid, cfg=None, tau=None):
    """ARS for every ``(gamma_e, gamma_l)`` pair; rows follow ``gamma_e_grid``."""
    cfg = cfg or ArsConfig()
    gamma_e_grid = list(gamma_e_grid)
    gamma_l_grid = list(gamma_l_grid)
    if not gamma_e_grid or not gamma_l_grid:
        raise ValueError("sweep grids must be nonempty")
    grid = np.zeros((len(gamma_e_grid), len(gamma_l_grid)))
    for i, ge in enumerate(gamma_e_grid):
        for j, gl in enumerate(gamma_l_grid):
            c = ArsConfig(ge, gl, cfg.epsilon, cfg.tau_scope, cfg.smoothing, cfg.unanswered)
            grid[i, j] = ars_aggregate(answers, records, c, tau)[0]
    return grid
