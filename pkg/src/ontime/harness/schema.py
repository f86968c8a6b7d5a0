"""QA record and answer-log schemas with JSON Lines readers and writers."""

import json
import logging
import math
from dataclasses import dataclass, field

from ..ars import EvidenceWindow, TimedAnswer

logger = logging.getLogger(__name__)

TASKS = ("SSR", "REC", "CRR", "GSD", "CTD")
SCOPES = ("local", "global")

RECORD_FIELDS = {
    "video_id": str,
    "turn_id": str,
    "task": str,
    "question": str,
    "question_time": float,
    "options": (list, type(None)),
    "answer_key": str,
    "window": dict,
    "depends_on": list,
    "scope": str,
}
ANSWER_FIELDS = ("question_id", "predicted_answer", "t_a")


class SchemaError(ValueError):
    """One or more lines of a JSONL file failed validation.

    ``problems`` lists ``(line_number, field, message)`` tuples.
    """

    def __init__(self, path, problems):
        self.path = path
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {f}: {m}" for n, f, m in self.problems[:10])
        more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
        super().__init__(f"{path}: {lines}{more}")

    def to_dict(self):
        return {
            "error": "schema",
            "path": str(self.path),
            "problems": [{"line": n, "field": f, "message": m} for n, f, m in self.problems],
        }


@dataclass(frozen=True)
class QARecord:
    video_id: str
    turn_id: str
    task: str
    question: str
    question_time: float
    answer_key: str
    window: EvidenceWindow
    options: list | None = None
    depends_on: tuple = ()
    scope: str = "local"
    noisy: bool = field(default=False, compare=False)

    @property
    def question_id(self):
        return f"{self.video_id}/{self.turn_id}"

    def to_dict(self):
        return {
            "video_id": self.video_id,
            "turn_id": self.turn_id,
            "task": self.task,
            "question": self.question,
            "question_time": self.question_time,
            "options": self.options,
            "answer_key": self.answer_key,
            "window": {"t_s": self.window.t_s, "t_e": self.window.t_e},
            "depends_on": list(self.depends_on),
            "scope": self.scope,
        }


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def parse_record(obj, lineno=0):
    """Validate one decoded JSON object; return ``(record, problems)``."""
    problems = []
    if not isinstance(obj, dict):
        return None, [(lineno, "<line>", "expected a JSON object")]
    unknown = set(obj) - set(RECORD_FIELDS)
    for k in sorted(unknown):
        problems.append((lineno, k, "unknown field"))
    for name, typ in RECORD_FIELDS.items():
        if name not in obj:
            if name in ("options", "depends_on", "scope"):
                continue
            problems.append((lineno, name, "missing"))
        elif typ is float:
            if not _is_number(obj[name]):
                problems.append((lineno, name, "expected a finite number"))
        elif not isinstance(obj[name], typ):
            problems.append((lineno, name, f"wrong type {type(obj[name]).__name__}"))
    if problems:
        return None, problems
    if obj["task"] not in TASKS:
        problems.append((lineno, "task", f"must be one of {TASKS}"))
    scope = obj.get("scope", "local")
    if scope not in SCOPES:
        problems.append((lineno, "scope", f"must be one of {SCOPES}"))
    w = obj["window"]
    if set(w) != {"t_s", "t_e"} or not all(_is_number(w.get(k)) for k in ("t_s", "t_e")):
        problems.append((lineno, "window", "expected {t_s, t_e} numbers"))
    deps = obj.get("depends_on", [])
    if not all(isinstance(d, str) for d in deps):
        problems.append((lineno, "depends_on", "expected a list of turn ids"))
    if problems:
        return None, problems
    window = EvidenceWindow(float(w["t_s"]), float(w["t_e"]))
    noisy = window.is_noisy
    qt = float(obj["question_time"])
    if qt < 0:
        problems.append((lineno, "question_time", "must be non-negative"))
        return None, problems
    if not window.is_sentinel and qt > window.t_s:
        # allowed, but the question is no longer proactive
        noisy = True
    rec = QARecord(
        video_id=obj["video_id"],
        turn_id=obj["turn_id"],
        task=obj["task"],
        question=obj["question"],
        question_time=qt,
        answer_key=obj["answer_key"],
        window=window,
        options=obj.get("options"),
        depends_on=tuple(deps),
        scope=scope,
        noisy=noisy,
    )
    return rec, []


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line), None
            except json.JSONDecodeError as exc:
                yield lineno, None, f"invalid JSON: {exc.msg}"


def load_dataset(path):
    """Read and validate a QA dataset.

    Windows with ``t_s > t_e`` are kept with ``noisy=True`` and a logged
    warning. Duplicate ``(video_id, turn_id)`` pairs and turns that depend on
    a later or unknown turn are errors.
    """
    records, problems = [], []
    seen = {}
    turn_order = {}
    for lineno, obj, err in _iter_json_lines(path):
        if err:
            problems.append((lineno, "<line>", err))
            continue
        rec, probs = parse_record(obj, lineno)
        if probs:
            problems.extend(probs)
            continue
        if rec.question_id in seen:
            problems.append((lineno, "turn_id", f"duplicate of line {seen[rec.question_id]}"))
            continue
        earlier = turn_order.setdefault(rec.video_id, set())
        missing = [d for d in rec.depends_on if d not in earlier]
        if missing:
            problems.append((lineno, "depends_on", f"references no earlier turn: {missing}"))
            continue
        earlier.add(rec.turn_id)
        seen[rec.question_id] = lineno
        if rec.window.is_noisy:
            logger.warning("%s line %d: t_s > t_e, record kept and flagged noisy", path, lineno)
        records.append(rec)
    if problems:
        raise SchemaError(path, problems)
    return records


def save_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_answers(path):
    answers, problems = [], []
    seen = {}
    for lineno, obj, err in _iter_json_lines(path):
        if err:
            problems.append((lineno, "<line>", err))
            continue
        if not isinstance(obj, dict):
            problems.append((lineno, "<line>", "expected a JSON object"))
            continue
        bad = False
        for k in sorted(set(obj) - set(ANSWER_FIELDS)):
            problems.append((lineno, k, "unknown field"))
            bad = True
        for k in ANSWER_FIELDS:
            if k not in obj:
                problems.append((lineno, k, "missing"))
                bad = True
        if bad:
            continue
        qid, pred, t_a = obj["question_id"], obj["predicted_answer"], obj["t_a"]
        if not isinstance(qid, str):
            problems.append((lineno, "question_id", "expected a string"))
            continue
        if pred is not None and not isinstance(pred, str):
            problems.append((lineno, "predicted_answer", "expected a string or null"))
            continue
        if t_a is not None and (not _is_number(t_a) or t_a < 0):
            problems.append((lineno, "t_a", "expected a non-negative number or null"))
            continue
        if qid in seen:
            problems.append((lineno, "question_id", f"duplicate of line {seen[qid]}"))
            continue
        seen[qid] = lineno
        answers.append(TimedAnswer(qid, pred, None if t_a is None else float(t_a)))
    if problems:
        raise SchemaError(path, problems)
    return answers


def save_answers(answers, path):
    with open(path, "w", encoding="utf-8") as fh:
        for a in answers:
            fh.write(
                json.dumps(
                    {"question_id": a.question_id, "predicted_answer": a.predicted_answer, "t_a": a.t_a},
                    sort_keys=True,
                )
                + "\n"
            )
