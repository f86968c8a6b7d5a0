"""Accuracy / ARS reports, penalty-sweep tables and their file formats."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ars import ArsConfig, ars_aggregate, effective_accuracy, per_question_ars, resolve_tau

__all__ = [
    "EmptyReportError",
    "ReportRow",
    "ArsReport",
    "normalize_answer",
    "evaluate",
    "write_report",
    "write_sweep_csv",
    "write_sweep_svg",
]

REPORT_SCHEMA_VERSION = 1


class EmptyReportError(ValueError):
    """No answer matched any record."""


@dataclass(frozen=True)
class ReportRow:
    task: str
    n: int
    acc: float
    ars: float
    acc_e: float

    def to_dict(self):
        return {"task": self.task, "n": self.n, "acc": self.acc, "ars": self.ars, "acc_e": self.acc_e}


@dataclass(frozen=True)
class ArsReport:
    rows: tuple
    average: ReportRow
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": "ontime.report",
            "version": REPORT_SCHEMA_VERSION,
            "rows": [r.to_dict() for r in self.rows],
            "average": self.average.to_dict(),
            "metadata": dict(self.metadata),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def normalize_answer(s):
    return None if s is None else " ".join(str(s).split()).casefold()


def evaluate(records, answers, cfg=None, tau=None):
    """Per-task and overall accuracy, ARS and effective accuracy.

    Records without an answer count as wrong and never answered. Answers for
    unknown questions are ignored and counted in the metadata.
    """
    cfg = cfg or ArsConfig()
    records = list(records)
    answers = list(answers)
    known = {r.question_id for r in records}
    matched = [a for a in answers if a.question_id in known]
    if not matched:
        raise EmptyReportError("no answer matches any dataset record")
    by_id = {a.question_id: a for a in matched}
    correct = {}
    for r in records:
        a = by_id.get(r.question_id)
        correct[r.question_id] = bool(
            a is not None and a.t_a is not None and normalize_answer(a.predicted_answer) == normalize_answer(r.answer_key)
        )
    ars, per_task_ars = ars_aggregate(matched, records, cfg, tau)
    rows = []
    for task in sorted({r.task for r in records}):
        ids = [r.question_id for r in records if r.task == task]
        acc = float(np.mean([correct[q] for q in ids]))
        t_ars = per_task_ars.get(task, 0.0)
        rows.append(ReportRow(task, len(ids), acc, t_ars, effective_accuracy(acc, t_ars)))
    acc = float(np.mean([correct[r.question_id] for r in records]))
    average = ReportRow("Average", len(records), acc, ars, effective_accuracy(acc, ars))
    taus = resolve_tau(records, cfg, tau)
    tau_meta = sorted(set(taus.values()))
    metadata = {
        "tau": tau_meta[0] if len(tau_meta) == 1 else {r.task: taus[r.question_id] for r in records},
        "gamma_e": cfg.gamma_e,
        "gamma_l": cfg.gamma_l,
        "epsilon": cfg.epsilon,
        "mode": cfg.mode,
        "tau_scope": cfg.tau_scope,
        "n_records": len(records),
        "n_answers": len(answers),
        "n_matched": len(matched),
        "n_unanswered": sum(1 for r in records if by_id.get(r.question_id) is None or by_id[r.question_id].t_a is None),
        "n_unmatched_answers": len(answers) - len(matched),
    }
    return ArsReport(tuple(rows), average, metadata)


def _svg_bars(report):
    rows = list(report.rows) + [report.average]
    w, h, pad = 60 * len(rows) + 80, 240, 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">']
    for i, r in enumerate(rows):
        x0 = pad + 60 * i
        for k, (val, colour) in enumerate(((r.acc, "#4c72b0"), (r.ars, "#dd8452"), (r.acc_e, "#55a868"))):
            bh = (h - 2 * pad) * val
            out.append(
                f'<rect x="{x0 + 16 * k}" y="{h - pad - bh:.2f}" width="14" height="{bh:.2f}" fill="{colour}"/>'
            )
        out.append(f'<text x="{x0}" y="{h - pad + 14}">{r.task}</text>')
    out.append(f'<text x="{pad}" y="16">Acc / ARS / Acc_e</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(report, out_dir, svg=False):
    """Write ``report.json`` and ``report.csv`` (and ``report.svg``); return the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "report.json", out_dir / "report.csv"]
    paths[0].write_text(report.to_json(), encoding="utf-8")
    with open(paths[1], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "n", "acc", "ars", "acc_e"])
        for r in list(report.rows) + [report.average]:
            w.writerow([r.task, r.n, repr(r.acc), repr(r.ars), repr(r.acc_e)])
    if svg:
        paths.append(out_dir / "report.svg")
        paths[2].write_text(_svg_bars(report), encoding="utf-8")
    return paths


def write_sweep_csv(grid, gamma_e_grid, gamma_l_grid, path):
    """Long-format sweep table, one ``gamma_e,gamma_l,ars`` row per cell."""
    grid = np.asarray(grid)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma_e", "gamma_l", "ars"])
        for i, ge in enumerate(gamma_e_grid):
            for j, gl in enumerate(gamma_l_grid):
                w.writerow([repr(float(ge)), repr(float(gl)), repr(float(grid[i, j]))])
    return Path(path)


def write_sweep_svg(grid, gamma_e_grid, gamma_l_grid, path):
    """Heatmap with gamma_e on rows and gamma_l on columns."""
    grid = np.asarray(grid)
    cell, pad = 40, 50
    nr, nc = grid.shape
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{pad + cell * nc + 10}" '
        f'height="{pad + cell * nr + 10}" font-family="sans-serif" font-size="9">'
    ]
    for i in range(nr):
        out.append(f'<text x="2" y="{pad + cell * i + cell / 2:.1f}">{gamma_e_grid[i]:g}</text>')
        for j in range(nc):
            v = float(np.clip(grid[i, j], 0, 1))
            shade = int(255 * (1 - v))
            out.append(
                f'<rect x="{pad + cell * j}" y="{pad + cell * i}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)"><title>{v:.4f}</title></rect>'
            )
    for j in range(nc):
        out.append(f'<text x="{pad + cell * j + 4}" y="{pad - 6}">{gamma_l_grid[j]:g}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
    return Path(path)
