"""Command-line entry point: simulate, train, run, eval, sweep, bench."""

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSIONS, __version__
from .ars import penalty_sweep
from .config import ConfigError, load_config
from .harness.bench import bench, write_bench_csv
from .harness.pipeline import Engine, run_pipeline, train_readiness
from .harness.report import EmptyReportError, evaluate, write_report, write_sweep_csv, write_sweep_svg
from .harness.schema import SchemaError, load_answers, load_dataset, save_answers, save_dataset
from .harness.simulate import SUITES, SimConfig, load_episode, load_suite, save_episode, simulate_stream
from .memory import HierarchicalMemory
from .readiness import ReadinessModel
from .reasoner import CoarseToFineReasoner

logger = logging.getLogger("ontime")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_SCHEMA, EXIT_EMPTY = 0, 1, 2, 3, 4, 5


class MissingInputError(FileNotFoundError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing input: {path}")

    def to_dict(self):
        return {"error": "missing_input", "path": self.path}


def _require(path):
    if path is None or not Path(path).exists():
        raise MissingInputError(path)
    return Path(path)


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _engine(cfg, dim, model=None):
    r = cfg.retrieval
    reasoner = CoarseToFineReasoner(r.n_prototypes, r.n_centroids, r.normalize_prototype_scores)
    reasoner.fit(np.zeros((1, dim)))
    memory = HierarchicalMemory.from_config(cfg.memory)
    return Engine(memory, reasoner, model, stride=cfg.pipeline.stride)


def _load_episodes(directory):
    directory = _require(directory)
    files = sorted(directory.glob("*.npz"))
    if not files:
        raise MissingInputError(directory / "*.npz")
    return [load_episode(f) for f in files]


# ----------------------------------------------------------------- commands


def cmd_simulate(args, cfg):
    out = _out_dir(args.out)
    suite = args.suite or cfg.suite.name
    if suite:
        episodes = load_suite(suite)
    else:
        base = dataclasses.asdict(cfg.simulate)
        episodes = [
            simulate_stream(SimConfig(**{**base, "seed": args.seed + k, "video_id": f"sim-{args.seed + k:03d}"}))
            for k in range(args.count)
        ]
    records = []
    for ep in episodes:
        save_episode(ep, out)
        records.extend(ep.records)
    save_dataset(records, out / "dataset.jsonl")
    return {"episodes": len(episodes), "records": len(records), "out": str(out)}


def cmd_train(args, cfg):
    episodes = _load_episodes(args.episodes)
    out = _out_dir(args.out)
    tcfg = cfg.readiness
    if args.suite:
        tcfg = dataclasses.replace(tcfg, **SUITES[args.suite].get("train", {}))
    tcfg = dataclasses.replace(tcfg, seed=args.seed)
    engine = _engine(cfg, episodes[0].dim)
    before = engine.reasoner.projections_.checksum()
    model = ReadinessModel(
        hidden=cfg.pipeline.hidden,
        threshold=cfg.pipeline.threshold,
        random_state=tcfg.seed,
        lambda_reg=tcfg.lambda_reg,
        pos_quantile=tcfg.pos_quantile,
        neg_quantile=tcfg.neg_quantile,
        learning_rate=tcfg.learning_rate,
        epochs=tcfg.epochs,
        pairs_per_episode=tcfg.pairs_per_episode,
    )
    model, curve, items = train_readiness(episodes, engine, model, tcfg)
    after = engine.reasoner.projections_.checksum()
    model.save(out / "model.json")
    with open(out / "loss.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "ctr", "tv", "total"])
        for row in curve:
            w.writerow([row["epoch"], repr(row["ctr"]), repr(row["tv"]), repr(row["total"])])
    return {
        "items": len(items),
        "used": model.n_train_episodes_,
        "reasoner_checksum_before": before,
        "reasoner_checksum_after": after,
        "final_loss": curve[-1]["total"] if curve else None,
    }


def cmd_run(args, cfg):
    episodes = _load_episodes(args.episodes)
    out = _out_dir(args.out)
    policy = args.policy or cfg.pipeline.policy
    model = None
    if policy == "readiness":
        model = ReadinessModel.load(_require(args.model))
        if args.threshold is not None:
            model.threshold = args.threshold
    engine = _engine(cfg, episodes[0].dim, model)
    answers, records, traces = [], [], []
    for ep in episodes:
        a, tr = run_pipeline(ep, engine, policy, cfg.pipeline.context)
        answers.extend(a)
        records.extend(ep.records)
        for r in ep.records:
            t = tr[r.question_id]
            traces.append(
                {"question_id": t.question_id, "times": t.times, "scores": t.scores, "t_a": t.t_a, "triggered": t.triggered}
            )
    save_answers(answers, out / "answers.jsonl")
    save_dataset(records, out / "dataset.jsonl")
    with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(json.dumps(t, sort_keys=True) + "\n")
    return {"policy": policy, "answers": len(answers), "answered": sum(a.t_a is not None for a in answers)}


def cmd_eval(args, cfg):
    records = load_dataset(_require(args.dataset))
    answers = load_answers(_require(args.answers))
    report = evaluate(records, answers, cfg.ars)
    paths = write_report(report, _out_dir(args.out), svg=args.svg)
    return {"ars": report.average.ars, "acc": report.average.acc, "files": [p.name for p in paths]}


def cmd_sweep(args, cfg):
    records = load_dataset(_require(args.dataset))
    answers = load_answers(_require(args.answers))
    ge = list(args.gamma_e or cfg.sweep.gamma_e)
    gl = list(args.gamma_l or cfg.sweep.gamma_l)
    grid = penalty_sweep(answers, records, ge, gl, cfg.ars)
    out = _out_dir(args.out)
    write_sweep_csv(grid, ge, gl, out / "sweep.csv")
    write_sweep_svg(grid, ge, gl, out / "sweep.svg")
    return {"cells": int(grid.size)}


def cmd_bench(args, cfg):
    lengths = args.lengths or list(cfg.bench.lengths)
    rows = bench(
        lengths, dim=cfg.simulate.dim, window=cfg.bench.window, seed=args.seed,
        memory=HierarchicalMemory.from_config(cfg.memory),
    )
    out = _out_dir(args.out)
    write_bench_csv(rows, out / "bench.csv")
    return {"rows": len(rows)}


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "run": cmd_run,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def build_parser():
    p = argparse.ArgumentParser(prog="ontime", description=__doc__)
    versions = ", ".join(f"{k} v{v}" for k, v in SCHEMA_VERSIONS.items())
    p.add_argument("--version", action="version", version=f"ontime {__version__} (schemas: {versions})")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="versioned JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="count", default=0)

    sp = sub.add_parser("simulate", help="generate synthetic episodes")
    common(sp)
    sp.add_argument("--suite", choices=sorted(SUITES))
    sp.add_argument("--count", type=int, default=1)

    sp = sub.add_parser("train", help="train the readiness head")
    common(sp)
    sp.add_argument("--episodes", required=True)
    sp.add_argument("--suite", choices=sorted(SUITES), help="apply the suite's training overrides")

    sp = sub.add_parser("run", help="stream episodes and write an answer log")
    common(sp)
    sp.add_argument("--episodes", required=True)
    sp.add_argument("--model")
    sp.add_argument("--policy", choices=["readiness", "answer_immediately", "answer_at_end", "oracle_timing"])
    sp.add_argument("--threshold", type=float)

    for name in ("eval", "sweep"):
        sp = sub.add_parser(name, help="score an answer log" if name == "eval" else "ARS over a penalty grid")
        common(sp)
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--answers", required=True)
        if name == "eval":
            sp.add_argument("--svg", action="store_true")
        else:
            sp.add_argument("--gamma-e", type=float, nargs="+")
            sp.add_argument("--gamma-l", type=float, nargs="+")

    sp = sub.add_parser("bench", help="latency and memory benchmark")
    common(sp)
    sp.add_argument("--lengths", type=int, nargs="+")
    return p


def _fail(code, payload):
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.config is not None:
            _require(args.config)
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        summary = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.to_dict())
    except MissingInputError as exc:
        return _fail(EXIT_MISSING, exc.to_dict())
    except SchemaError as exc:
        return _fail(EXIT_SCHEMA, exc.to_dict())
    except EmptyReportError as exc:
        return _fail(EXIT_EMPTY, {"error": "empty_report", "message": str(exc)})
    except (ValueError, RuntimeError, OSError) as exc:
        return _fail(EXIT_ERROR, {"error": type(exc).__name__, "message": str(exc)})
    sys.stdout.write(json.dumps({"command": args.command, **summary}, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
