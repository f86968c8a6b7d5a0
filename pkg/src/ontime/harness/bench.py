"""Per-step latency and live-memory benchmark over long synthetic streams."""

import csv
import time
from dataclasses import dataclass

import numpy as np

from ..memory import HierarchicalMemory
from ..reasoner import CoarseToFineReasoner

__all__ = ["BenchRow", "bench", "write_bench_csv"]


@dataclass(frozen=True)
class BenchRow:
    length: int
    p50_ms: float
    p95_ms: float
    live_items: int
    peak_items: int
    window_min_items: int
    window_max_items: int


def _scenes(dim, rng, n_scenes=256):
    S = rng.normal(size=(n_scenes, dim))
    return S / np.linalg.norm(S, axis=1, keepdims=True)


def _scene_stream(n, S, rng, scene_len=(20, 60), noise=0.2):
    n_scenes, dim = S.shape
    labels = []
    while len(labels) < n:
        labels.extend([int(rng.integers(n_scenes))] * int(rng.integers(scene_len[0], scene_len[1] + 1)))
    labels = np.array(labels[:n])
    return S[labels] + rng.normal(size=(n, dim)) * (noise / np.sqrt(dim))


def bench(lengths, dim=32, window=2000, seed=0, memory=None, reasoner=None, chunk=10_000):
    """Stream ``max(lengths)`` frames once and report latency at each length.

    Each step is one ingest plus one reasoning pass for a fixed question; its
    wall-clock time is recorded. The row for length ``L`` summarises the
    ``min(window, L)`` steps that end at frame ``L``. All chunks draw from one
    fixed scene dictionary, so the stream is stationary. Frame generation sits
    outside the timed region.
    """
    lengths = [int(x) for x in lengths]
    if not lengths:
        raise ValueError("need at least one length")
    if any(b <= a for a, b in zip(lengths, lengths[1:])) or lengths[0] < 1:
        raise ValueError("lengths must be positive and strictly ascending")
    rng = np.random.default_rng(seed)
    mem = HierarchicalMemory(**(memory.get_params() if memory is not None else {}))
    mem.reset(dim)
    reasoner = reasoner or CoarseToFineReasoner().fit(np.zeros((1, dim)))
    S = _scenes(dim, rng)
    q = S[0]
    lat = np.empty(lengths[-1])
    items = np.empty(lengths[-1], dtype=np.int64)
    done = 0
    while done < lengths[-1]:
        n = min(chunk, lengths[-1] - done)
        X = _scene_stream(n, S, rng)
        for i in range(n):
            t0 = time.perf_counter()
            mem.ingest_frame(X[i], float(done + i))
            reasoner.reason(q, mem.snapshot(), context=mem.context_)
            lat[done + i] = time.perf_counter() - t0
            a, b, c = mem.level_sizes()
            items[done + i] = a + b + c + len(mem.context_)
        done += n
    rows = []
    for L in lengths:
        lo = max(0, L - window)
        w = lat[lo:L] * 1e3
        rows.append(
            BenchRow(
                L,
                float(np.percentile(w, 50)),
                float(np.percentile(w, 95)),
                int(items[L - 1]),
                int(items[:L].max()),
                int(items[lo:L].min()),
                int(items[lo:L].max()),
            )
        )
    return rows


def write_bench_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["length", "p50_ms", "p95_ms", "live_items", "peak_items", "window_min_items", "window_max_items"])
        for r in rows:
            w.writerow(
                [r.length, f"{r.p50_ms:.6f}", f"{r.p95_ms:.6f}", r.live_items, r.peak_items, r.window_min_items, r.window_max_items]
            )
    return path
