"""Brute-force reference implementations, for tests only.

Each oracle is written without reusing the engine code paths it checks and
refuses instances larger than ``SIZE_CAP`` items.
"""

import itertools
import math

import numpy as np

__all__ = ["SIZE_CAP", "OracleSizeError", "oracle_retrieval", "oracle_kmeans", "oracle_ars"]

SIZE_CAP = 1000


class OracleSizeError(ValueError):
    """Instance too large for a brute-force oracle."""


def _cap(n, what):
    if n > SIZE_CAP:
        raise OracleSizeError(f"{what}: {n} items exceeds the oracle cap of {SIZE_CAP}")


def oracle_retrieval(q, snapshot, K, m, proj=None):
    """Full-scan coarse-to-fine retrieval.

    Returns ``(prototype_ids, centroid_ids)`` as lists. Every score is
    computed with a plain Python dot product and ranking is a full sort on
    ``(-score, id)``.
    """
    P = np.asarray(snapshot.prototype_vectors)
    C = np.asarray(snapshot.centroid_vectors)
    _cap(len(P) + len(C), "retrieval")
    d = len(q)
    Wp = np.eye(d) if proj is None else np.asarray(proj.prototype)
    Wc = np.eye(d) if proj is None else np.asarray(proj.centroid)
    qp = [sum(Wp[i][j] * q[j] for j in range(d)) for i in range(d)]
    qc = [sum(Wc[i][j] * q[j] for j in range(d)) for i in range(d)]

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    if len(P) == 0:
        protos = []
        pool = list(range(len(C)))
    else:
        ranked = sorted(range(len(P)), key=lambda u: (-dot(P[u], qp), u))
        protos = ranked[:K]
        pool = sorted({j for u in protos for j in snapshot.prototype_members[u]})
    cents = sorted(pool, key=lambda j: (-dot(C[j], qc), j))[:m]
    return protos, cents


def _lloyd(X, C, iters):
    for _ in range(iters):
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
        lab = d2.argmin(1)
        newC = C.copy()
        for k in range(C.shape[0]):
            if np.any(lab == k):
                newC[k] = X[lab == k].mean(0)
        if np.array_equal(newC, C):
            break
        C = newC
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
    lab = d2.argmin(1)
    return C, lab, float(d2[np.arange(len(X)), lab].sum())


def oracle_kmeans(points, k, restarts=50, seed=12345, max_iters=200):
    """Best-of-``restarts`` Lloyd from uniformly random initial centres.

    Instances with at most 12 points are solved exactly by enumerating every
    assignment of points to ``k`` clusters instead.
    Returns ``(centroids, objective)``.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    _cap(n, "kmeans")
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= number of points")
    if n <= 12 and k ** n <= 600_000:
        best = (math.inf, None)
        for lab in itertools.product(range(k), repeat=n):
            lab = np.array(lab)
            if len(set(lab.tolist())) != k:
                continue
            C = np.stack([X[lab == c].mean(0) for c in range(k)])
            obj = float(((X - C[lab]) ** 2).sum())
            if obj < best[0] - 1e-12:
                best = (obj, C)
        return best[1], best[0]
    rng = np.random.default_rng(seed)
    best = (math.inf, None)
    for _ in range(restarts):
        C0 = X[rng.choice(n, size=k, replace=False)].copy()
        C, _, obj = _lloyd(X, C0, max_iters)
        if obj < best[0]:
            best = (obj, C)
    return best[1], best[0]


def oracle_ars(answers, records, gamma_e=6.0, gamma_l=1.0, epsilon=1e-6):
    """Hard-mode ARS straight from the clamped formulas.

    Chains are found by repeated relabelling rather than union-find, and the
    median is taken by sorting.
    """
    records = list(records)
    _cap(len(records), "ars")
    by_id = {a.question_id: a for a in answers}
    durs = sorted(r.window.t_e - r.window.t_s for r in records if not (r.window.t_s == 0 and r.window.t_e == 0))
    durs = [max(0.0, x) for x in durs]
    if not durs:
        tau = 0.0
    elif len(durs) % 2:
        tau = durs[len(durs) // 2]
    else:
        tau = 0.5 * (durs[len(durs) // 2 - 1] + durs[len(durs) // 2])

    def score(r):
        a = by_id.get(r.question_id)
        if a is None or a.t_a is None:
            return 0.0
        t = 0.0 if (r.window.t_s == 0 and r.window.t_e == 0) else tau
        z = gamma_e * (a.t_a - r.window.t_s) / (t + epsilon)
        if z >= 0:
            sig = 1.0 / (1.0 + math.exp(-z))
        else:
            sig = math.exp(z) / (1.0 + math.exp(z))
        ep = min(1.0, 2.0 * sig)
        lp = min(1.0, max(0.0, 1.0 - gamma_l * (a.t_a - r.window.t_e) / (t + epsilon)))
        return ep * lp

    label = {r.question_id: r.question_id for r in records}
    key = {(r.video_id, r.turn_id): r.question_id for r in records}
    changed = True
    while changed:
        changed = False
        for r in records:
            for dep in r.depends_on:
                other = key.get((r.video_id, dep))
                if other is None:
                    continue
                lo = min(label[r.question_id], label[other])
                for qid in (r.question_id, other):
                    if label[qid] != lo:
                        old = label[qid]
                        for k2 in label:
                            if label[k2] == old:
                                label[k2] = lo
                        changed = True
    groups = {}
    for r in records:
        groups.setdefault(label[r.question_id], []).append(score(r))
    if not groups:
        return 0.0
    return sum(sum(v) / len(v) for v in groups.values()) / len(groups)
