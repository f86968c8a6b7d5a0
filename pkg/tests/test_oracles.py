import numpy as np
import pytest

from ontime.ars import EvidenceWindow, TimedAnswer
from ontime.harness.oracles import SIZE_CAP, OracleSizeError, oracle_ars, oracle_kmeans, oracle_retrieval
from ontime.harness.schema import QARecord
from ontime.memory import MemoryTreeSnapshot
from ontime.reasoner import ProjectionPair, RetrievalConfig, select_centroids, select_prototypes
from ontime.vecmath import kmeans, kmeans_objective


def random_snapshot(rng, n_c, n_p, d):
    C = rng.normal(size=(n_c, d))
    if n_p == 0:
        return MemoryTreeSnapshot.from_arrays(C)
    owner = rng.integers(0, n_p, size=n_c)
    owner[:n_p] = np.arange(n_p)
    members = [np.flatnonzero(owner == u).tolist() for u in range(n_p)]
    P = np.stack([C[m].mean(0) for m in members])
    return MemoryTreeSnapshot.from_arrays(C, P, members)


def test_retrieval_equivalence_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = int(rng.integers(2, 6))
        n_c = int(rng.integers(1, 30))
        n_p = int(rng.integers(0, min(n_c, 8) + 1))
        K, m = int(rng.integers(1, 5)), int(rng.integers(1, 10))
        snap = random_snapshot(rng, n_c, n_p, d)
        proj = ProjectionPair(np.eye(d) + 0.3 * rng.normal(size=(d, d)), np.eye(d) + 0.3 * rng.normal(size=(d, d)))
        q = rng.normal(size=d)
        cfg = RetrievalConfig(K, m)
        ids, _ = select_prototypes(q, snap, proj, cfg)
        cents = select_centroids(q, snap, ids, proj, cfg)
        o_p, o_c = oracle_retrieval(q, snap, K, m, proj)
        assert ids.tolist() == o_p
        assert cents.tolist() == o_c


def test_retrieval_single_item():
    snap = MemoryTreeSnapshot.from_arrays(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), [[0]])
    assert oracle_retrieval(np.array([0.3, 0.7]), snap, 8, 24) == ([0], [0])


def test_kmeans_two_blob_instance():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    C, obj = oracle_kmeans(X, 2)
    E, lab = kmeans(X, 2)
    assert sorted(map(tuple, C)) == sorted(map(tuple, E)) == [(0.0, 0.5), (10.0, 0.5)]
    assert obj == pytest.approx(1.0)


def test_engine_kmeans_within_one_percent_of_oracle():
    for s in range(10):
        rng = np.random.default_rng(s)
        k = int(rng.integers(2, 13))
        centres = rng.normal(size=(k, 8)) * 3
        X = np.vstack([c + rng.normal(size=(int(rng.integers(3, 10)), 8)) * 0.5 for c in centres])
        C, lab = kmeans(X, k)
        _, obj = oracle_kmeans(X, k)
        assert kmeans_objective(X, C, lab) <= 1.01 * obj + 1e-9


def test_oracle_ars_small_log():
    recs = [QARecord("v", f"q{i}", "SSR", "?", 0.0, "A", EvidenceWindow(10.0, 20.0)) for i in range(2)]
    ans = [TimedAnswer("v/q0", "A", 15.0), TimedAnswer("v/q1", "A", 30.0)]
    assert oracle_ars(ans, recs) == pytest.approx(0.5, abs=1e-6)


def test_size_caps():
    with pytest.raises(OracleSizeError):
        oracle_kmeans(np.zeros((SIZE_CAP + 1, 2)), 2)
    snap = MemoryTreeSnapshot.from_arrays(np.zeros((SIZE_CAP + 1, 2)))
    with pytest.raises(OracleSizeError):
        oracle_retrieval(np.ones(2), snap, 8, 24)
    recs = [QARecord("v", f"q{i}", "SSR", "?", 0.0, "A", EvidenceWindow(1.0, 2.0)) for i in range(SIZE_CAP + 1)]
    with pytest.raises(OracleSizeError):
        oracle_ars([], recs)
