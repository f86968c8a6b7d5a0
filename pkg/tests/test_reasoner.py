import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ontime._validation import DegenerateInputError
from ontime.harness.oracles import oracle_retrieval
from ontime.memory import ContextEntry, HierarchicalMemory, MemoryTreeSnapshot
from ontime.reasoner import (
    CoarseToFineReasoner,
    ProjectionPair,
    RetrievalConfig,
    attention_pool,
    fuse_context,
    reason_long,
    reason_short,
    select_centroids,
    select_prototypes,
)


def reference_pool(query, items):
    # two passes: raw scores, then a normalised weighted sum
    d = len(query)
    scores = [sum(a * b for a, b in zip(query, it)) / d**0.5 for it in items]
    top = max(scores)
    w = [np.exp(s - top) for s in scores]
    z = sum(w)
    return np.array([sum(w[i] * items[i][k] for i in range(len(items))) / z for k in range(d)])


def random_instance(rng, n_proto=None, n_cent=None, d=8):
    n_cent = n_cent or int(rng.integers(1, 97))
    n_proto = n_proto or int(rng.integers(1, min(12, n_cent) + 1))
    C = rng.normal(size=(n_cent, d))
    owner = np.concatenate([np.arange(n_proto), rng.integers(0, n_proto, n_cent - n_proto)])
    rng.shuffle(owner)
    members = [np.flatnonzero(owner == u).tolist() for u in range(n_proto)]
    S = np.stack([C[m].mean(0) for m in members])
    return MemoryTreeSnapshot.from_arrays(C, S, members), rng.normal(size=d)


def test_config_validation():
    with pytest.raises(ValueError):
        RetrievalConfig(n_prototypes=0)
    with pytest.raises(ValueError):
        ProjectionPair(np.eye(2), np.ones((2, 3)))


def test_single_prototype_gets_weight_one():
    snap = MemoryTreeSnapshot.from_arrays(np.eye(3), np.ones((1, 3)), [[0, 1, 2]])
    ids, w = select_prototypes(np.ones(3), snap, ProjectionPair.identity(3), RetrievalConfig())
    assert ids.tolist() == [0] and w.tolist() == [1.0]


def test_k_larger_than_prototypes_selects_all(rng):
    snap, q = random_instance(rng, n_proto=5, n_cent=20)
    ids, w = select_prototypes(q, snap, ProjectionPair.identity(8), RetrievalConfig(n_prototypes=8))
    assert sorted(ids.tolist()) == list(range(5))
    assert w.sum() == pytest.approx(1.0, abs=1e-9)


def test_prototype_ranking_invariant_to_normalisation(rng):
    snap, q = random_instance(rng, n_proto=12, n_cent=96)
    proj = ProjectionPair.identity(8)
    on, w_on = select_prototypes(q, snap, proj, RetrievalConfig(normalize_prototype_scores=True))
    off, w_off = select_prototypes(q, snap, proj, RetrievalConfig(normalize_prototype_scores=False))
    assert on.tolist() == off.tolist()
    assert np.all(w_on >= 0) and w_on.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(w_off, snap.prototype_vectors[on] @ q)


def test_centroid_pool_edge_cases():
    snap = MemoryTreeSnapshot.from_arrays(np.eye(3), np.eye(3), [[0], [1], [2]])
    proj, cfg = ProjectionPair.identity(3), RetrievalConfig()
    assert select_centroids(np.ones(3), snap, np.array([1]), proj, cfg).tolist() == [1]
    assert sorted(select_centroids(np.ones(3), snap, np.array([0, 2]), proj, cfg).tolist()) == [0, 2]


def test_ties_go_to_lower_id():
    snap = MemoryTreeSnapshot.from_arrays(np.ones((4, 2)))
    cfg = RetrievalConfig(n_centroids=2)
    assert select_centroids(np.ones(2), snap, np.zeros(0, int), ProjectionPair.identity(2), cfg).tolist() == [0, 1]


def test_no_prototypes_searches_every_centroid(rng):
    C = rng.normal(size=(30, 4))
    snap = MemoryTreeSnapshot.from_arrays(C)
    q = rng.normal(size=4)
    ids, w = select_prototypes(q, snap, ProjectionPair.identity(4), RetrievalConfig())
    assert ids.size == 0 and w.size == 0
    got = select_centroids(q, snap, ids, ProjectionPair.identity(4), RetrievalConfig())
    assert got.tolist() == sorted(range(30), key=lambda j: (-(C[j] @ q), j))[:24]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_selection_matches_full_scan(seed):
    rng = np.random.default_rng(seed)
    snap, q = random_instance(rng)
    W = rng.normal(size=(8, 8))
    proj = ProjectionPair(W, W.T)
    cfg = RetrievalConfig()
    ids, _ = select_prototypes(q, snap, proj, cfg)
    cents = select_centroids(q, snap, ids, proj, cfg)
    o_ids, o_cents = oracle_retrieval(q, snap, 8, 24, proj)
    assert ids.tolist() == o_ids
    assert cents.tolist() == o_cents


def test_attention_pool_examples(rng):
    v = rng.normal(size=5)
    np.testing.assert_allclose(attention_pool(rng.normal(size=5), [v]), v)
    np.testing.assert_allclose(attention_pool(rng.normal(size=5), [v, v]), v)
    q = rng.normal(size=6)
    items = rng.normal(size=(10, 6))
    np.testing.assert_allclose(attention_pool(q, items), reference_pool(q, items), atol=1e-9)
    with pytest.raises(DegenerateInputError):
        attention_pool(q, np.zeros((0, 6)))


@given(st.integers(0, 10_000))
def test_attention_pool_is_convex(seed):
    rng = np.random.default_rng(seed)
    items = rng.normal(size=(7, 3)) * 5
    out, w = attention_pool(rng.normal(size=3) * 5, items, return_weights=True)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(out, w @ items)


def test_reason_short(rng):
    q = rng.normal(size=4)
    empty = MemoryTreeSnapshot.from_arrays(np.zeros((0, 4)))
    np.testing.assert_array_equal(reason_short(q, empty), q)
    only_q = MemoryTreeSnapshot.from_arrays(np.zeros((0, 4)), frames=q[None])
    np.testing.assert_allclose(reason_short(q, only_q), q)
    F = rng.normal(size=(24, 4))
    snap = MemoryTreeSnapshot.from_arrays(np.zeros((0, 4)), frames=F)
    np.testing.assert_allclose(reason_short(q, snap), reference_pool(q, np.vstack([F, q])), atol=1e-9)


def test_reason_long_empty_memory(rng):
    q = rng.normal(size=4)
    z_s = rng.normal(size=4)
    st_ = reason_long(q, z_s, MemoryTreeSnapshot.from_arrays(np.zeros((0, 4))), ProjectionPair.identity(4), RetrievalConfig())
    np.testing.assert_array_equal(st_.z_l, z_s)
    assert not st_.has_long_term_evidence


@pytest.mark.parametrize("residual", [False, True])
def test_reason_long_pulls_toward_matching_centroid(rng, residual):
    q = rng.normal(size=8)
    F = rng.normal(size=(24, 8))
    snap = MemoryTreeSnapshot.from_arrays(q[None], frames=F)
    z_s = reason_short(q, snap)
    st_ = reason_long(q, z_s, snap, ProjectionPair.identity(8), RetrievalConfig(), residual)
    assert st_.retrieved_centroid_ids == (0,)
    cos = lambda a, b: a @ b / np.linalg.norm(a) / np.linalg.norm(b)  # noqa: E731
    assert cos(st_.z_l, q) >= cos(z_s, q)


def test_centroid_equal_to_q_is_always_retrieved(rng):
    for _ in range(20):
        q = rng.normal(size=8)
        C = np.vstack([rng.normal(size=(40, 8)), q])
        snap = MemoryTreeSnapshot.from_arrays(C)
        st_ = reason_long(q, q, snap, ProjectionPair.identity(8), RetrievalConfig())
        assert 40 in st_.retrieved_centroid_ids


def test_reason_long_matches_reference_on_memory_tree(rng):
    X = rng.normal(size=(800, 8))
    X[:, 0] += np.repeat(rng.normal(size=40) * 3, 20)
    mem = HierarchicalMemory().fit(X)
    snap = mem.snapshot()
    q = rng.normal(size=8)
    z_s = reason_short(q, snap)
    st_ = reason_long(q, z_s, snap, ProjectionPair.identity(8), RetrievalConfig())
    o_p, o_c = oracle_retrieval(q, snap, 8, 24)
    assert list(st_.retrieved_prototype_ids) == o_p
    assert list(st_.retrieved_centroid_ids) == o_c
    items = np.vstack([snap.prototype_vectors[o_p], snap.centroid_vectors[o_c], q])
    np.testing.assert_allclose(st_.z_l, reference_pool(0.5 * (q + z_s), items), atol=1e-9)
    res = reason_long(q, z_s, snap, ProjectionPair.identity(8), RetrievalConfig(), short_term_residual=True)
    np.testing.assert_allclose(res.z_l, 0.5 * (z_s + st_.z_l), atol=1e-12)


def test_fuse_context(rng):
    z = rng.normal(size=4)
    np.testing.assert_array_equal(fuse_context(z, []), z)
    np.testing.assert_allclose(fuse_context(z, [ContextEntry(z, z, "t")]), z)
    a, b = rng.normal(size=4), rng.normal(size=4)
    out = fuse_context(z, [ContextEntry(a, a, "t0"), ContextEntry(b, b, "t1")])
    np.testing.assert_allclose(out, reference_pool(z, np.vstack([z, a, b])), atol=1e-9)


def test_estimator_api(rng):
    r = CoarseToFineReasoner(n_prototypes=4)
    assert r.get_params()["n_prototypes"] == 4
    X = rng.normal(size=(5, 4))
    r.fit(X)
    snap = HierarchicalMemory().fit(rng.normal(size=(60, 4))).snapshot()
    Z = r.transform(X, snap)
    assert Z.shape == (5, 4)
    with pytest.raises(ValueError):
        r.reason(rng.normal(size=4), HierarchicalMemory().fit(rng.normal(size=(30, 3))).snapshot())
    before = r.projections_.checksum()
    r.transform(X, snap)
    assert r.projections_.checksum() == before
