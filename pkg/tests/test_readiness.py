import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ontime.memory import MemoryTreeSnapshot
from ontime.readiness import (
    PseudoLabelSet,
    ReadinessEpisode,
    ReadinessModel,
    ReadinessTrace,
    ReadinessTrainConfig,
    TrainingSkippedError,
    anchor,
    build_pseudo_labels,
    first_trigger,
    loss_ctr,
    loss_rdy,
    merge_intervals,
    question_frame,
    subtract_intervals,
    temporal_iou,
    trigger,
)


def reference_forward(model, z, q):
    # independent pass: explicit rotation via Gram-Schmidt-free reflection
    q = np.asarray(q, float)
    u = q / np.linalg.norm(q)
    e1 = np.zeros_like(u)
    e1[0] = 1.0
    v = u - e1
    if np.linalg.norm(v) > 1e-12:
        v = v / np.linalg.norm(v)
        f = z - 2 * v * (v @ z)
    else:
        f = z.copy()
    f = f / np.linalg.norm(q)
    x = np.concatenate([f, model.rdy_embedding_])
    h = [math.tanh(sum(model.W1_[i, j] * x[j] for j in range(len(x))) + model.b1_[i]) for i in range(model.hidden)]
    logit = sum(model.w2_[i] * h[i] for i in range(model.hidden)) + model.b2_
    return 1 / (1 + math.exp(-logit))


def toy_episodes(rng, n=3, T=30, d=6, noise=0.3):
    eps = []
    for k in range(n):
        F = rng.normal(size=(T, d)) * noise
        F[10:20, 0] += 1.0
        times = np.arange(T, dtype=float)
        labels = PseudoLabelSet(positive=((10.0, 19.0),), negative=((0.0, 5.0), (25.0, 29.0)))
        eps.append(ReadinessEpisode(f"v/{k}", times, F, labels))
    return eps


def test_train_config_validation():
    with pytest.raises(ValueError):
        ReadinessTrainConfig(pos_quantile=0.7, neg_quantile=0.4)
    with pytest.raises(ValueError):
        ReadinessTrainConfig(lambda_reg=-1)
    with pytest.raises(ValueError):
        ReadinessTrainConfig(pos_quantile=0.0)


def test_loss_ctr_values():
    assert loss_ctr(0.4, 0.4) == math.log(2)
    assert loss_ctr(50.0, -50.0) < 1e-40
    assert loss_ctr(2.197225, 0.0) == pytest.approx(0.105361, abs=1e-6)
    # scalar oracle: sigma(2.197225) = 0.9 so the loss is -ln 0.9
    assert loss_ctr(2.197225, 0.0) == pytest.approx(-math.log(0.9), abs=1e-6)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 0.5))
def test_loss_ctr_monotone(a, b, h):
    assert loss_ctr(a + h, b) < loss_ctr(a, b)
    assert loss_ctr(a, b + h) > loss_ctr(a, b)


def test_loss_rdy_values():
    assert loss_rdy([0.3] * 5, [(0, 1), (2, 4)], 0.1) == pytest.approx(math.log(2))
    assert loss_rdy([0.0, 1.0, 0.0], [(0, 2)], 0.1) == pytest.approx(0.893147, abs=1e-6)
    with pytest.raises(ValueError):
        loss_rdy([0.1, 0.2], [], 0.1)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20), st.floats(0, 2), st.integers(0, 1000))
def test_loss_rdy_additivity_and_reference(trace, lam, seed):
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, len(trace), size=(5, 2))
    tv = sum(abs(trace[i + 1] - trace[i]) for i in range(len(trace) - 1))
    ref = sum(-math.log(1 / (1 + math.exp(-(trace[i] - trace[j])))) for i, j in pairs) / 5
    assert loss_rdy(trace, pairs, lam) == pytest.approx(ref + lam * tv, abs=1e-9)
    assert loss_rdy(trace, pairs, lam) - loss_rdy(trace, pairs, 0.0) == pytest.approx(lam * tv, abs=1e-9)


def test_interval_helpers():
    assert merge_intervals([(3, 5), (0, 1), (1, 2), (4, 8)]) == [(0, 2), (3, 8)]
    assert subtract_intervals([(0, 10)], [(2, 3)]) == [(0, 2), (3, 10)]
    assert temporal_iou([(0, 10)], [(5, 15)]) == pytest.approx(5 / 15)
    assert temporal_iou([(0, 10)], [(0, 10)]) == 1.0


def test_pseudo_labels_quantile_rule():
    d = 8
    z = np.eye(d)[0]
    C = np.zeros((8, d))
    C[0] = 0.99 * np.eye(d)[0] + math.sqrt(1 - 0.99**2) * np.eye(d)[1]
    for j in range(1, 8):
        C[j] = np.eye(d)[j]
    spans = np.arange(8) * 10.0
    snap = MemoryTreeSnapshot.from_arrays(C, times=spans)
    lab = build_pseudo_labels(z, snap, ReadinessTrainConfig())
    assert lab.positive == ((0.0, 0.0),)
    assert lab.positive_ids == (0,)
    assert set(lab.negative_ids) <= {5, 6, 7} and len(lab.negative_ids) == 3
    assert lab.source_similarities[0] == pytest.approx(0.99)


def test_pseudo_labels_ties_and_disjointness():
    C = np.tile([1.0, 0.0], (10, 1))
    snap = MemoryTreeSnapshot.from_arrays(C)
    lab = build_pseudo_labels(np.array([1.0, 0.0]), snap)
    assert lab.positive_ids == (0, 1)
    assert lab.negative_ids == (6, 7, 8, 9)
    for a, b in lab.positive:
        for c, e in lab.negative:
            assert b < c or e < a


def test_pseudo_labels_overlap_goes_to_positive():
    C = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 1.0], [-1.0, 0.0]])
    snap = MemoryTreeSnapshot.from_arrays(C, times=[0, 1, 2, 3, 4])
    object.__setattr__(snap, "centroid_time_span", np.array([[0, 10], [11, 12], [13, 14], [15, 16], [5, 20]], float))
    lab = build_pseudo_labels(np.array([1.0, 0.0]), snap, ReadinessTrainConfig(pos_quantile=0.2, neg_quantile=0.4))
    assert lab.positive == ((0.0, 10.0),)
    assert lab.negative == ((10.0, 20.0),) or all(a >= 10.0 for a, _ in lab.negative)


def test_pseudo_labels_need_two_centroids():
    lab = build_pseudo_labels(np.ones(2), MemoryTreeSnapshot.from_arrays(np.ones((1, 2))))
    assert lab.is_degenerate


def test_question_frame_is_orthonormal(rng):
    for _ in range(5):
        q = rng.normal(size=7)
        H = question_frame(q)
        np.testing.assert_allclose(H @ H.T, np.eye(7), atol=1e-12)
        np.testing.assert_allclose(H @ q, np.linalg.norm(q) * np.eye(7)[0], atol=1e-12)
    np.testing.assert_allclose(anchor(np.ones(3), np.array([2.0, 0, 0])), [0.5, 0.5, 0.5])


def test_readiness_score_examples(rng):
    m = ReadinessModel().initialize(4)
    m.W1_[:] = 0
    m.b1_[:] = 0
    m.w2_[:] = 0
    m.b2_ = 0.0
    assert m.readiness_score(rng.normal(size=4), rng.normal(size=4)) == 0.5
    m.b2_ = 50.0
    assert m.readiness_score(rng.normal(size=4), rng.normal(size=4)) >= 0.999
    m2 = ReadinessModel(init_scale=0.5, random_state=3).initialize(5)
    for _ in range(10):
        z, q = rng.normal(size=5), rng.normal(size=5)
        assert m2.readiness_score(z, q) == pytest.approx(reference_forward(m2, z, q), abs=1e-9)


def test_predict_proba_matches_scores(rng):
    m = ReadinessModel(init_scale=1.0).initialize(4)
    q = rng.normal(size=4)
    Z = rng.normal(size=(6, 4))
    P = m.predict_proba(Z, q)
    np.testing.assert_allclose(P[:, 1], [m.readiness_score(z, q) for z in Z])
    np.testing.assert_array_equal(m.predict(Z, q), P[:, 1] >= m.threshold)


def test_gradient_matches_finite_differences(rng):
    m = ReadinessModel(init_scale=0.5, random_state=1)
    eps = toy_episodes(rng)
    m.initialize(eps[0].features.shape[1])
    pairs = m.sample_pairs(eps, np.random.default_rng(2))
    theta = m.get_flat_params()
    _, grad, _ = m.objective(eps, pairs, 0.1)
    h = 1e-5
    for i in np.random.default_rng(3).choice(theta.size, 20, replace=False):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (m.objective(eps, pairs, 0.1, tp)[0] - m.objective(eps, pairs, 0.1, tm)[0]) / (2 * h)
        assert abs(fd - grad[i]) <= 1e-4 * max(abs(fd), abs(grad[i]), 1e-8)
    np.testing.assert_array_equal(m.get_flat_params(), theta)


def test_objective_agrees_with_loss_rdy(rng):
    m = ReadinessModel(init_scale=0.5).initialize(6)
    eps = toy_episodes(rng, n=2)
    pairs = m.sample_pairs(eps, np.random.default_rng(0))
    total = np.mean([loss_rdy(m.score_features(e.features), p, 0.1) for e, p in zip(eps, pairs)])
    assert m.objective(eps, pairs, 0.1)[0] == pytest.approx(total, abs=1e-12)


def test_zero_epochs_leaves_model_unchanged(rng):
    eps = toy_episodes(rng)
    m = ReadinessModel(epochs=0).initialize(6)
    theta = m.get_flat_params()
    m.fit(eps)
    np.testing.assert_array_equal(m.get_flat_params(), theta)


def test_training_separates_toy_regions(rng):
    # the TV term keeps noisy toy traces flat, so use nearly clean regions
    eps = toy_episodes(rng, noise=0.05)
    m = ReadinessModel(learning_rate=2.0).fit(eps)
    assert m.loss_curve_[-1]["total"] < m.loss_curve_[0]["total"]
    R = m.score_features(eps[0].features)
    assert R[10:20].mean() - np.r_[R[:5], R[25:]].mean() > 0.3


def test_training_is_deterministic(rng):
    eps = toy_episodes(rng)
    a = ReadinessModel(epochs=20).fit(eps).get_flat_params()
    b = ReadinessModel(epochs=20).fit(eps).get_flat_params()
    np.testing.assert_array_equal(a, b)


def test_degenerate_episodes_skip_training(rng):
    ep = ReadinessEpisode("v/0", np.arange(5.0), rng.normal(size=(5, 3)), PseudoLabelSet())
    with pytest.raises(TrainingSkippedError):
        ReadinessModel().fit([ep])


def test_save_load_roundtrip(tmp_path, rng):
    m = ReadinessModel(threshold=0.4, hidden=8, init_scale=0.3).initialize(5)
    m.save(tmp_path / "m.json")
    m2 = ReadinessModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(m.get_flat_params(), m2.get_flat_params())
    assert m2.threshold == 0.4 and m2.hidden == 8
    z, q = rng.normal(size=5), rng.normal(size=5)
    assert m.readiness_score(z, q) == m2.readiness_score(z, q)
    doc = m.to_dict()
    doc["version"] = 99
    with pytest.raises(ValueError):
        ReadinessModel.from_dict(doc)


def test_trigger_examples():
    tr = ReadinessTrace("q")
    fired = [trigger(0.35, tr, t, s) for t, s in enumerate([0.1, 0.2, 0.36])]
    assert fired == [False, False, True] and tr.t_a == 2.0 and tr.triggered
    assert trigger(0.35, tr, 3, 0.9) is False and tr.t_a == 2.0
    tr = ReadinessTrace("q")
    assert not any(trigger(0.35, tr, t, 0.34) for t in range(10))
    tr.close()
    assert tr.closed and not tr.triggered and tr.t_a is None
    tr = ReadinessTrace("q")
    assert trigger(0.0, tr, 0.0, 0.0) is True
    with pytest.raises(ValueError):
        trigger(0.35, ReadinessTrace("q"), 0, 1.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_trigger_monotone_in_threshold(scores, a, b):
    lo, hi = sorted((a, b))
    times = list(range(len(scores)))
    t_lo, t_hi = first_trigger(scores, times, lo), first_trigger(scores, times, hi)
    if t_hi is not None:
        assert t_lo is not None and t_lo <= t_hi


def test_easy_suite_training_margin(trained_easy):
    engine, curve, items = trained_easy
    model = engine.readiness
    assert len(curve) == 200
    gaps = []
    for it in items:
        pos, neg = it.label_indices()
        if pos.size and neg.size:
            R = model.score_features(it.features)
            gaps.append(R[pos].mean() - R[neg].mean())
    assert np.mean(gaps) >= 0.3
