import numpy as np
import pytest

from ontime.harness.simulate import SUITES, SimConfig, load_episode, save_episode, simulate_stream, suite_train_config


def test_same_seed_is_bit_identical():
    a = simulate_stream(SimConfig(seed=5))
    b = simulate_stream(SimConfig(seed=5))
    assert a.fingerprint() == b.fingerprint()
    assert simulate_stream(SimConfig(seed=6)).fingerprint() != a.fingerprint()


def test_zero_noise_frames_match_scene():
    ep = simulate_stream(SimConfig(noise_sigma=0.0, seed=1))
    for s in ep.scenes:
        F = ep.frames[(ep.times >= s.start) & (ep.times < s.end)]
        cos = F @ s.vector / (np.linalg.norm(F, axis=1) * np.linalg.norm(s.vector))
        np.testing.assert_allclose(cos, 1.0, atol=1e-12)


def test_records_and_windows():
    ep = simulate_stream(SimConfig(seed=2))
    assert len(ep.records) == 3
    for r in ep.records:
        inside = [s for s in ep.scenes if s.start <= r.window.t_s and r.window.t_e < s.end]
        assert len(inside) == 1 and inside[0].label == r.answer_key
        assert 20 <= r.window.t_s - r.question_time <= 50
        q = ep.queries[r.question_id]
        assert q @ inside[0].vector / np.linalg.norm(q) >= 0.8


def test_easy_suite_similarity_margin(easy_suite):
    margins = []
    for ep in easy_suite:
        Fn = ep.frames / np.linalg.norm(ep.frames, axis=1, keepdims=True)
        for r in ep.records:
            q = ep.queries[r.question_id]
            s = Fn @ (q / np.linalg.norm(q))
            inside = (ep.times >= r.window.t_s) & (ep.times <= r.window.t_e)
            margins.append(s[inside].mean() - s[~inside].mean())
    assert np.mean(margins) >= 0.3
    assert min(margins) >= 0.3


def test_stream_length_truncates():
    ep = simulate_stream(SimConfig(stream_length=250, seed=0))
    assert ep.frames.shape == (250, 32)


def test_invalid_configs():
    with pytest.raises(ValueError):
        SimConfig(dim=0)
    with pytest.raises(ValueError):
        SimConfig(noise_sigma=-0.1)
    with pytest.raises(ValueError):
        SimConfig(scene_count=3, questions_per_stream=3)


def test_suites_manifest(easy_suite):
    assert len(easy_suite) == len(SUITES["easy"]["seeds"]) == 20
    assert easy_suite[0].video_id == "easy-000"
    assert suite_train_config("easy").learning_rate == 2.0
    assert suite_train_config("easy", epochs=3).epochs == 3


def test_save_load_roundtrip(tmp_path):
    ep = simulate_stream(SimConfig(seed=3, chain_prob=1.0))
    save_episode(ep, tmp_path)
    back = load_episode(tmp_path / "sim.npz")
    assert back.fingerprint() == ep.fingerprint()
    assert [s.label for s in back.scenes] == [s.label for s in ep.scenes]
    assert back.config == ep.config
