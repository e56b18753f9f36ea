import numpy as np
import pytest

from proscore.corpus import FeatureSequence
from proscore.flow import (AdamConfig, FlowError, TrainingDivergence,
                           build_flow, flow_embed, flow_logprob, flow_train,
                           flow_transform, nll_and_grads)

LOG_2PI = np.log(2 * np.pi)


def _randomized_flow(dim, num_layers=4, width=8, seed=0, scale=0.3):
    """A flow with non-trivial parameters (random final layers too)."""
    m = build_flow(dim, num_layers, width, seed=seed)
    rng = np.random.default_rng(seed + 100)
    params = m.params()
    for p in params:
        p += scale * rng.standard_normal(p.shape)
    return m


# ---------------------------------------------------------------------------
# transform contracts


def test_identity_at_init():
    m = build_flow(4, num_layers=6, width=16, seed=0)
    batch = np.random.default_rng(1).standard_normal((10, 4))
    out, logdet = flow_transform(m, "forward", batch)
    np.testing.assert_array_equal(out, batch)
    np.testing.assert_array_equal(logdet, np.zeros(10))


def test_invertibility():
    m = _randomized_flow(6)
    batch = np.random.default_rng(2).standard_normal((20, 6))
    z, _ = flow_transform(m, "inverse", batch)
    back, _ = flow_transform(m, "forward", z)
    assert np.abs(back - batch).max() < 1e-8


def test_logdet_antisymmetry():
    m = _randomized_flow(6, seed=3)
    batch = np.random.default_rng(3).standard_normal((15, 6))
    z, ld_inv = flow_transform(m, "inverse", batch)
    _, ld_fwd = flow_transform(m, "forward", z)
    assert np.abs(ld_fwd + ld_inv).max() < 1e-10


def test_transform_input_validation():
    m = build_flow(4, 2, 8, seed=0)
    with pytest.raises(FlowError, match="direction"):
        flow_transform(m, "sideways", np.zeros((2, 4)))
    with pytest.raises(FlowError):
        flow_transform(m, "forward", np.zeros((2, 3)))
    with pytest.raises(FlowError, match="non-finite"):
        flow_transform(m, "forward", np.full((2, 4), np.nan))


def test_build_flow_needs_two_dims():
    with pytest.raises(FlowError):
        build_flow(1, 2, 8, seed=0)


# ---------------------------------------------------------------------------
# log-density


def test_logprob_identity_model_is_base_density():
    m = build_flow(2, 4, 8, seed=0)
    assert flow_logprob(m, np.zeros((1, 2)))[0] == pytest.approx(
        -LOG_2PI, abs=1e-12)
    batch = np.random.default_rng(4).standard_normal((10, 2))
    expected = -0.5 * (batch ** 2).sum(axis=1) - LOG_2PI
    np.testing.assert_allclose(flow_logprob(m, batch), expected, atol=1e-12)


def test_logprob_consistent_with_transform():
    m = _randomized_flow(4, seed=5)
    batch = np.random.default_rng(5).standard_normal((8, 4))
    z, logdet = flow_transform(m, "inverse", batch)
    expected = (-0.5 * (z ** 2).sum(axis=1) - 2.0 * LOG_2PI) + logdet
    np.testing.assert_allclose(flow_logprob(m, batch), expected, atol=1e-12)


# ---------------------------------------------------------------------------
# embedding


def test_embed_single_frame_and_identity():
    m = _randomized_flow(4, seed=6)
    frame = np.random.default_rng(6).standard_normal((1, 4))
    z, _ = flow_transform(m, "inverse", frame)
    np.testing.assert_array_equal(flow_embed(m, FeatureSequence("u", frame)),
                                  z[0])
    ident = build_flow(4, 2, 8, seed=0)
    frames = np.random.default_rng(7).standard_normal((9, 4))
    np.testing.assert_allclose(flow_embed(ident, FeatureSequence("u", frames)),
                               frames.mean(axis=0), atol=1e-12)


def test_embed_duplicate_invariance():
    m = _randomized_flow(4, seed=8)
    frames = np.random.default_rng(8).standard_normal((5, 4))
    e1 = flow_embed(m, FeatureSequence("u", frames))
    e2 = flow_embed(m, FeatureSequence("u", np.vstack([frames, frames])))
    np.testing.assert_allclose(e1, e2, atol=1e-12)


# ---------------------------------------------------------------------------
# gradients and training


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    m = _randomized_flow(4, num_layers=2, width=8, seed=9, scale=0.2)
    batch = rng.standard_normal((6, 4))
    _, grads, _ = nll_and_grads(m, batch)
    params = m.params()
    h = 1e-5
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _, _ = nll_and_grads(m, batch)
            flat[idx] = orig - h
            lm, _, _ = nll_and_grads(m, batch)
            flat[idx] = orig
            num = (lp - lm) / (2 * h)
            denom = max(abs(num), abs(gflat[idx]), 1e-8)
            worst = max(worst, abs(num - gflat[idx]) / denom)
    assert worst < 1e-4


def test_training_reduces_nll_and_is_deterministic():
    rng = np.random.default_rng(10)
    frames = rng.standard_normal((400, 4)) @ np.diag([2.0, 0.5, 1.0, 1.5]) + 1.0
    base = build_flow(4, 4, 16, seed=1)
    cfg = AdamConfig(learning_rate=0.005, batch_size=100, epochs=8, seed=2)
    m1, trace1 = flow_train(base, frames, cfg)
    m2, trace2 = flow_train(base, frames, cfg)
    assert trace1[-1] < trace1[0]
    # training must not mutate the input model
    np.testing.assert_array_equal(base.params()[0],
                                  build_flow(4, 4, 16, seed=1).params()[0])
    assert trace1 == trace2
    for p1, p2 in zip(m1.params(), m2.params()):
        np.testing.assert_array_equal(p1, p2)


def test_trained_model_beats_identity_on_shifted_data():
    rng = np.random.default_rng(11)
    frames = rng.standard_normal((600, 2)) * 0.7 + [3.0, -2.0]
    base = build_flow(2, 4, 16, seed=3)
    cfg = AdamConfig(learning_rate=0.01, batch_size=150, epochs=20, seed=4)
    trained, _ = flow_train(base, frames, cfg)
    assert (flow_logprob(trained, frames).mean()
            > flow_logprob(base, frames).mean())


def test_training_on_standard_normal_stays_near_entropy():
    rng = np.random.default_rng(12)
    D = 4
    frames = rng.standard_normal((1000, D))
    base = build_flow(D, 4, 16, seed=5)
    cfg = AdamConfig(learning_rate=0.002, batch_size=200, epochs=10, seed=6)
    _, trace = flow_train(base, frames, cfg)
    entropy = 0.5 * D * np.log(2 * np.pi * np.e)
    assert abs(trace[-1] - entropy) / entropy < 0.01


def test_training_divergence_guard():
    rng = np.random.default_rng(13)
    frames = rng.standard_normal((64, 4)) * 1e200
    base = build_flow(4, 4, 8, seed=7)
    cfg = AdamConfig(learning_rate=1.0, batch_size=32, epochs=5, seed=8)
    with pytest.raises((TrainingDivergence, FlowError)):
        flow_train(base, frames, cfg)


def test_train_requires_enough_frames():
    base = build_flow(4, 2, 8, seed=0)
    cfg = AdamConfig(batch_size=128, epochs=1, seed=0)
    with pytest.raises(FlowError, match="batch_size"):
        flow_train(base, np.zeros((10, 4)), cfg)


def test_adam_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(epochs=0)
