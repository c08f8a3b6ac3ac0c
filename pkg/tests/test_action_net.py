import numpy as np
import pytest

from reference import attention_naive
from voxtrack.action_net import (ActionState, action_arch, action_step,
                                 attention_pool, classify_sequence)
from voxtrack.carving import CROP_DIMS
from voxtrack.errors import ConfigurationError
from voxtrack.nn import zero_bundle
from voxtrack.simulator import NUM_ACTIONS


def random_bundle(rng, scale=1.0):
    """Fan-in-scaled random weights (keeps activations O(1) through the stack)."""
    bundle = zero_bundle(action_arch())
    for name, t in bundle.tensors.items():
        fan_in = int(np.prod(t.shape[1:])) if t.ndim > 1 else 1
        bundle.tensors[name] = rng.normal(
            scale=scale / np.sqrt(max(fan_in, 1)), size=t.shape).astype(np.float32)
    return bundle


def test_attention_zero_matrix_gives_mean():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5, 3, 4, 2)).astype(np.float32)
    pooled, alpha = attention_pool(v, rng.normal(size=8).astype(np.float32),
                                   np.zeros((8, 5), np.float32))
    assert np.allclose(alpha, 1.0 / 24, atol=1e-7)
    assert np.allclose(pooled, v.reshape(5, -1).mean(axis=1), atol=1e-6)


def test_attention_single_cell():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(6, 1, 1, 1)).astype(np.float32)
    pooled, alpha = attention_pool(v, rng.normal(size=4),
                                   rng.normal(size=(4, 6)).astype(np.float32))
    assert alpha.shape == (1, 1, 1) and alpha[0, 0, 0] == pytest.approx(1.0)
    assert np.allclose(pooled, v[:, 0, 0, 0])


def test_attention_matches_bruteforce_sum():
    rng = np.random.default_rng(2)
    for _ in range(50):
        v = rng.normal(size=(2, 2, 2, 2)).astype(np.float32)
        h = rng.normal(size=3).astype(np.float32)
        u = rng.normal(size=(3, 2)).astype(np.float32)
        pooled, alpha = attention_pool(v, h, u)
        ref_pooled, ref_alpha = attention_naive(v, h, u)
        assert np.abs(pooled - ref_pooled).max() < 1e-6
        assert np.abs(alpha - ref_alpha).max() < 1e-6


def test_attention_weights_normalized_and_convex():
    rng = np.random.default_rng(3)
    for _ in range(100):
        f = int(rng.integers(1, 5))
        dims = tuple(rng.integers(1, 4, size=3))
        v = rng.normal(size=(f, *dims)).astype(np.float32)
        h = rng.normal(size=6).astype(np.float32)
        u = rng.normal(size=(6, f)).astype(np.float32)
        pooled, alpha = attention_pool(v, h, u)
        assert (alpha >= 0).all()
        assert abs(alpha.sum() - 1.0) < 1e-6
        flat = v.reshape(f, -1)
        assert (pooled <= flat.max(axis=1) + 1e-5).all()
        assert (pooled >= flat.min(axis=1) - 1e-5).all()


def test_attention_shape_mismatch():
    with pytest.raises(ValueError):
        attention_pool(np.zeros((4, 2, 2, 2), np.float32), np.zeros(8),
                       np.zeros((8, 5), np.float32))


def test_zero_weights_uniform_distribution():
    bundle = zero_bundle(action_arch())
    crop = np.random.default_rng(4).random(CROP_DIMS) < 0.3
    probs, state, alpha = action_step(crop, ActionState.initial(), bundle)
    assert np.allclose(probs, 1.0 / NUM_ACTIONS, atol=1e-7)
    assert abs(alpha.sum() - 1.0) < 1e-6
    assert (state.h == 0).all()


def test_hidden_state_stays_bounded():
    # strictly inside (-1, 1) at moderate weights; float32 saturation can
    # land exactly on +-1 at extreme gate inputs, never beyond
    rng = np.random.default_rng(5)
    state = ActionState.initial()
    bundle = random_bundle(rng)
    for _ in range(30):
        crop = rng.random(CROP_DIMS) < 0.4
        probs, state, _ = action_step(crop, state, bundle)
        assert (np.abs(state.h) < 1).all()
        assert abs(probs.sum() - 1.0) < 1e-5
    wild = random_bundle(rng, scale=50.0)
    state = ActionState.initial()
    for _ in range(10):
        _, state, _ = action_step(rng.random(CROP_DIMS) < 0.4, state, wild)
        assert (np.abs(state.h) <= 1).all()


def test_logit_shift_leaves_argmax():
    rng = np.random.default_rng(6)
    bundle = random_bundle(rng)
    crop = rng.random(CROP_DIMS) < 0.3
    probs, _, _ = action_step(crop, ActionState.initial(), bundle)
    shifted = bundle
    shifted.tensors["head.1.bias"] = bundle.tensors["head.1.bias"] + np.float32(2.5)
    probs2, _, _ = action_step(crop, ActionState.initial(), shifted)
    assert int(np.argmax(probs)) == int(np.argmax(probs2))


def test_classify_sequence_zero_weights_tie_break():
    bundle = zero_bundle(action_arch())
    crops = [np.zeros(CROP_DIMS, bool)] * 4
    assert classify_sequence(crops, bundle) == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        classify_sequence([], bundle)


def test_constant_sequence_reaches_fixed_point():
    rng = np.random.default_rng(7)
    bundle = random_bundle(rng)
    crop = rng.random(CROP_DIMS) < 0.35
    labels = classify_sequence([crop] * 25, bundle)
    assert len(set(labels[15:])) == 1  # converged and stays fixed


def test_determinism():
    rng = np.random.default_rng(8)
    bundle = random_bundle(rng)
    crops = [rng.random(CROP_DIMS) < 0.3 for _ in range(6)]
    assert classify_sequence(crops, bundle) == classify_sequence(crops, bundle)


def test_missing_weights_rejected():
    bundle = zero_bundle(action_arch())
    del bundle.tensors["lstm.w_x"]
    with pytest.raises(ConfigurationError):
        action_step(np.zeros(CROP_DIMS, bool), ActionState.initial(), bundle)
