import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import as_float64, miniature, numeric_grad, random_weights, rel_error
from ffcvsr.model import init_weights, zero_heads
from ffcvsr.resample import bicubic_upsample
from ffcvsr.synthetic import degrade, panning_video
from ffcvsr.tensor import GradientTape, Tensor
from ffcvsr.trainer import (
    Clip, OptimizerState, TrainConfig, TrainingDiverged, adam_step, augment, clip_loss, load_optimizer_state,
    loss_and_grads, lr_at, save_checkpoint, train, transform, unroll_loss, window_indices,
)

rng = np.random.default_rng(2024)


def random_clip(length=3, h=4, w=4, s=4):
    return Clip(rng.random((length, h, w)), rng.random((length, h * s, w * s)))


def bicubic_hr(lr, s=4):
    return np.stack([bicubic_upsample(Tensor(f[None, None]), s).data[0, 0] for f in lr])


# --- clips and augmentation ---------------------------------------------------

def test_clip_validation():
    with pytest.raises(ValueError, match="at least one"):
        Clip(np.zeros((0, 4, 4)), np.zeros((0, 16, 16)))
    with pytest.raises(ValueError, match="multiple"):
        Clip(np.zeros((2, 4, 4)), np.zeros((2, 16, 12)))
    with pytest.raises(ValueError, match="HR frames"):
        Clip(np.zeros((2, 4, 4)), np.zeros((3, 16, 16)))


def test_transform_examples():
    clip = random_clip(4)
    same = transform(clip, False, False, False)
    np.testing.assert_array_equal(same.lr, clip.lr)
    np.testing.assert_array_equal(same.hr, clip.hr)
    twice = transform(transform(clip, True, False, False), True, False, False)
    np.testing.assert_array_equal(twice.lr, clip.lr)
    rev = transform(clip, False, False, True)
    for k in range(4):
        np.testing.assert_array_equal(rev.lr_frames[k].data, clip.lr_frames[3 - k].data)
        np.testing.assert_array_equal(rev.hr[k], clip.hr[3 - k])
    flipped = transform(clip, True, True, False)
    np.testing.assert_array_equal(flipped.hr[0], clip.hr[0][::-1, ::-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augment_permutes_pixels(seed):
    clip = random_clip(3, 2, 3)
    out = augment(clip, np.random.default_rng(seed))
    assert out.lr.shape == clip.lr.shape and out.hr.shape == clip.hr.shape
    np.testing.assert_array_equal(np.sort(out.lr, axis=None), np.sort(clip.lr, axis=None))
    np.testing.assert_array_equal(np.sort(out.hr, axis=None), np.sort(clip.hr, axis=None))


def test_window_indices_replicate_ends():
    assert window_indices(0, 5, 1) == [0, 0, 1]
    assert window_indices(4, 5, 1) == [3, 4, 4]
    assert window_indices(2, 5, 2) == [0, 1, 2, 3, 4]
    assert window_indices(0, 1, 2) == [0] * 5


# --- loss ---------------------------------------------------------------------

def test_loss_zero_at_constructed_fixed_point():
    cfg = miniature()
    lr = rng.random((4, 4, 4)).astype(np.float32)
    w = zero_heads(init_weights(cfg, 0))
    assert clip_loss(Clip(lr, bicubic_hr(lr)), w, cfg).item() == 0.0


def test_single_frame_loss_with_zero_weights():
    cfg = miniature()
    clip = random_clip(1)
    w = {k: Tensor(np.zeros_like(v.data)) for k, v in init_weights(cfg, 0).items()}
    base = np.mean((bicubic_hr(clip.lr).astype(np.float64) - clip.hr) ** 2)
    assert clip_loss(clip, w, cfg).item() == pytest.approx(2 * base, rel=1e-6)


def test_local_only_loss_has_one_term():
    cfg = miniature(context=False)
    clip = random_clip(2)
    w = zero_heads(init_weights(cfg, 0))
    base = np.mean((bicubic_hr(clip.lr).astype(np.float64) - clip.hr) ** 2)
    assert clip_loss(clip, w, cfg).item() == pytest.approx(base, rel=1e-6)


def test_through_time_gradient_matches_finite_differences():
    cfg = miniature()
    w = as_float64(random_weights(cfg, 21))
    lr, hr = rng.random((1, 3, 4, 4)), rng.random((1, 3, 16, 16))
    local = {k: v for k, v in w.items() if k.startswith("local.")}
    with GradientTape() as tape:
        tape.watch_all(w)
        loss = unroll_loss(lr, hr, w, cfg)
    grads = tape.gradient(loss, local)
    f = lambda: unroll_loss(lr, hr, w, cfg).item()
    for k in ("local.conv_in.weight", "local.res0.conv2.weight", "local.deconv.weight", "local.feat2.weight",
              "local.feat2.bias"):
        v = w[k].data
        coords = rng.choice(v.size, size=min(v.size, 16), replace=False)
        assert rel_error(grads[k].reshape(-1)[coords], numeric_grad(f, v, 1e-6, coords)) <= 1e-4, k


def test_detaching_state_changes_local_gradients():
    cfg = miniature()
    w = random_weights(cfg, 4)
    clip = random_clip(2)
    _, full = loss_and_grads([clip], w, cfg)
    _, cut = loss_and_grads([clip], w, cfg, detach_state=True)
    local = [k for k in full if k.startswith("local.")]
    assert any(not np.allclose(full[k], cut[k], rtol=1e-6, atol=0) for k in local)


# --- optimizer ----------------------------------------------------------------

def scalar(v):
    return {"p": Tensor(np.array([v], np.float64))}


def test_adam_first_step_closed_form():
    w = scalar(0.0)
    state = OptimizerState.for_weights(w)
    adam_step(w, {"p": np.array([1.0])}, state, 1e-4)
    assert w["p"].data[0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_zero_gradient_keeps_parameters():
    w = scalar(0.7)
    state = OptimizerState.for_weights(w)
    adam_step(w, {"p": np.zeros(1)}, state, 1e-3)
    assert w["p"].data[0] == 0.7 and state.step == 1


def test_adam_two_steps_match_recurrence():
    g, lr, b1, b2, eps = 0.3, 1e-2, 0.9, 0.999, 1e-8
    w = scalar(1.0)
    state = OptimizerState.for_weights(w)
    p, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        adam_step(w, {"p": np.array([g])}, state, lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    assert w["p"].data[0] == pytest.approx(p, abs=1e-7)


def test_adam_rejects_mismatched_names():
    w = scalar(0.0)
    with pytest.raises(KeyError, match="missing"):
        adam_step(w, {}, OptimizerState.for_weights(w), 1e-4)
    with pytest.raises(KeyError, match="extra"):
        adam_step(w, {"p": np.zeros(1), "q": np.zeros(1)}, OptimizerState.for_weights(w), 1e-4)


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 1e-4
    assert lr_at(299_999, cfg) == 1e-4
    assert lr_at(300_000, cfg) == 1e-5
    with pytest.raises(ValueError):
        TrainConfig(lr_switch_step=10, total_steps=5)


def test_checkpoint_sidecar_round_trip(tmp_path):
    cfg = miniature()
    w = init_weights(cfg, 0)
    state = OptimizerState.for_weights(w)
    adam_step(w, {k: np.ones_like(v.data) for k, v in w.items()}, state, 1e-3)
    save_checkpoint(tmp_path / "w.ffcw", w, state)
    back = load_optimizer_state(tmp_path / "w.ffcw")
    assert back.step == 1
    for k in w:
        np.testing.assert_array_equal(back.m[k], state.m[k])
        np.testing.assert_array_equal(back.v[k], state.v[k])


# --- training loop --------------------------------------------------------------

def tiny_dataset(n=2, length=3):
    clips = []
    for i in range(n):
        hr = panning_video(16, 16, length, seed=i)
        clips.append(Clip(degrade(hr, 4), hr))
    return clips


def test_train_is_deterministic():
    cfg = miniature()
    tcfg = TrainConfig(clip_length=3, total_steps=4, lr_switch_step=4, batch_size=2, seed=3)
    a = train(tiny_dataset(), cfg, tcfg)
    b = train(tiny_dataset(), cfg, tcfg)
    assert a.losses == b.losses
    assert all(a.weights[k].data.tobytes() == b.weights[k].data.tobytes() for k in a.weights)
    assert a.optimizer.step == 4


def test_train_overfits_one_clip():
    cfg = miniature()
    tcfg = TrainConfig(clip_length=3, total_steps=500, lr_initial=1e-3, lr_switch_step=500, batch_size=1,
                       augment=False, seed=0)
    result = train(tiny_dataset(1), cfg, tcfg)
    assert result.losses[-1] < 0.1 * result.losses[0]


def test_train_reports_validation():
    tcfg = TrainConfig(clip_length=3, total_steps=2, lr_switch_step=2, batch_size=1, val_every=1)
    result = train(tiny_dataset(1), miniature(), tcfg, val_clips=tiny_dataset(1))
    assert [s for s, _ in result.validation] == [1, 2]
    assert all(np.isfinite(p) for _, p in result.validation)


def test_train_errors():
    with pytest.raises(ValueError, match="empty"):
        train([], miniature(), TrainConfig(total_steps=1, lr_switch_step=1))
    with pytest.raises(ValueError, match="scale"):
        train([random_clip(2, 4, 4, 2)], miniature(), TrainConfig(total_steps=1, lr_switch_step=1))


def test_non_finite_loss_aborts_with_checkpoint():
    cfg = miniature()
    w = init_weights(cfg, 0)
    w["local.deconv.bias"].data[:] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train(tiny_dataset(1), cfg, TrainConfig(total_steps=3, lr_switch_step=3, batch_size=1), weights=w)
    assert info.value.step == 0
    assert "step 0" in str(info.value)
    assert set(info.value.last_good) == set(w)
