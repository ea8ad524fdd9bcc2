"""Joint training of both networks with backprop through a clip unroll."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import container
from .metrics import psnr
from .model import (
    ModelConfig,
    ModelWeights,
    RecurrentState,
    copy_weights,
    init_weights,
    net_c_forward,
    net_l_forward,
    save_weights,
)
from .tensor import GradientTape, Tensor, add, detach, mse, scale

log = logging.getLogger(__name__)


@dataclass
class Clip:
    """Consecutive LR/HR frames of one scene, stored as (length, H, W) arrays."""

    lr: np.ndarray
    hr: np.ndarray

    def __post_init__(self):
        self.lr = np.asarray(self.lr, dtype=np.float32)
        self.hr = np.asarray(self.hr, dtype=np.float32)
        if self.lr.ndim != 3 or self.hr.ndim != 3:
            raise ValueError(f"clip arrays must be (length, H, W); got {self.lr.shape} and {self.hr.shape}")
        if len(self.lr) != len(self.hr):
            raise ValueError(f"clip has {len(self.lr)} LR frames but {len(self.hr)} HR frames")
        if len(self.lr) < 1:
            raise ValueError("clip must contain at least one frame")
        lh, lw = self.lr.shape[1:]
        hh, hw = self.hr.shape[1:]
        if hh % lh or hw % lw or hh // lh != hw // lw:
            raise ValueError(f"HR extent {hh}x{hw} is not an integer multiple of LR extent {lh}x{lw}")

    def __len__(self) -> int:
        return len(self.lr)

    @property
    def scale(self) -> int:
        return self.hr.shape[1] // self.lr.shape[1]

    @property
    def lr_frames(self) -> list[Tensor]:
        return [Tensor(f[None, None]) for f in self.lr]

    @property
    def hr_frames(self) -> list[Tensor]:
        return [Tensor(f[None, None]) for f in self.hr]


@dataclass(frozen=True)
class TrainConfig:
    clip_length: int = 10
    lr_initial: float = 1e-4
    lr_late: float = 1e-5
    lr_switch_step: int = 300_000
    total_steps: int = 350_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    log_every: int = 100
    val_every: int = 0

    def __post_init__(self):
        if self.lr_initial <= 0 or self.lr_late <= 0:
            raise ValueError("learning rates must be positive")
        if self.lr_switch_step > self.total_steps:
            raise ValueError(f"lr_switch_step {self.lr_switch_step} exceeds total_steps {self.total_steps}")
        if self.batch_size < 1 or self.clip_length < 1 or self.total_steps < 0:
            raise ValueError("batch_size and clip_length must be >= 1, total_steps >= 0")


def lr_at(step: int, cfg: TrainConfig) -> float:
    return cfg.lr_initial if step < cfg.lr_switch_step else cfg.lr_late


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def transform(clip: Clip, hflip: bool, vflip: bool, reverse: bool) -> Clip:
    lr, hr = clip.lr, clip.hr
    if hflip:
        lr, hr = lr[:, :, ::-1], hr[:, :, ::-1]
    if vflip:
        lr, hr = lr[:, ::-1, :], hr[:, ::-1, :]
    if reverse:
        lr, hr = lr[::-1], hr[::-1]
    return Clip(np.ascontiguousarray(lr), np.ascontiguousarray(hr))


def augment(clip: Clip, rng: np.random.Generator) -> Clip:
    """Horizontal flip, vertical flip and time reversal, each with probability 1/2."""
    hflip, vflip, reverse = rng.random(3) < 0.5
    return transform(clip, bool(hflip), bool(vflip), bool(reverse))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def window_indices(t: int, length: int, radius: int) -> list[int]:
    """Frame indices of the window centred on ``t``, replicating the ends."""
    return [min(max(t + k, 0), length - 1) for k in range(-radius, radius + 1)]


def unroll(lr: np.ndarray, weights: ModelWeights, cfg: ModelConfig, detach_state: bool = False):
    """Run the recurrence over a batch of clips shaped (N, L, h, w).

    Yields ``(local, sr)`` per frame, where ``sr`` is None for the local-only
    ablation. The first frame bootstraps the state from its own local outputs.
    """
    n, length = lr.shape[:2]
    frames = [Tensor(lr[:, t:t + 1]) for t in range(length)]
    state = None
    for t in range(length):
        window = [frames[i] for i in window_indices(t, length, cfg.temporal_radius)]
        local = net_l_forward(window, weights, cfg)
        if not cfg.context:
            yield local, None
            continue
        if state is None:
            state = RecurrentState(local.sr_local, local.f_local)
        sr, f = net_c_forward(state, local, weights, cfg)
        yield local, sr
        state = RecurrentState(detach(sr), detach(f)) if detach_state else RecurrentState(sr, f)


def unroll_loss(lr: np.ndarray, hr: np.ndarray, weights: ModelWeights, cfg: ModelConfig,
                detach_state: bool = False) -> Tensor:
    """Per-frame local + context MSE, averaged over the clip length."""
    length = lr.shape[1]
    total = None
    for t, (local, sr) in enumerate(unroll(lr, weights, cfg, detach_state)):
        target = Tensor(hr[:, t:t + 1])
        term = mse(local.sr_local, target)
        if sr is not None:
            term = add(term, mse(sr, target))
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / length)


def stack_clips(clips: Sequence[Clip]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([c.lr for c in clips]), np.stack([c.hr for c in clips])


def clip_loss(clip: Clip | Sequence[Clip], weights: ModelWeights, cfg: ModelConfig,
              detach_state: bool = False) -> Tensor:
    clips = [clip] if isinstance(clip, Clip) else list(clip)
    lr, hr = stack_clips(clips)
    return unroll_loss(lr, hr, weights, cfg, detach_state)


def loss_and_grads(clips, weights: ModelWeights, cfg: ModelConfig,
                   detach_state: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    with GradientTape() as tape:
        tape.watch_all(weights)
        loss = clip_loss(clips, weights, cfg, detach_state)
    return loss.item(), tape.gradient(loss, weights)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_weights(cls, weights: ModelWeights, cfg: TrainConfig | None = None) -> "OptimizerState":
        cfg = cfg or TrainConfig()
        return cls(
            m={k: np.zeros_like(v.data) for k, v in weights.items()},
            v={k: np.zeros_like(v.data) for k, v in weights.items()},
            beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
        )


def adam_step(weights: ModelWeights, grads: dict[str, np.ndarray], state: OptimizerState, lr: float):
    """One bias-corrected Adam update, applied in place. Returns (weights, state)."""
    if set(grads) != set(weights):
        missing = sorted(set(weights) - set(grads))
        extra = sorted(set(grads) - set(weights))
        raise KeyError(f"gradient names do not match parameters (missing={missing}, extra={extra})")
    if not state.m:
        state.m = {k: np.zeros_like(v.data) for k, v in weights.items()}
        state.v = {k: np.zeros_like(v.data) for k, v in weights.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name in sorted(weights):
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p = weights[name].data
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
    return weights, state


def save_checkpoint(path, weights: ModelWeights, state: OptimizerState) -> None:
    """Weights at ``path``; step counter and moments in the ``.opt`` sidecar."""
    save_weights(weights, path)
    side = {"adam.step": np.array([state.step], dtype=np.float32)}
    side.update({f"adam.m.{k}": v for k, v in state.m.items()})
    side.update({f"adam.v.{k}": v for k, v in state.v.items()})
    container.write_tensors(str(path) + ".opt", side)


def load_optimizer_state(path, cfg: TrainConfig | None = None) -> OptimizerState:
    cfg = cfg or TrainConfig()
    raw = container.read_tensors(str(path) + ".opt")
    state = OptimizerState(step=int(raw.pop("adam.step")[0]), beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    for k, v in raw.items():
        kind, name = k.split(".", 2)[1:]
        (state.m if kind == "m" else state.v)[name] = v
    return state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: ModelWeights):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainResult:
    weights: ModelWeights
    losses: list[float]
    optimizer: OptimizerState
    validation: list[tuple[int, float]] = field(default_factory=list)


def clip_psnr(clips: Sequence[Clip], weights: ModelWeights, cfg: ModelConfig) -> float:
    """Mean per-frame PSNR of the final outputs over whole clips (no resets)."""
    values = []
    for clip in clips:
        for t, (local, sr) in enumerate(unroll(clip.lr[None], weights, cfg)):
            out = local.sr_local if sr is None else sr
            values.append(psnr(out.data[0, 0], clip.hr[t]))
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def train(dataset: Sequence[Clip], model_cfg: ModelConfig, cfg: TrainConfig,
          weights: ModelWeights | None = None, optimizer: OptimizerState | None = None,
          val_clips: Sequence[Clip] = (),
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """sample -> augment -> unroll loss -> backward -> Adam, for ``cfg.total_steps`` steps."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty; nothing to train on")
    shapes = {(c.lr.shape, c.hr.shape) for c in dataset}
    if len(shapes) != 1:
        raise ValueError(f"all clips must share one shape, found {sorted(shapes)}")
    if dataset[0].scale != model_cfg.scale:
        raise ValueError(f"clip scale {dataset[0].scale} does not match model scale {model_cfg.scale}")

    rng = np.random.default_rng(cfg.seed)
    if weights is None:
        weights = init_weights(model_cfg, cfg.seed)
    if optimizer is None:
        optimizer = OptimizerState.for_weights(weights, cfg)
    losses: list[float] = []
    validation: list[tuple[int, float]] = []
    last_good = copy_weights(weights)

    for _ in range(cfg.total_steps):
        step = optimizer.step
        picks = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = [augment(dataset[i], rng) if cfg.augment else dataset[i] for i in picks]
        loss, grads = loss_and_grads(batch, weights, model_cfg)
        if not math.isfinite(loss):
            raise TrainingDiverged(step, last_good)
        last_good = copy_weights(weights)
        adam_step(weights, grads, optimizer, lr_at(step, cfg))
        losses.append(loss)
        if cfg.log_every and optimizer.step % cfg.log_every == 0:
            log.info("step %d loss %.6g lr %g", optimizer.step, loss, lr_at(step, cfg))
        if val_clips and cfg.val_every and optimizer.step % cfg.val_every == 0:
            validation.append((optimizer.step, clip_psnr(val_clips, weights, model_cfg)))
            log.info("step %d validation psnr %.3f dB", optimizer.step, validation[-1][1])
        if callback is not None:
            callback(optimizer.step, loss)
    return TrainResult(weights, losses, optimizer, validation)
