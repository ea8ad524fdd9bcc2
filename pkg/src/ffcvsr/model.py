"""The local network and the context network.

Both networks share one branch layout, built from 3x3 convolutions at LR
resolution::

    conv_in -> ReLU -> ResBlock x n -> conv_a -> ReLU -> conv_b -> ReLU -> deconv   (residual frame)
                                 \\-> feat1 -> ReLU -> feat2                          (feature output)

A ResBlock is conv -> ReLU -> conv plus identity skip. The deconvolution
has kernel 2*scale, stride scale and padding scale/2, so it upsamples by
exactly ``scale``. The local network adds its residual to the bicubic
upsampling of the centre LR frame; the context network adds its residual to
the local frame.

Parameters are stored in a flat ``dict`` keyed ``local.*`` (W_L) and
``context.*`` (W_C).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import container
from .resample import bicubic_upsample
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_channels,
    conv2d,
    conv2d_transpose,
    relu,
    space_to_depth,
)

ModelWeights = dict[str, Tensor]

LOCAL = "local"
CONTEXT = "context"
# the last layer of each output path; zeroing these makes both nets pass-through
HEAD_LAYERS = ("deconv", "feat2")
HEAD_GAIN = 0.1


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 4
    trunk_width: int = 64
    feature_channels: int = 64
    resblocks_local: int = 8
    resblocks_context: int = 4
    temporal_radius: int = 1
    # False gives the "local network only" ablation: no W_C, output is SR^Local
    context: bool = True

    def __post_init__(self):
        if self.scale < 2 or self.scale % 2:
            raise ValueError(f"scale must be an even integer >= 2 (deconv kernel = 2*scale), got {self.scale}")
        for name in ("trunk_width", "feature_channels", "resblocks_local", "resblocks_context"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.temporal_radius < 0:
            raise ValueError(f"temporal_radius must be >= 0, got {self.temporal_radius}")

    @property
    def window(self) -> int:
        return 2 * self.temporal_radius + 1

    @property
    def context_in_channels(self) -> int:
        return 2 * self.scale ** 2 + 2 * self.feature_channels

    @classmethod
    def from_weights(cls, weights) -> "ModelConfig":
        """Recover the architecture from parameter names and shapes."""
        try:
            w_in = np.shape(weights[f"{LOCAL}.conv_in.weight"])
            deconv = np.shape(weights[f"{LOCAL}.deconv.weight"])
            feat = np.shape(weights[f"{LOCAL}.feat2.weight"])
        except KeyError as exc:
            raise WeightFileError(f"missing parameter {exc.args[0]!r}") from None
        if (w_in[1] - 1) % 2:
            raise WeightFileError(f"local.conv_in has {w_in[1]} input channels; expected an odd window")

        def count(prefix):
            idx = {int(m.group(1)) for k in weights if (m := re.match(rf"{prefix}\.res(\d+)\.", k))}
            return max(idx) + 1 if idx else 0

        has_context = any(k.startswith(CONTEXT + ".") for k in weights)
        return cls(
            scale=deconv[2] // 2,
            trunk_width=w_in[0],
            feature_channels=feat[0],
            resblocks_local=count(LOCAL),
            resblocks_context=count(CONTEXT) if has_context else 4,
            temporal_radius=(w_in[1] - 1) // 2,
            context=has_context,
        )


class LocalOutput(NamedTuple):
    sr_local: Tensor
    f_local: Tensor


class RecurrentState(NamedTuple):
    sr_prev: Tensor
    f_prev: Tensor


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    fan_in: int
    gain: float


def _branch_specs(prefix: str, in_ch: int, n_res: int, cfg: ModelConfig) -> list[ParamSpec]:
    w, f, s = cfg.trunk_width, cfg.feature_channels, cfg.scale
    out = []

    def conv(name, oc, ic, gain=1.0):
        out.append(ParamSpec(f"{prefix}.{name}.weight", (oc, ic, 3, 3), ic * 9, gain))
        out.append(ParamSpec(f"{prefix}.{name}.bias", (oc,), 0, 0.0))

    conv("conv_in", w, in_ch)
    for i in range(n_res):
        conv(f"res{i}.conv1", w, w)
        conv(f"res{i}.conv2", w, w, HEAD_GAIN)
    conv("conv_a", w, w)
    conv("conv_b", w, w)
    k = 2 * s
    # each output pixel of a stride-s deconv sees in_ch * (k/s)^2 taps
    out.append(ParamSpec(f"{prefix}.deconv.weight", (w, 1, k, k), w * (k // s) ** 2, HEAD_GAIN))
    out.append(ParamSpec(f"{prefix}.deconv.bias", (1,), 0, 0.0))
    conv("feat1", w, w)
    conv("feat2", f, w, HEAD_GAIN)
    return out


def parameter_specs(cfg: ModelConfig) -> list[ParamSpec]:
    specs = _branch_specs(LOCAL, cfg.window, cfg.resblocks_local, cfg)
    if cfg.context:
        specs += _branch_specs(CONTEXT, cfg.context_in_channels, cfg.resblocks_context, cfg)
    return specs


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(p.shape)) for p in parameter_specs(cfg))


def init_weights(cfg: ModelConfig, seed: int) -> ModelWeights:
    """He-normal kernels, zero biases, output layers scaled by 0.1."""
    rng = np.random.default_rng(seed)
    weights = {}
    for p in parameter_specs(cfg):
        if p.fan_in == 0:
            arr = np.zeros(p.shape, dtype=np.float32)
        else:
            std = np.sqrt(2.0 / p.fan_in)
            arr = (rng.standard_normal(p.shape) * std * p.gain).astype(np.float32)
        weights[p.name] = Tensor(arr)
    return weights


def zero_heads(weights: ModelWeights, prefixes: Sequence[str] = (LOCAL, CONTEXT)) -> ModelWeights:
    """Copy of ``weights`` with the deconv and feature-head layers zeroed."""
    out = {}
    for name, t in weights.items():
        prefix, layer = name.split(".")[:2]
        if prefix in prefixes and layer in HEAD_LAYERS:
            out[name] = Tensor(np.zeros_like(t.data))
        else:
            out[name] = Tensor(t.data.copy())
    return out


def copy_weights(weights: ModelWeights) -> ModelWeights:
    return {k: Tensor(v.data.copy()) for k, v in weights.items()}


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _conv(x: Tensor, weights: ModelWeights, name: str) -> Tensor:
    return conv2d(x, weights[name + ".weight"], weights[name + ".bias"], stride=1, padding=1)


def _branch(x: Tensor, weights: ModelWeights, prefix: str, n_res: int, scale: int) -> tuple[Tensor, Tensor]:
    h = relu(_conv(x, weights, f"{prefix}.conv_in"))
    for i in range(n_res):
        r = relu(_conv(h, weights, f"{prefix}.res{i}.conv1"))
        h = add(h, _conv(r, weights, f"{prefix}.res{i}.conv2"))
    y = relu(_conv(h, weights, f"{prefix}.conv_a"))
    y = relu(_conv(y, weights, f"{prefix}.conv_b"))
    residual = conv2d_transpose(
        y, weights[f"{prefix}.deconv.weight"], weights[f"{prefix}.deconv.bias"],
        stride=scale, padding=scale // 2,
    )
    feat = _conv(relu(_conv(h, weights, f"{prefix}.feat1")), weights, f"{prefix}.feat2")
    return residual, feat


def net_l_forward(lr_window: Sequence[Tensor], weights: ModelWeights, cfg: ModelConfig) -> LocalOutput:
    """Local network: an LR window centred on frame t to (SR^Local_t, F^Local_t)."""
    if len(lr_window) != cfg.window:
        raise ShapeError(f"window has {len(lr_window)} frames, config expects {cfg.window}")
    ref = lr_window[0].shape
    for k, fr in enumerate(lr_window):
        if fr.shape != ref or len(ref) != 4 or ref[1] != 1:
            raise ShapeError(f"window frame {k} has shape {fr.shape}; expected {ref} with one channel")
    x = concat_channels(list(lr_window))
    residual, feat = _branch(x, weights, LOCAL, cfg.resblocks_local, cfg.scale)
    center = lr_window[cfg.temporal_radius]
    sr_local = add(residual, bicubic_upsample(center, cfg.scale))
    return LocalOutput(sr_local, feat)


def net_c_forward(state: RecurrentState, local: LocalOutput, weights: ModelWeights,
                  cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Context network: fuse (SR_{t-1}, F_{t-1}) with the local outputs into (SR_t, F_t)."""
    if state.sr_prev.shape != local.sr_local.shape:
        raise ShapeError(f"previous frame {state.sr_prev.shape} vs local frame {local.sr_local.shape}")
    if state.f_prev.shape != local.f_local.shape:
        raise ShapeError(f"previous feature {state.f_prev.shape} vs local feature {local.f_local.shape}")
    s = cfg.scale
    x = concat_channels([
        space_to_depth(state.sr_prev, s),
        space_to_depth(local.sr_local, s),
        state.f_prev,
        local.f_local,
    ])
    residual, feat = _branch(x, weights, CONTEXT, cfg.resblocks_context, s)
    return add(residual, local.sr_local), feat


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def validate_weights(weights, cfg: ModelConfig) -> None:
    expected = {p.name: p.shape for p in parameter_specs(cfg)}
    for name in weights:
        if name not in expected:
            raise WeightFileError(f"unknown parameter {name!r}")
    for name, shape in expected.items():
        if name not in weights:
            raise WeightFileError(f"missing parameter {name!r}")
        got = tuple(np.shape(weights[name]))
        if got != shape:
            raise WeightFileError(f"parameter {name!r} has shape {got}, expected {shape}")


def save_weights(weights: ModelWeights, path) -> None:
    container.write_tensors(path, {k: v.data for k, v in weights.items()})


def load_weights(path, cfg: ModelConfig | None = None) -> ModelWeights:
    """Load and validate a weight file; without ``cfg`` the architecture is inferred."""
    try:
        raw = container.read_tensors(path)
    except container.ContainerError as exc:
        raise WeightFileError(str(exc)) from None
    if cfg is None:
        cfg = ModelConfig.from_weights(raw)
    validate_weights(raw, cfg)
    return {k: Tensor(v) for k, v in raw.items()}
