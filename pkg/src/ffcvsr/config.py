"""Flat ``key = value`` run configuration with a fixed schema."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .inference import DEFAULT_RESET_PERIOD, FIRST_FRAME_MODES
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in str(text).split(",") if p.strip())


def _first_frame(text: str) -> str:
    if text not in FIRST_FRAME_MODES:
        raise ValueError(f"must be one of {', '.join(FIRST_FRAME_MODES)}")
    return text


def _switch(text: str) -> int | None:
    return None if str(text).strip() == "auto" else int(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str
    commands: tuple[str, ...]


_TRAIN = ("train",)

SCHEMA: dict[str, Key] = {
    # model
    "scale": Key(int, 4, "upsampling factor", ("prepare-data", "train")),
    "trunk_width": Key(int, 64, "channels in the convolution trunks", _TRAIN),
    "feature_channels": Key(int, 64, "channels of the carried feature maps", _TRAIN),
    "resblocks_local": Key(int, 8, "ResBlocks in the local network", _TRAIN),
    "resblocks_context": Key(int, 4, "ResBlocks in the context network", _TRAIN),
    "temporal_radius": Key(int, 1, "LR frames on each side of the centre frame", _TRAIN),
    "context": Key(_bool, True, "use the context network (false = local-only ablation)", _TRAIN),
    # training
    "clip_length": Key(int, 10, "frames per training clip", ("prepare-data", "train")),
    "lr_initial": Key(float, 1e-4, "learning rate before the switch step", _TRAIN),
    "lr_late": Key(float, 1e-5, "learning rate after the switch step", _TRAIN),
    "lr_switch_step": Key(_switch, None, "step where the rate drops ('auto' = 6/7 of total_steps)", _TRAIN),
    "total_steps": Key(int, 350_000, "optimizer steps", _TRAIN),
    "batch_size": Key(int, 4, "clips per step", _TRAIN),
    "beta1": Key(float, 0.9, "Adam beta1", _TRAIN),
    "beta2": Key(float, 0.999, "Adam beta2", _TRAIN),
    "eps": Key(float, 1e-8, "Adam epsilon", _TRAIN),
    "augment": Key(_bool, True, "random flips and time reversal", _TRAIN),
    "log_every": Key(int, 100, "steps between loss log lines", _TRAIN),
    "val_every": Key(int, 0, "steps between validation PSNR evaluations (0 = off)", _TRAIN),
    "seed": Key(int, 0, "random seed", _TRAIN),
    # data preparation
    "patch_size": Key(int, 128, "HR patch extent", ("prepare-data",)),
    "pyramid_factors": Key(_int_list, (4, 6, 8, 12, 16), "comma-separated HR downscale factors", ("prepare-data",)),
    "mad_threshold": Key(float, 0.1, "max mean abs difference between consecutive frames", ("prepare-data",)),
    # inference
    "reset_period": Key(int, DEFAULT_RESET_PERIOD, "frames between state resets (0 = never)", ("infer",)),
    "first_frame_mode": Key(_first_frame, "bootstrap", "bootstrap | passthrough", ("infer",)),
    # evaluation
    "border_crop": Key(int, 4, "pixels cropped from each side before metrics", ("evaluate",)),
    "quantize": Key(_bool, False, "round frames to 8 bit before metrics", ("evaluate",)),
    "row": Key(int, 0, "frame row for the temporal profile", ("profile",)),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out[key] = value
    return out


class RunConfig:
    """Validated values for every schema key; file values are overridden by flags."""

    def __init__(self, values: Mapping[str, Any]):
        self._values = dict(values)

    @classmethod
    def build(cls, file_values: Mapping[str, str] | None = None,
              overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        values = {k: entry.default for k, entry in SCHEMA.items()}
        for layer in (file_values or {}), (overrides or {}):
            for key, raw in layer.items():
                if key not in SCHEMA:
                    raise ConfigError(f"unknown key {key!r}")
                if raw is None:
                    continue
                try:
                    values[key] = SCHEMA[key].parse(raw) if isinstance(raw, str) else raw
                except ValueError as exc:
                    raise ConfigError(f"invalid value for {key!r}: {exc}") from None
        return cls(values)

    @classmethod
    def from_file(cls, path, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        text = Path(path).read_text(encoding="utf-8")
        return cls.build(parse_config_text(text, str(path)), overrides)

    def __getattr__(self, name: str):
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name) from None

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            scale=self.scale,
            trunk_width=self.trunk_width,
            feature_channels=self.feature_channels,
            resblocks_local=self.resblocks_local,
            resblocks_context=self.resblocks_context,
            temporal_radius=self.temporal_radius,
            context=self.context,
        )

    def train_config(self) -> TrainConfig:
        switch = self.lr_switch_step
        if switch is None:
            switch = min(300_000, round(self.total_steps * 6 / 7))
        return TrainConfig(
            clip_length=self.clip_length,
            lr_initial=self.lr_initial,
            lr_late=self.lr_late,
            lr_switch_step=switch,
            total_steps=self.total_steps,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            batch_size=self.batch_size,
            seed=self.seed,
            augment=self.augment,
            log_every=self.log_every,
            val_every=self.val_every,
        )
