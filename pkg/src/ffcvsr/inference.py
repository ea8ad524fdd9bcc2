"""Streaming recurrent super-resolution with periodic state resets.

Every ``reset_period`` frames the carried (SR, F) state is replaced by the
local network's outputs for the current frame, which stops super-resolution
error from accumulating through the recurrence.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .model import LocalOutput, ModelConfig, ModelWeights, RecurrentState, net_c_forward, net_l_forward
from .tensor import ShapeError, Tensor

DEFAULT_RESET_PERIOD = 50
FIRST_FRAME_MODES = ("bootstrap", "passthrough")


@dataclass
class InferenceSession:
    """Frame-by-frame driver. ``reset_period = 0`` never resets.

    ``first_frame`` selects how frame 1 is produced: ``"bootstrap"`` feeds the
    local outputs to the context network as the previous state (the rule used
    during training); ``"passthrough"`` emits the local frame directly.
    """

    weights: ModelWeights
    config: ModelConfig
    reset_period: int = DEFAULT_RESET_PERIOD
    first_frame: str = "bootstrap"
    state: RecurrentState | None = None
    t: int = 0
    # instrumentation for the most recent step
    last_local: LocalOutput | None = field(default=None, repr=False)
    last_reset: bool = False
    _lr_hw: tuple[int, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.reset_period < 0:
            raise ValueError(f"reset_period must be >= 0, got {self.reset_period}")
        if self.first_frame not in FIRST_FRAME_MODES:
            raise ValueError(f"first_frame must be one of {FIRST_FRAME_MODES}, got {self.first_frame!r}")

    def step(self, lr_window: Sequence[Tensor]) -> Tensor:
        """Super-resolve the centre frame of ``lr_window`` and advance the state."""
        if self._lr_hw is None:
            self._lr_hw = lr_window[0].shape[2:]
        for fr in lr_window:
            if fr.shape[2:] != self._lr_hw:
                raise ShapeError(f"frame extent changed mid-video: {fr.shape[2:]} vs {self._lr_hw}")
        self.t += 1
        local = net_l_forward(lr_window, self.weights, self.config)
        self.last_local = local
        if not self.config.context:
            self.last_reset = False
            self.state = RecurrentState(local.sr_local, local.f_local)
            return local.sr_local

        if self.state is None:
            if self.first_frame == "passthrough":
                sr, f = local.sr_local, local.f_local
            else:
                sr, f = net_c_forward(RecurrentState(local.sr_local, local.f_local), local, self.weights, self.config)
        else:
            sr, f = net_c_forward(self.state, local, self.weights, self.config)

        self.last_reset = self.reset_period > 0 and self.t % self.reset_period == 0
        if self.last_reset:
            self.state = RecurrentState(local.sr_local, local.f_local)
        else:
            self.state = RecurrentState(sr, f)
        return sr

    def run(self, frames: Iterable[Tensor]) -> Iterator[Tensor]:
        """Stream a video through :meth:`step`, replicating frames at both ends.

        Only ``temporal_radius`` future frames are buffered, so memory does not
        grow with video length.
        """
        r = self.config.temporal_radius
        it = iter(frames)
        ahead: deque[Tensor] = deque()
        for fr in it:
            ahead.append(fr)
            if len(ahead) > r:
                break
        if not ahead:
            raise ValueError("cannot super-resolve an empty video")
        past: deque[Tensor] = deque([ahead[0]] * r, maxlen=max(r, 1))
        while ahead:
            centre = ahead[0]
            future = list(ahead)[1:]
            future += [ahead[-1]] * (r - len(future))
            window = (list(past)[-r:] if r else []) + [centre] + future
            yield self.step(window)
            past.append(ahead.popleft())
            nxt = next(it, None)
            if nxt is not None:
                ahead.append(nxt)


def super_resolve_video(frames: Sequence[Tensor], weights: ModelWeights, config: ModelConfig,
                        reset_period: int = DEFAULT_RESET_PERIOD, first_frame: str = "bootstrap") -> list[Tensor]:
    if len(frames) == 0:
        raise ValueError("cannot super-resolve an empty video")
    shape = frames[0].shape
    for k, fr in enumerate(frames):
        if fr.shape != shape:
            raise ShapeError(f"frame {k + 1} has shape {fr.shape}, expected {shape}")
    session = InferenceSession(weights, config, reset_period, first_frame)
    return list(session.run(frames))
