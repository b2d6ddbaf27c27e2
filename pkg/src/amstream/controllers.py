"""Scene-change score, adaptive sampling rate (ASR) and adaptive training rate (ATR)."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .workload import miou_all

NORMAL = "normal"
SLOWDOWN = "slowdown"


def phi_score(label_k: np.ndarray, label_prev: np.ndarray, num_classes: int) -> float:
    """1 - mIoU between consecutive teacher label grids (0 when nothing moved)."""
    return 1.0 - miou_all(np.asarray(label_k), np.asarray(label_prev), num_classes)


@dataclass
class AsrState:
    rate: float = 1.0
    phi_target: float = 0.15
    step_size: float = 1.0
    r_min: float = 0.1
    r_max: float = 1.0
    period: float = 10.0
    history: deque = field(default_factory=lambda: deque(maxlen=4096))

    def __post_init__(self):
        if not self.r_min <= self.r_max:
            raise ValueError("r_min must not exceed r_max")
        self.rate = min(max(self.rate, self.r_min), self.r_max)

    def record(self, timestamp: float, phi: float) -> None:
        self.history.append((timestamp, phi))

    def window_mean(self) -> float | None:
        """Mean score over the last ``period`` seconds of received samples."""
        if not self.history:
            return None
        newest = self.history[-1][0]
        vals = [p for t, p in self.history if t >= newest - self.period]
        return float(np.mean(vals))


def asr_update(state: AsrState, phi_bar: float) -> float:
    r = state.rate + state.step_size * (phi_bar - state.phi_target)
    state.rate = min(max(r, state.r_min), state.r_max)
    return state.rate


@dataclass
class AtrState:
    mode: str = NORMAL
    t_update: float = 10.0
    enter_below: float = 0.25
    exit_above: float = 0.35
    increment: float = 2.0
    t_min: float = 10.0
    enabled: bool = True

    def __post_init__(self):
        if not self.enter_below < self.exit_above:
            raise ValueError("slowdown entry threshold must be below the exit threshold")
        self.t_update = max(self.t_update, self.t_min)


def atr_update(state: AtrState, rate: float) -> float:
    """Hysteresis on the sampling rate; grow T_update by a fixed step while in slowdown."""
    if rate < 0:
        raise ValueError("sampling rate must be >= 0")
    if not state.enabled:
        state.mode, state.t_update = NORMAL, state.t_min
        return state.t_update
    if state.mode == NORMAL and rate < state.enter_below:
        state.mode = SLOWDOWN
    elif state.mode == SLOWDOWN and rate > state.exit_above:
        state.mode = NORMAL
    state.t_update = state.t_update + state.increment if state.mode == SLOWDOWN else state.t_min
    return state.t_update
