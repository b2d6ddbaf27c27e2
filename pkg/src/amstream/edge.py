"""Edge client: local inference, stride sampling, uplink buffering, double-buffered updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec
from .workload import Frame, StudentLayout, predict

# accumulator slack so that e.g. thirty additions of 1/30 count as a full sample
_ACC_EPS = 1e-9


@dataclass
class EdgeState:
    layout: StudentLayout
    active: np.ndarray
    inactive: np.ndarray = None
    client_id: int = 0
    fps: float = 30.0
    rate: float = 1.0
    t_update: float = 10.0
    accumulator: float = 0.0
    pending: list[Frame] = field(default_factory=list)
    last_phase: int = 0
    last_flush: float = 0.0
    sampling: bool = True
    applied: int = 0
    rejected: int = 0

    def __post_init__(self):
        self.active = np.array(self.active, dtype=np.float64, copy=True)
        if self.inactive is None:
            self.inactive = self.active.copy()
        if self.active.shape != (self.layout.size,) or self.inactive.shape != self.active.shape:
            raise ValueError("active/inactive copies must match the student layout")


def on_frame(state: EdgeState, frame: Frame) -> tuple[np.ndarray, bool]:
    """Predict with the active model and decide whether to sample the frame."""
    pred = predict(state.layout, state.active, frame.cells)
    sampled = False
    if state.sampling:
        state.accumulator += state.rate / state.fps
        if state.accumulator >= 1.0 - _ACC_EPS:
            state.accumulator -= 1.0
            state.pending.append(frame)
            sampled = True
    return pred, sampled


def flush_uplink(state: EdgeState, now: float) -> bytes | None:
    state.last_flush = now
    if not state.pending:
        return None
    batch = codec.UplinkBatch(
        client_id=state.client_id,
        timestamps=np.array([f.timestamp for f in state.pending], dtype=np.float32),
        features=np.stack([f.cells for f in state.pending]),
    )
    state.pending = []
    return codec.encode_uplink(batch)


def flush_due(state: EdgeState, now: float) -> bool:
    return now - state.last_flush >= state.t_update - 1e-9


def on_delta(state: EdgeState, payload: bytes) -> bool:
    """Apply ``delta bytes + control record`` to the inactive copy and swap.

    Stale phases (<= last applied) and undecodable payloads leave the state untouched.
    """
    if len(payload) < codec.CONTROL_SIZE:
        return False
    try:
        delta = codec.decode_delta(payload[: -codec.CONTROL_SIZE])
        control = codec.decode_control(payload[-codec.CONTROL_SIZE :])
    except codec.CodecError:
        state.rejected += 1
        return False
    if delta.phase <= state.last_phase or delta.total_params != state.layout.size:
        state.rejected += 1
        return False
    state.inactive = codec.apply_delta(state.inactive, delta)
    state.active, state.inactive = state.inactive, state.active
    state.inactive = state.active.copy()
    state.last_phase = delta.phase
    state.rate = float(control.rate)
    state.t_update = float(control.t_update)
    state.applied += 1
    return True


def on_control(state: EdgeState, payload: bytes) -> None:
    """Control-only message (no model change)."""
    control = codec.decode_control(payload)
    state.rate = float(control.rate)
    state.t_update = float(control.t_update)
