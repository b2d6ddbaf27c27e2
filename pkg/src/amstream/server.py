"""Server side of model streaming: teacher labeling, training phases, round-robin GPU sharing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import codec
from .buffer import SampleBuffer
from .controllers import SLOWDOWN, AsrState, AtrState, asr_update, atr_update, phi_score
from .optimizer import AdamState, run_training_phase, select_coordinates
from .workload import DriftConfig, StudentLayout, TeacherOracle, nearest_prototype

__all__ = [
    "GpuCostModel",
    "SampleBuffer",
    "ServerSession",
    "IngestResult",
    "PhaseOutcome",
    "WorkItem",
    "ingest_samples",
    "server_phase",
    "schedule_turn",
    "RoundRobin",
]


@dataclass(frozen=True)
class GpuCostModel:
    teacher_cost: float = 0.25  # seconds per labeled frame
    train_cost: float = 0.05  # seconds per training iteration

    def __post_init__(self):
        if self.teacher_cost <= 0 or self.train_cost <= 0:
            raise ValueError("GPU costs must be positive")


@dataclass
class ServerSession:
    session_id: int
    layout: StudentLayout
    params: np.ndarray
    oracle: TeacherOracle
    adam: AdamState = None
    last_update: np.ndarray | None = None
    buffer: SampleBuffer = field(default_factory=SampleBuffer)
    asr: AsrState = field(default_factory=AsrState)
    atr: AtrState = field(default_factory=AtrState)
    strategy: str = "gradient-guided"
    fraction: float = 0.05
    iterations: int = 20
    batch_size: int = 8
    seed: int = 0
    next_due: float = 0.0
    phase: int = 0
    inbox: list[codec.UplinkBatch] = field(default_factory=list)
    last_labels: np.ndarray | None = None
    gpu_seconds: float = 0.0
    served: int = 0

    def __post_init__(self):
        self.params = np.array(self.params, dtype=np.float64, copy=True)
        if self.adam is None:
            self.adam = AdamState.zeros(self.layout.size)
        self.rng = np.random.default_rng([self.seed, self.session_id, 0xA5])

    @property
    def fps(self) -> float:
        cfg = self.oracle.cfg
        return cfg.fps if cfg is not None else 30.0

    def pending_samples(self) -> int:
        return sum(len(b) for b in self.inbox)

    def ready(self, now: float) -> bool:
        return now >= self.next_due and (len(self.buffer) > 0 or bool(self.inbox))

    def control(self) -> codec.ControlRecord:
        flags = codec.FLAG_SLOWDOWN if self.atr.mode == SLOWDOWN else 0
        return codec.ControlRecord(self.asr.rate, self.atr.t_update, flags)


class IngestResult(NamedTuple):
    added: int
    gpu_seconds: float
    evicted: int
    stale: int


def ingest_samples(session: ServerSession, batch: codec.UplinkBatch, cost: GpuCostModel) -> IngestResult:
    """Label every sample with the teacher and add it to the training buffer."""
    cfg: DriftConfig | None = session.oracle.cfg
    evicted = stale = 0
    for ts, cells in zip(batch.timestamps, batch.features):
        ts = float(ts)
        frame_id = cfg.frame_of(ts) if cfg is not None else 0
        labels = nearest_prototype(cells, session.oracle.prototypes(frame_id))
        if session.last_labels is not None:
            session.asr.record(ts, phi_score(labels, session.last_labels, session.layout.classes))
        session.last_labels = labels
        newest = session.buffer.newest
        if newest is not None and ts < newest - session.buffer.horizon:
            stale += 1
        evicted += session.buffer.add(ts, cells, labels)
    gpu = cost.teacher_cost * len(batch)
    session.gpu_seconds += gpu
    return IngestResult(len(batch), gpu, evicted, stale)


class PhaseOutcome(NamedTuple):
    delta: codec.ModelDelta | None
    rate: float
    t_update: float
    gpu_seconds: float


def server_phase(session: ServerSession, cost: GpuCostModel, now: float) -> PhaseOutcome:
    """One training phase followed by the ASR/ATR controller updates.

    ``now`` is the phase completion time; the session becomes due again
    ``T_update`` seconds later.
    """
    delta = None
    gpu = 0.0
    if len(session.buffer):
        mask = select_coordinates(
            session.strategy, session.last_update, session.fraction, session.layout, session.rng
        )
        res = run_training_phase(
            session.layout,
            session.params,
            session.adam,
            session.buffer,
            mask,
            session.iterations,
            session.batch_size,
            session.rng,
            prev_update=session.last_update,
        )
        session.params, session.adam, session.last_update = res.params, res.state, res.update
        session.phase += 1
        delta = codec.ModelDelta.from_params(session.phase, session.params, mask)
        gpu = cost.train_cost * session.iterations
        session.gpu_seconds += gpu
    phi_bar = session.asr.window_mean()
    if phi_bar is not None:
        asr_update(session.asr, phi_bar)
        atr_update(session.atr, session.asr.rate)
    session.next_due = now + session.atr.t_update
    session.served += 1
    return PhaseOutcome(delta, session.asr.rate, session.atr.t_update, gpu)


def downlink_payload(session: ServerSession, delta: codec.ModelDelta) -> bytes:
    return codec.encode_delta(delta) + codec.encode_control(session.control())


class WorkItem(NamedTuple):
    session_id: int
    start: float
    gpu_seconds: float


def estimate_work(session: ServerSession, cost: GpuCostModel) -> float:
    samples = session.pending_samples()
    train = session.iterations if (len(session.buffer) or samples) else 0
    return cost.teacher_cost * samples + cost.train_cost * train


def schedule_turn(
    sessions: Sequence[ServerSession], now: float, cost: GpuCostModel, start_index: int = 0
) -> list[WorkItem]:
    """Plan one round-robin turn: each due session once, in cyclic id order, back to back on the GPU."""
    if not sessions:
        raise ValueError("no sessions to schedule")
    n = len(sessions)
    plan, t = [], now
    for k in range(n):
        s = sessions[(start_index + k) % n]
        if s.ready(now):
            work = estimate_work(s, cost)
            plan.append(WorkItem(s.session_id, t, work))
            t += work
    return plan


class RoundRobin:
    """Cursor over sessions in fixed cyclic order; one session at a time gets the GPU."""

    def __init__(self, sessions: Sequence[ServerSession]):
        self.sessions = list(sessions)
        self.cursor = 0
        self.busy_until = 0.0
        self.log: list[WorkItem] = []

    def pick(self, now: float) -> ServerSession | None:
        if now < self.busy_until:
            return None
        n = len(self.sessions)
        for k in range(n):
            idx = (self.cursor + k) % n
            s = self.sessions[idx]
            if s.ready(now):
                self.cursor = (idx + 1) % n
                return s
        return None

    def next_wakeup(self) -> float | None:
        due = [s.next_due for s in self.sessions if len(s.buffer) or s.inbox]
        return min(due) if due else None

    def serve(self, session: ServerSession, now: float, cost: GpuCostModel):
        """Ingest the session's inbox, run a phase; return (outcome, completion time)."""
        gpu = 0.0
        for batch in session.inbox:
            gpu += ingest_samples(session, batch, cost).gpu_seconds
        session.inbox = []
        done = now + gpu + (cost.train_cost * session.iterations if len(session.buffer) else 0.0)
        outcome = server_phase(session, cost, done)
        self.busy_until = done
        self.log.append(WorkItem(session.session_id, now, done - now))
        return outcome, done
