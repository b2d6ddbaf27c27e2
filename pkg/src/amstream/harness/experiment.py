"""End-to-end simulation: workload -> edge -> uplink -> server -> downlink -> edge.

The native frame clock drives the loop. Before each frame, every network or
GPU event due by then fires in time order; then the server hands the GPU to
the next ready session (round robin); then each edge runs inference on the
frame, samples it, and flushes its uplink buffer when ``T_update`` elapsed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import codec
from ..buffer import SampleBuffer
from ..controllers import SLOWDOWN, AsrState, AtrState
from ..edge import EdgeState, flush_due, flush_uplink, on_delta, on_frame
from ..optimizer import AdamState, masked_adam_step, run_training_phase, select_coordinates
from ..server import GpuCostModel, RoundRobin, ServerSession, downlink_payload, ingest_samples
from ..simnet import Network
from ..workload import (
    DriftConfig,
    TeacherOracle,
    generate_frame,
    loss_and_grad,
    miou_all,
    nearest_prototype,
    teacher_label,
)
from .config import ExperimentConfig
from .metrics import MetricsRecord
from .pretrain import pretrained_params

log = logging.getLogger(__name__)


@dataclass
class Client:
    index: int
    drift: DriftConfig
    seed: int
    oracle: TeacherOracle
    edge: EdgeState
    session: ServerSession | None = None
    stationary: bool = False
    mode: str = "normal"
    extra: dict = field(default_factory=dict)


def client_seed(cfg: ExperimentConfig, index: int) -> int:
    return cfg.seed if cfg.identical_clients else cfg.seed + 7919 * index


class Simulation:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.layout = cfg.layout
        self.cost = GpuCostModel(cfg.teacher_cost, cfg.train_cost)
        self.net = Network()
        self.queue = self.net.queue
        self.w0 = pretrained_params(cfg)
        self.record = MetricsRecord(policy=cfg.policy, duration=cfg.duration)
        self.clients: list[Client] = []
        # stationary clients are placed last so "first k drifting" is stable across mixes
        n_drift = cfg.num_clients - cfg.stationary_clients
        for i in range(cfg.num_clients):
            stationary = i >= n_drift
            drift = cfg.drift(stationary=stationary)
            seed = client_seed(cfg, i)
            edge = EdgeState(
                layout=self.layout,
                active=self.w0,
                client_id=i,
                fps=cfg.fps,
                rate=cfg.start_rate,
                t_update=cfg.t_update,
                sampling=cfg.policy != "no-customization",
            )
            self.clients.append(Client(i, drift, seed, TeacherOracle(drift, seed), edge, stationary=stationary))
            self.net.add_link(("up", i), cfg.up_bandwidth, cfg.latency)
            self.net.add_link(("down", i), cfg.down_bandwidth, cfg.latency)
        self.scheduler: RoundRobin | None = None
        self.gpu_busy_until = 0.0
        self.gpu_work = 0.0
        self.deltas_sent = 0
        self._setup_policy()

    # -- policy wiring ------------------------------------------------------

    def _adam(self) -> AdamState:
        c = self.cfg
        return AdamState.zeros(self.layout.size, lr=c.lr, beta1=c.beta1, beta2=c.beta2, eps=c.eps)

    def _session(self, client: Client) -> ServerSession:
        c = self.cfg
        return ServerSession(
            session_id=client.index,
            layout=self.layout,
            params=self.w0,
            oracle=client.oracle,
            adam=self._adam(),
            buffer=SampleBuffer(horizon=c.horizon),
            asr=AsrState(rate=c.start_rate, phi_target=c.phi_target, step_size=c.asr_step,
                         r_min=c.r_min if c.asr else c.r_max, r_max=c.r_max, period=c.asr_period),
            atr=AtrState(t_update=c.t_update, enter_below=c.atr_enter, exit_above=c.atr_exit,
                         increment=c.atr_increment, t_min=c.t_update, enabled=c.atr),
            strategy=c.strategy,
            fraction=c.fraction,
            iterations=c.iterations,
            batch_size=c.batch_size,
            seed=client.seed,
            next_due=c.t_update,
        )

    def _setup_policy(self) -> None:
        policy = self.cfg.policy
        if policy == "ams":
            for cl in self.clients:
                cl.session = self._session(cl)
            self.scheduler = RoundRobin([cl.session for cl in self.clients])
        elif policy == "one-time":
            for cl in self.clients:
                cl.extra["buffer"] = SampleBuffer(horizon=float("inf"))
                cl.extra["done"] = False
        elif policy == "just-in-time":
            for cl in self.clients:
                cl.extra.update(
                    params=self.w0.copy(),
                    adam=self._adam(),
                    update=None,
                    stride=self.cfg.jit_max_stride,
                    phase=0,
                    rng=np.random.default_rng([cl.seed, 0x717]),
                )
                cl.edge.rate = self.cfg.fps / self.cfg.jit_max_stride

    # -- network helpers ----------------------------------------------------

    def _uplink(self, client: Client, data: bytes, now: float, tag=None) -> None:
        def deliver(payload, when, cl=client, tag=tag):
            self._on_uplink(cl, codec.decode_uplink(payload, self.cfg.dim), when, tag)

        self.net.transmit(("up", client.index), data, now, deliver)

    def _downlink(self, client: Client, data: bytes, now: float) -> None:
        def deliver(payload, when, cl=client):
            if on_delta(cl.edge, payload):
                flags = codec.decode_control(payload[-codec.CONTROL_SIZE :]).flags
                cl.mode = SLOWDOWN if flags & codec.FLAG_SLOWDOWN else "normal"

        self.deltas_sent += 1
        self.net.transmit(("down", client.index), data, now, deliver)

    def _on_uplink(self, client: Client, batch: codec.UplinkBatch, now: float, tag) -> None:
        policy = self.cfg.policy
        if policy == "ams":
            client.session.inbox.append(batch)
        elif policy == "one-time":
            buf = client.extra["buffer"]
            for ts, cells in zip(batch.timestamps, batch.features):
                fid = client.drift.frame_of(float(ts))
                buf.add(float(ts), cells, nearest_prototype(cells, client.oracle.prototypes(fid)))
            if tag == "final":
                self._one_time_train(client, now)
        elif policy == "just-in-time":
            self._jit_sample(client, batch, now)

    # -- baselines ----------------------------------------------------------

    def _gpu_slot(self, now: float, work: float) -> float:
        start = max(now, self.gpu_busy_until)
        self.gpu_busy_until = start + work
        self.gpu_work += work
        return self.gpu_busy_until

    def _one_time_train(self, client: Client, now: float) -> None:
        c = self.cfg
        buf = client.extra["buffer"]
        if not len(buf) or client.extra["done"]:
            return
        rng = np.random.default_rng([client.seed, 0x0E])
        full = np.ones(self.layout.size, dtype=bool)
        res = run_training_phase(self.layout, self.w0, self._adam(), buf, full,
                                 c.one_time_iterations, c.batch_size, rng)
        done = self._gpu_slot(now, c.teacher_cost * len(buf) + c.train_cost * c.one_time_iterations)
        delta = codec.ModelDelta.from_params(1, res.params, full)
        payload = codec.encode_delta(delta) + codec.encode_control(codec.ControlRecord(0.0, c.t_update))
        client.extra["done"] = True
        self.queue.schedule(done, "gpu_done", (client, payload))

    def _jit_sample(self, client: Client, batch: codec.UplinkBatch, now: float) -> None:
        """Label the newest sample; if the server copy misses the threshold, train on it."""
        c, ex = self.cfg, client.extra
        ts = float(batch.timestamps[-1])
        cells = batch.features[-1]
        labels = nearest_prototype(cells, client.oracle.prototypes(client.drift.frame_of(ts)))
        _, _, preds = loss_and_grad(self.layout, ex["params"], cells, labels)
        acc = miou_all(preds, labels, self.layout.classes)
        work = c.teacher_cost * len(batch)
        trained = False
        if acc < c.jit_threshold:
            mask = select_coordinates("gradient-guided", ex["update"], c.fraction, self.layout, ex["rng"])
            params, adam = ex["params"], ex["adam"]
            for _ in range(c.jit_max_iterations):
                _, grad, preds = loss_and_grad(self.layout, params, cells, labels)
                if miou_all(preds, labels, self.layout.classes) >= c.jit_threshold:
                    break
                params, adam, ex["update"] = masked_adam_step(params, adam, grad, mask)
                work += c.train_cost
                trained = True
            ex["params"], ex["adam"] = params, adam
            ex["stride"] = max(c.jit_min_stride, ex["stride"] // 2)
        else:
            ex["stride"] = min(c.jit_max_stride, ex["stride"] * 2)
        rate = c.fps / ex["stride"]
        done = self._gpu_slot(now, work)
        control = codec.ControlRecord(rate, c.t_update)
        if trained:
            ex["phase"] += 1
            delta = codec.ModelDelta.from_params(ex["phase"], ex["params"], mask)
            payload = codec.encode_delta(delta) + codec.encode_control(control)
        else:
            payload = codec.encode_control(control)
        self.queue.schedule(done, "gpu_done", (client, payload))

    # -- main loop ----------------------------------------------------------

    def _fire(self, until: float) -> None:
        while self.queue.peek_time() is not None and self.queue.peek_time() <= until:
            ev = self.queue.pop()
            if ev.kind == "deliver":
                self.net.deliver(ev)
            elif ev.kind == "gpu_done":
                client, payload = ev.payload
                if len(payload) == codec.CONTROL_SIZE:
                    self._control_only(client, payload, ev.time)
                else:
                    self._downlink(client, payload, ev.time)

    def _control_only(self, client: Client, payload: bytes, now: float) -> None:
        def deliver(data, when, cl=client):
            rec = codec.decode_control(data)
            cl.edge.rate = float(rec.rate)

        self.net.transmit(("down", client.index), payload, now, deliver)

    def _serve(self, now: float) -> None:
        sched = self.scheduler
        while True:
            session = sched.pick(now)
            if session is None:
                return
            outcome, done = sched.serve(session, now, self.cost)
            client = self.clients[session.session_id]
            if outcome.delta is not None:
                self.queue.schedule(done, "gpu_done", (client, downlink_payload(session, outcome.delta)))
            if done > now:
                return

    def _flush(self, client: Client, now: float) -> None:
        policy = self.cfg.policy
        edge = client.edge
        if policy == "ams":
            if flush_due(edge, now):
                data = flush_uplink(edge, now)
                if data is not None:
                    self._uplink(client, data, now)
        elif policy == "one-time":
            if edge.sampling and now >= self.cfg.one_time_window:
                edge.sampling = False
                data = flush_uplink(edge, now)
                if data is not None:
                    self._uplink(client, data, now, tag="final")
            elif edge.sampling and flush_due(edge, now):
                data = flush_uplink(edge, now)
                if data is not None:
                    self._uplink(client, data, now)
        elif policy == "just-in-time":
            if edge.pending:
                data = flush_uplink(edge, now)
                self._uplink(client, data, now)

    def run(self) -> MetricsRecord:
        cfg = self.cfg
        rec = self.record
        for f in range(cfg.num_frames):
            now = f / cfg.fps
            self._fire(now)
            if self.scheduler is not None:
                self._serve(now)
            for cl in self.clients:
                frame = generate_frame(f, cl.drift, cl.seed)
                truth = teacher_label(frame, cl.oracle)
                pred, sampled = on_frame(cl.edge, frame)
                score = miou_all(pred, truth, self.layout.classes)
                rec.add(frame.timestamp, f, cl.index, score, sampled, cl.edge.rate, cl.edge.t_update, cl.mode)
                self._flush(cl, now)
        rec.uplink_bytes = sum(self.net.links[("up", i)].bytes_sent for i in range(cfg.num_clients))
        rec.downlink_bytes = sum(self.net.links[("down", i)].bytes_sent for i in range(cfg.num_clients))
        rec.deltas = self.deltas_sent
        rec.num_clients = cfg.num_clients
        rec.gpu_seconds = self._gpu_total()
        rec.stationary = [cl.stationary for cl in self.clients]
        return rec.finalize()

    def _gpu_total(self) -> float:
        if self.scheduler is not None:
            return sum(s.gpu_seconds for s in self.scheduler.sessions)
        return self.gpu_work


def run_experiment(cfg: ExperimentConfig) -> MetricsRecord:
    return Simulation(cfg).run()
