"""Multi-run studies built on ``run_experiment``: strategy tables, parameter sweeps, client scaling.

Every study runs the same seed list for each arm so differences are paired.
Runs are independent and may be spread over worker processes; results are
collected in submission order, so output does not depend on ``workers``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..optimizer import STRATEGIES
from .config import ConfigError, ExperimentConfig
from .experiment import run_experiment

SWEEP_AXES = {"horizon": "horizon", "t_horizon": "horizon", "t_update": "t_update"}


def _summary(cfg: ExperimentConfig) -> dict:
    return dict(run_experiment(cfg).aggregates)


def _map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_many(configs: Sequence[ExperimentConfig], workers: int = 1) -> list[dict]:
    """Aggregates for each config, in input order."""
    return _map(_summary, configs, workers)


@dataclass(frozen=True)
class StrategyRow:
    strategy: str
    fraction: float
    mean_miou: float
    delta: float  # mean mIoU minus the full-model (fraction 1) run on the same seeds
    per_seed: tuple[float, ...]


def compare_strategies(
    cfg: ExperimentConfig,
    strategies: Iterable[str] = STRATEGIES,
    fractions: Iterable[float] = (0.2, 0.1, 0.05, 0.01),
    seeds: Sequence[int] = (0,),
    workers: int = 1,
) -> list[StrategyRow]:
    strategies, fractions = list(strategies), [float(f) for f in fractions]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError("strategy", f"unknown strategy {s!r}")
    for f in fractions:
        if not 0 < f <= 1:
            raise ConfigError("fraction", f"must be in (0, 1], got {f}")
    base = cfg.replace(policy="ams")
    arms = [(s, f) for s in strategies for f in fractions if f < 1.0]
    # the fraction-1 reference is strategy independent: every coordinate is selected
    jobs = [base.replace(fraction=1.0, seed=sd) for sd in seeds]
    jobs += [base.replace(strategy=s, fraction=f, seed=sd) for s, f in arms for sd in seeds]
    results = [r["mean_miou"] for r in run_many(jobs, workers)]
    n = len(seeds)
    ref = np.array(results[:n])
    rows = []
    if any(f == 1.0 for f in fractions):
        rows += [StrategyRow(s, 1.0, float(ref.mean()), 0.0, tuple(ref)) for s in strategies]
    for k, (s, f) in enumerate(arms):
        vals = np.array(results[n * (k + 1): n * (k + 2)])
        rows.append(StrategyRow(s, f, float(vals.mean()), float((vals - ref).mean()), tuple(vals)))
    order = {s: i for i, s in enumerate(strategies)}
    rows.sort(key=lambda r: (order[r.strategy], -r.fraction))
    return rows


@dataclass(frozen=True)
class SweepPoint:
    value: float
    mean_miou: float
    downlink_kbps: float


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    seeds: Sequence[int] = (0,),
    workers: int = 1,
) -> list[SweepPoint]:
    """One run per (value, seed); points average over seeds."""
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    if not len(values):
        raise ConfigError("values", "sweep needs at least one value")
    field = SWEEP_AXES[axis]
    jobs = [cfg.replace(**{field: float(v)}, seed=sd) for v in values for sd in seeds]
    res = run_many(jobs, workers)
    n = len(seeds)
    points = []
    for i, v in enumerate(values):
        chunk = res[i * n:(i + 1) * n]
        points.append(SweepPoint(
            float(v),
            float(np.mean([r["mean_miou"] for r in chunk])),
            float(np.mean([r["downlink_kbps"] for r in chunk])),
        ))
    return points


@dataclass(frozen=True)
class ScalingPoint:
    num_clients: int
    mean_miou: float
    degradation: float  # single-client mIoU minus this point's mIoU


def client_scaling(
    cfg: ExperimentConfig,
    counts: Sequence[int],
    seeds: Sequence[int] = (0,),
    workers: int = 1,
) -> list[ScalingPoint]:
    """Mean mIoU over all sessions as the number of sessions sharing the GPU grows."""
    counts = sorted(set(int(c) for c in counts) | {1})
    jobs = [cfg.replace(policy="ams", num_clients=n, seed=sd,
                        stationary_clients=min(cfg.stationary_clients, n))
            for n in counts for sd in seeds]
    res = run_many(jobs, workers)
    k = len(seeds)
    means = [float(np.mean([r["mean_miou"] for r in res[i * k:(i + 1) * k]])) for i in range(len(counts))]
    return [ScalingPoint(n, m, means[0] - m) for n, m in zip(counts, means)]


def solo_config(cfg: ExperimentConfig, index: int) -> ExperimentConfig:
    """Single-client config that reproduces session ``index`` of ``cfg`` running alone."""
    from .experiment import client_seed

    stationary = index >= cfg.num_clients - cfg.stationary_clients
    return cfg.replace(num_clients=1, stationary_clients=int(stationary), seed=client_seed(cfg, index),
                       identical_clients=False)


def mixed_degradation(cfg: ExperimentConfig, seeds: Sequence[int] = (0,), workers: int = 1) -> float:
    """Mean over sessions and seeds of (mIoU alone - mIoU while sharing the GPU).

    Each session is compared with itself running alone under the same settings,
    so only contention for the GPU shows up, not differences between streams.
    """
    shared_cfgs = [cfg.replace(policy="ams", seed=sd) for sd in seeds]
    solo_cfgs = [solo_config(c, i) for c in shared_cfgs for i in range(cfg.num_clients)]
    shared = _map(run_experiment, shared_cfgs, workers)
    alone = [r["mean_miou"] for r in run_many(solo_cfgs, workers)]
    gaps = []
    for k, rec in enumerate(shared):
        for i in range(cfg.num_clients):
            gaps.append(alone[k * cfg.num_clients + i] - float(rec.session_miou(i).mean()))
    return float(np.mean(gaps))
