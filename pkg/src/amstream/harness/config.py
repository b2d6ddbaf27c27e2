"""Experiment configuration: one flat record, loadable from YAML and overridable by CLI flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..optimizer import STRATEGIES
from ..workload import DriftConfig, StudentLayout

POLICIES = ("ams", "no-customization", "one-time", "just-in-time")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    # workload
    dim: int = 8
    hidden: int = 16
    classes: int = 4
    grid_rows: int = 8
    grid_cols: int = 8
    fps: float = 30.0
    duration: float = 600.0
    drift_rate: float = 0.0001
    pan_rate: float = 0.5
    jump_times: tuple[float, ...] = (300.0,)
    noise: float = 0.9
    appearance: float = 1.5
    proto_scale: float = 4.5
    plane_scale: float = 4.0
    specialization: float = 3.9
    blob: float = 2.0
    family_seed: int = 0
    # policy
    policy: str = "ams"
    strategy: str = "gradient-guided"
    fraction: float = 0.05
    iterations: int = 20
    batch_size: int = 8
    horizon: float = 240.0
    t_update: float = 10.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    one_time_window: float = 60.0
    one_time_iterations: int = 200
    jit_threshold: float = 0.75
    jit_max_iterations: int = 10
    jit_min_stride: int = 8
    jit_max_stride: int = 64
    # controllers
    phi_target: float = 0.15
    asr_step: float = 1.0
    r_min: float = 0.1
    r_max: float = 1.0
    asr_period: float = 10.0
    initial_rate: float = 1.0  # clamped into [r_min, r_max]
    asr: bool = True
    atr: bool = True
    atr_enter: float = 0.25
    atr_exit: float = 0.35
    atr_increment: float = 2.0
    # server
    teacher_cost: float = 0.25
    train_cost: float = 0.05
    num_clients: int = 1
    stationary_clients: int = 0
    identical_clients: bool = False
    # network
    up_bandwidth: float = 10e6
    down_bandwidth: float = 10e6
    latency: float = 0.05
    # seeds
    seed: int = 0
    pretrain_seed: int = 10_000
    pretrain_iterations: int = 2000
    pretrain_lr: float = 0.01
    # output
    out_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "jump_times", tuple(float(j) for j in self.jump_times))
        self.validate()

    def validate(self) -> None:
        positive = ("dim", "hidden", "classes", "grid_rows", "grid_cols", "fps", "duration",
                    "iterations", "batch_size", "horizon", "t_update", "lr", "up_bandwidth",
                    "down_bandwidth", "num_clients", "asr_period", "initial_rate", "one_time_window")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be > 0, got {getattr(self, name)!r}")
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {POLICIES}, got {self.policy!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction", f"must be in (0, 1], got {self.fraction}")
        if not 0 < self.r_min <= self.r_max:
            raise ConfigError("r_min", "need 0 < r_min <= r_max")
        if not self.atr_enter < self.atr_exit:
            raise ConfigError("atr_enter", "must be below atr_exit")
        if not 0 <= self.stationary_clients <= self.num_clients:
            raise ConfigError("stationary_clients", "must be between 0 and num_clients")
        if self.latency < 0:
            raise ConfigError("latency", "must be >= 0")
        if not 0 <= self.jit_threshold <= 1:
            raise ConfigError("jit_threshold", "must be in [0, 1]")
        if not 0 < self.jit_min_stride <= self.jit_max_stride:
            raise ConfigError("jit_min_stride", "need 0 < jit_min_stride <= jit_max_stride")
        # jumps at or past the end are legal and simply never happen, so short runs keep the default schedule
        if any(t <= 0 for t in self.jump_times) or list(self.jump_times) != sorted(set(self.jump_times)):
            raise ConfigError("jump_times", "jumps must be positive and strictly increasing")

    # -- derived objects ----------------------------------------------------

    @property
    def layout(self) -> StudentLayout:
        return StudentLayout(self.dim, self.hidden, self.classes)

    @property
    def start_rate(self) -> float:
        """Sampling rate before the first control record; fixed at r_max when ASR is off."""
        if not self.asr:
            return self.r_max
        return min(max(self.initial_rate, self.r_min), self.r_max)

    @property
    def num_frames(self) -> int:
        return int(round(self.duration * self.fps))

    def drift(self, stationary: bool = False) -> DriftConfig:
        return DriftConfig(
            dim=self.dim,
            grid=(self.grid_rows, self.grid_cols),
            num_classes=self.classes,
            fps=self.fps,
            drift_rate=0.0 if stationary else self.drift_rate,
            jumps=() if stationary else tuple(int(round(t * self.fps)) for t in self.jump_times),
            pan_rate=0.0 if stationary else self.pan_rate,
            noise=self.noise,
            appearance=self.appearance,
            proto_scale=self.proto_scale,
            plane_scale=self.plane_scale,
            specialization=self.specialization,
            blob=self.blob,
            family_seed=self.family_seed,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["jump_times"] = list(self.jump_times)
        return out


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def coerce(name: str, value: Any) -> Any:
    """Convert a raw (string or YAML) value to the declared type of ``name``."""
    if name not in FIELD_TYPES:
        raise ConfigError(name, "unknown configuration key")
    kind = FIELD_TYPES[name]
    try:
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind.startswith("tuple"):
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            return tuple(float(v) for v in (value or ()))
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"cannot parse {value!r} as {kind}") from exc


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """File values first, then ``overrides`` (flags) on top."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a mapping of key: value")
        for section_or_key, val in raw.items():
            # sections are optional; nested mappings are flattened
            if isinstance(val, dict):
                for k, v in val.items():
                    values[k] = coerce(k, v)
            else:
                values[section_or_key] = coerce(section_or_key, val)
    for k, v in (overrides or {}).items():
        values[k] = coerce(k, v)
    return ExperimentConfig(**values)
