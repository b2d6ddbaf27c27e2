"""Masked Adam coordinate descent.

Every iteration advances Adam's moments for *all* coordinates, but only the
coordinates in the phase mask have their weights changed. The last full
update vector of a phase drives the next phase's gradient-guided selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .buffer import SampleBuffer
from .workload import StudentLayout, loss_and_grad

STRATEGIES = ("gradient-guided", "random", "first", "last", "first-last")


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), **hyper)


def mask_size(fraction: float, total: int) -> int:
    return min(total, math.ceil(fraction * total))


def select_coordinates(
    strategy: str,
    prev_update: np.ndarray | None,
    fraction: float,
    layout: StudentLayout | int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Boolean mask of the coordinates to train in the next phase.

    ``gradient-guided`` without a previous update (first phase) falls back to
    a uniform random subset.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    total = layout if isinstance(layout, int) else layout.size
    k = mask_size(fraction, total)
    mask = np.zeros(total, dtype=bool)

    if strategy == "gradient-guided" and prev_update is not None:
        # stable sort: equal magnitudes keep ascending index order
        order = np.argsort(-np.abs(prev_update), kind="stable")
        mask[order[:k]] = True
    elif strategy in ("gradient-guided", "random"):
        mask[rng.choice(total, size=k, replace=False)] = True
    elif strategy == "first":
        mask[:k] = True
    elif strategy == "last":
        mask[total - k :] = True
    else:
        half = min(total, math.ceil(fraction * total / 2))
        mask[:half] = True
        mask[total - half :] = True
    return mask


def masked_adam_step(params: np.ndarray, state: AdamState, grad: np.ndarray, mask: np.ndarray):
    """One Adam iteration with the weight update restricted to ``mask``.

    Epsilon sits inside the square root: ``u = lr * sqrt(1-b2^i)/(1-b1^i) * m / sqrt(v + eps)``.
    Returns ``(params, state, u)`` where ``u`` covers every coordinate.
    """
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient contains non-finite entries")
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    i = state.step + 1
    scale = state.lr * math.sqrt(1.0 - b2**i) / (1.0 - b1**i)
    u = scale * m / np.sqrt(v + state.eps)
    new_params = params - np.where(mask, u, 0.0)
    return new_params, replace(state, m=m, v=v, step=i), u


class PhaseResult(NamedTuple):
    params: np.ndarray
    state: AdamState
    update: np.ndarray | None
    skipped: bool = False


def run_training_phase(
    layout: StudentLayout,
    params: np.ndarray,
    state: AdamState,
    buffer: SampleBuffer,
    mask: np.ndarray,
    iterations: int,
    batch_size: int,
    rng: np.random.Generator,
    prev_update: np.ndarray | None = None,
) -> PhaseResult:
    """K masked Adam steps on mini-batches drawn from the buffer's horizon window."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if len(buffer) == 0:
        return PhaseResult(params, state, prev_update, skipped=True)
    update = prev_update
    for _ in range(iterations):
        x, y = buffer.gather(buffer.sample(batch_size, rng))
        _, grad, _ = loss_and_grad(layout, params, x, y)
        params, state, update = masked_adam_step(params, state, grad, mask)
    return PhaseResult(params, state, update)
