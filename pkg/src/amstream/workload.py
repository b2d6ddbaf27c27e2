"""Synthetic drifting video stream, oracle teacher and the per-cell student MLP.

A "frame" is a grid of cells, each cell a feature vector. Cells are drawn from
class prototypes that rotate slowly in a fixed feature plane (appearance drift) while
the camera pans across a persistent class map (scene motion). Scheduled jumps
redraw the prototypes and the scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

LabelGrid = np.ndarray  # int64 array of shape (G,), entries in [0, C)


@dataclass(frozen=True)
class DriftConfig:
    dim: int = 8
    grid: tuple[int, int] = (8, 8)
    num_classes: int = 4
    fps: float = 30.0
    drift_rate: float = 0.0  # rad per native frame
    jumps: tuple[int, ...] = ()  # frame indices of scene changes
    pan_rate: float = 0.0  # cells per second
    noise: float = 0.1
    appearance: float = 0.5
    proto_scale: float = 1.5
    plane_scale: float = 1.0  # extra spread of prototypes inside the rotation plane
    specialization: float = 0.8
    blob: float = 1.5
    world_length: int = 1024
    family_seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.num_classes <= 0 or self.cells <= 0:
            raise ValueError("dim, grid and num_classes must all be positive")
        if self.dim < 2 and self.drift_rate != 0.0:
            raise ValueError("rotation drift needs dim >= 2")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if list(self.jumps) != sorted(set(self.jumps)) or any(j <= 0 for j in self.jumps):
            raise ValueError("jumps must be strictly increasing positive frame indices")
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "jumps", tuple(int(j) for j in self.jumps))

    @property
    def cells(self) -> int:
        return self.grid[0] * self.grid[1]

    def segment(self, frame_id: int) -> int:
        return sum(1 for j in self.jumps if j <= frame_id)

    def angle(self, frame_id: int) -> float:
        return self.drift_rate * frame_id

    def timestamp(self, frame_id: int) -> float:
        # float32-representable so uplink timestamps survive the wire exactly
        return float(np.float32(frame_id / self.fps))

    def frame_of(self, timestamp: float) -> int:
        return int(round(timestamp * self.fps))


@dataclass(frozen=True, eq=False)
class Frame:
    frame_id: int
    timestamp: float
    cells: np.ndarray  # (G, d)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.timestamp == other.timestamp
            and np.array_equal(self.cells, other.cells)
        )


def rotation_axes(dim: int) -> tuple[int, int]:
    """The two feature axes spanning the drift plane: the middle pair.

    Keeping the plane away from both ends of the input means no positional
    coordinate-selection rule gets the drift-relevant weights for free.
    """
    if dim < 2:
        raise ValueError("rotation needs dim >= 2")
    return dim // 2 - 1, dim // 2


def _axes(cfg: DriftConfig) -> tuple[int, int]:
    # one-dimensional streams cannot drift (validated), any pair is a no-op
    return rotation_axes(cfg.dim) if cfg.dim >= 2 else (0, 0)


def rotate(vectors: np.ndarray, angle: float, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Rotate the ``axes`` coordinate plane of each row by ``angle``."""
    if angle == 0.0:
        return vectors.copy()
    a, b = axes
    c, s = math.cos(angle), math.sin(angle)
    out = vectors.copy()
    x0, x1 = vectors[..., a], vectors[..., b]
    out[..., a] = c * x0 - s * x1
    out[..., b] = s * x0 + c * x1
    return out


@lru_cache(maxsize=64)
def _segment(cfg: DriftConfig, seed: int, seg: int):
    base = np.random.default_rng([cfg.family_seed, 0xBA5E]).normal(
        0.0, cfg.proto_scale, size=(cfg.num_classes, cfg.dim)
    )
    if cfg.dim >= 2:
        base[:, list(rotation_axes(cfg.dim))] *= cfg.plane_scale
    rng = np.random.default_rng([seed, seg, 0x5E6])
    protos = base + rng.normal(0.0, cfg.specialization, size=base.shape)
    rows, length = cfg.grid[0], cfg.world_length
    fields = rng.normal(size=(cfg.num_classes, rows, length))
    if cfg.blob > 0:
        fields = gaussian_filter(fields, sigma=(0, cfg.blob, cfg.blob), mode="wrap")
    class_map = np.argmax(fields, axis=0)
    offsets = rng.normal(0.0, cfg.appearance, size=(rows, length, cfg.dim))
    for arr in (protos, class_map, offsets):
        arr.setflags(write=False)
    return protos, class_map, offsets


def _window_columns(cfg: DriftConfig, frame_id: int) -> np.ndarray:
    start = int(math.floor(cfg.pan_rate * frame_id / cfg.fps))
    return (start + np.arange(cfg.grid[1])) % cfg.world_length


def scene_classes(frame_id: int, cfg: DriftConfig, seed: int) -> np.ndarray:
    """Generating class of each cell (not the teacher label)."""
    _, class_map, _ = _segment(cfg, seed, cfg.segment(frame_id))
    return class_map[:, _window_columns(cfg, frame_id)].reshape(-1)


def generate_frame(t: int, cfg: DriftConfig, seed: int) -> Frame:
    if t < 0:
        raise ValueError(f"frame index must be >= 0, got {t}")
    protos, class_map, offsets = _segment(cfg, seed, cfg.segment(t))
    cols = _window_columns(cfg, t)
    classes = class_map[:, cols].reshape(-1)
    base = protos[classes] + offsets[:, cols, :].reshape(cfg.cells, cfg.dim)
    noise = np.random.default_rng([seed, t, 0xF]).normal(0.0, cfg.noise, size=base.shape)
    cells = rotate(base, cfg.angle(t), _axes(cfg)) + noise
    cells.setflags(write=False)
    return Frame(frame_id=t, timestamp=cfg.timestamp(t), cells=cells)


@dataclass(frozen=True, eq=False)
class TeacherOracle:
    """Nearest-prototype labeler on the true generating distribution.

    ``static`` pins the prototypes (no drift, no jumps) and is mostly useful
    for hand-built examples.
    """

    cfg: DriftConfig | None = None
    seed: int = 0
    static: np.ndarray | None = field(default=None)

    @classmethod
    def from_prototypes(cls, prototypes) -> "TeacherOracle":
        arr = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
        return cls(static=arr)

    @property
    def dim(self) -> int:
        if self.static is not None:
            return self.static.shape[1]
        return self.cfg.dim

    def prototypes(self, frame_id: int) -> np.ndarray:
        if self.static is not None:
            return self.static
        protos, _, _ = _segment(self.cfg, self.seed, self.cfg.segment(frame_id))
        return rotate(protos, self.cfg.angle(frame_id), _axes(self.cfg))


def nearest_prototype(cells: np.ndarray, prototypes: np.ndarray) -> LabelGrid:
    cells = np.asarray(cells, dtype=np.float64)
    if cells.ndim == 1:
        cells = cells[:, None]
    if cells.shape[-1] != prototypes.shape[1]:
        raise ValueError(
            f"cell dimension {cells.shape[-1]} does not match prototype dimension {prototypes.shape[1]}"
        )
    d2 = (
        np.einsum("nd,nd->n", cells, cells)[:, None]
        - 2.0 * cells @ prototypes.T
        + np.einsum("cd,cd->c", prototypes, prototypes)[None, :]
    )
    return np.argmin(d2, axis=1).astype(np.int64)


def teacher_label(frame: Frame, oracle: TeacherOracle) -> LabelGrid:
    return nearest_prototype(frame.cells, oracle.prototypes(frame.frame_id))


# -- student ----------------------------------------------------------------


@dataclass(frozen=True)
class StudentLayout:
    """d -> h (tanh) -> C (softmax), applied to every cell with shared weights.

    Flat parameter order is W1 (d*h, row-major), b1 (h), W2 (h*C), b2 (C).
    """

    dim: int = 8
    hidden: int = 16
    classes: int = 4

    @property
    def size(self) -> int:
        d, h, c = self.dim, self.hidden, self.classes
        return d * h + h + h * c + c

    def layers(self) -> list[tuple[str, slice, tuple[int, ...]]]:
        d, h, c = self.dim, self.hidden, self.classes
        shapes = [("W1", (d, h)), ("b1", (h,)), ("W2", (h, c)), ("b2", (c,))]
        out, start = [], 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            out.append((name, slice(start, start + n), shape))
            start += n
        return out

    def unpack(self, params: np.ndarray):
        if params.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got shape {params.shape}")
        return tuple(params[sl].reshape(shape) for _, sl, shape in self.layers())

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for name, _, shape in self.layers():
            if name.startswith("W"):
                parts.append(rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape).ravel())
            else:
                parts.append(np.zeros(shape))
        return np.concatenate(parts)


@dataclass
class StudentModel:
    layout: StudentLayout
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.layout.size,):
            raise ValueError(f"layout needs {self.layout.size} params, got {self.params.shape}")

    def predict(self, cells: np.ndarray) -> LabelGrid:
        return predict(self.layout, self.params, cells)


def _check_finite(params: np.ndarray) -> None:
    if not np.all(np.isfinite(params)):
        raise ValueError("student parameters contain non-finite values")


def logits(layout: StudentLayout, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2 = layout.unpack(params)
    return np.tanh(x @ w1 + b1) @ w2 + b2


def predict(layout: StudentLayout, params: np.ndarray, cells: np.ndarray) -> LabelGrid:
    return np.argmax(logits(layout, params, cells), axis=-1).astype(np.int64)


def loss_and_grad(layout: StudentLayout, params: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Mean per-cell cross-entropy on stacked cells ``x`` (N, d) with labels ``y`` (N,).

    Returns ``(loss, grad, preds)``.
    """
    _check_finite(params)
    w1, b1, w2, b2 = layout.unpack(params)
    n = x.shape[0]
    hid = np.tanh(x @ w1 + b1)
    z = hid @ w2 + b2
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(total)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()

    dz = ez / total
    dz[rows, y] -= 1.0
    dz /= n
    dh = (dz @ w2.T) * (1.0 - hid * hid)
    grad = np.concatenate(
        [(x.T @ dh).ravel(), dh.sum(axis=0), (hid.T @ dz).ravel(), dz.sum(axis=0)]
    )
    return float(loss), grad, np.argmax(z, axis=1).astype(np.int64)


def student_eval(
    model: StudentModel, frames: Sequence[Frame | np.ndarray], labels: Sequence[LabelGrid]
):
    """Loss, gradient and per-frame predictions for a batch of frames.

    Returns ``(loss, grad, preds)`` where ``preds`` is a list of label grids.
    """
    if len(frames) == 0:
        raise ValueError("batch must be nonempty")
    if len(frames) != len(labels):
        raise ValueError("frames and labels must align")
    cells = [f.cells if isinstance(f, Frame) else np.asarray(f) for f in frames]
    for c, lab in zip(cells, labels):
        if len(c) != len(lab):
            raise ValueError("label grid does not match frame cell count")
    x = np.concatenate(cells, axis=0)
    y = np.concatenate([np.asarray(lab, dtype=np.int64) for lab in labels])
    loss, grad, preds = loss_and_grad(model.layout, model.params, x, y)
    splits = np.cumsum([len(c) for c in cells])[:-1]
    return loss, grad, np.split(preds, splits)


# -- metric -------------------------------------------------------------------


def miou(pred: LabelGrid, truth: LabelGrid, classes) -> float:
    """Mean over ``classes`` of TP / (TP + FN + FP).

    A class absent from both grids scores 1; present in only one scores 0.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth grids must align")
    classes = list(classes)
    if not classes:
        raise ValueError("class set must be nonempty")
    total = 0.0
    for c in classes:
        p = pred == c
        t = truth == c
        union = np.count_nonzero(p | t)
        total += 1.0 if union == 0 else np.count_nonzero(p & t) / union
    return total / len(classes)


def miou_all(pred: LabelGrid, truth: LabelGrid, num_classes: int) -> float:
    """Fast path of :func:`miou` over ``range(num_classes)``."""
    conf = np.bincount(pred * num_classes + truth, minlength=num_classes * num_classes)
    conf = conf.reshape(num_classes, num_classes)
    tp = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    iou = np.where(union == 0, 1.0, tp / np.maximum(union, 1))
    return float(iou.mean())
