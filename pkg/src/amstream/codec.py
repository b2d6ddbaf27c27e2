"""Wire formats for model deltas (downlink), sample batches (uplink) and control records.

All integers are little-endian. Compressed sections are gzip members written
with a fixed header (mtime 0, OS byte 255) and deflate level 6, so encoding is
byte-deterministic.

Delta ("AMSD", version 1)::

    magic[4] version[1] phase[u32] P[u32] M[u32] gzip(bitmask)[M] S[u32] values[2*S]

The bitmask holds ceil(P/8) bytes, bit j stored LSB-first in byte j // 8.
Values are IEEE binary16 in ascending index order.

Uplink ("AMSU", version 1)::

    magic[4] version[1] client[u32] count[u32] timestamps[f32 * count] L[u32] gzip(features)[L]

Features are the binary16 cell grids of all samples, concatenated.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

DELTA_MAGIC = b"AMSD"
UPLINK_MAGIC = b"AMSU"
VERSION = 1
GZIP_LEVEL = 6
CONTROL_SIZE = 12
FLAG_SLOWDOWN = 0x1

_GZIP_HEADER = b"\x1f\x8b\x08\x00" + b"\x00\x00\x00\x00" + b"\x00\xff"


class CodecError(ValueError):
    pass


class BadMagic(CodecError):
    pass


class UnsupportedVersion(CodecError):
    pass


class Truncated(CodecError):
    pass


class IntegrityError(CodecError):
    pass


def gzip_bytes(data: bytes) -> bytes:
    comp = zlib.compressobj(GZIP_LEVEL, zlib.DEFLATED, -zlib.MAX_WBITS)
    body = comp.compress(data) + comp.flush()
    trailer = struct.pack("<II", zlib.crc32(data) & 0xFFFFFFFF, len(data) & 0xFFFFFFFF)
    return _GZIP_HEADER + body + trailer


def gunzip_bytes(data: bytes) -> bytes:
    try:
        d = zlib.decompressobj(16 + zlib.MAX_WBITS)
        out = d.decompress(data)
        if not d.eof:
            raise Truncated("compressed section ends early")
        return out
    except zlib.error as exc:
        raise IntegrityError(f"corrupt compressed section: {exc}") from exc


def to_half(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).astype(np.float16)


@dataclass(eq=False)
class ModelDelta:
    phase: int
    mask: np.ndarray  # bool, length P
    values: np.ndarray  # float16, one per set mask bit, ascending index

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.values = np.asarray(self.values).astype(np.float16)
        if self.values.shape != (int(self.mask.sum()),):
            raise IntegrityError("value count must equal mask popcount")

    @property
    def total_params(self) -> int:
        return len(self.mask)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @classmethod
    def from_params(cls, phase: int, params: np.ndarray, mask: np.ndarray) -> "ModelDelta":
        mask = np.asarray(mask, dtype=bool)
        return cls(phase=phase, mask=mask, values=to_half(params[mask]))

    def __eq__(self, other):
        if not isinstance(other, ModelDelta):
            return NotImplemented
        return (
            self.phase == other.phase
            and np.array_equal(self.mask, other.mask)
            and self.values.tobytes() == other.values.tobytes()
        )


def _take(data: bytes, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise Truncated(f"need {n} bytes at offset {pos}, have {len(data) - pos}")
    return data[pos : pos + n], pos + n


def _header(data: bytes, magic: bytes) -> int:
    head, pos = _take(data, 0, 5)
    if head[:4] != magic:
        raise BadMagic(f"bad magic {head[:4]!r}, expected {magic!r}")
    if head[4] != VERSION:
        raise UnsupportedVersion(f"unsupported version {head[4]}")
    return pos


def value_section_size(total_params: int, fraction: float) -> int:
    """Bytes of binary16 values carried by a delta that updates ``fraction`` of P."""
    return 2 * min(total_params, math.ceil(fraction * total_params))


def encode_delta(delta: ModelDelta) -> bytes:
    bits = np.packbits(delta.mask, bitorder="little").tobytes()
    packed = gzip_bytes(bits)
    values = delta.values.astype("<f2").tobytes()
    return b"".join(
        [
            DELTA_MAGIC,
            bytes([VERSION]),
            struct.pack("<III", delta.phase, delta.total_params, len(packed)),
            packed,
            struct.pack("<I", len(delta.values)),
            values,
        ]
    )


def decode_delta(data: bytes) -> ModelDelta:
    pos = _header(data, DELTA_MAGIC)
    raw, pos = _take(data, pos, 12)
    phase, total, mlen = struct.unpack("<III", raw)
    packed, pos = _take(data, pos, mlen)
    bits = gunzip_bytes(packed)
    if len(bits) != (total + 7) // 8:
        raise IntegrityError(f"bitmask has {len(bits)} bytes, expected {(total + 7) // 8}")
    mask = np.unpackbits(np.frombuffer(bits, dtype=np.uint8), bitorder="little")[:total]
    mask = mask.astype(bool)
    raw, pos = _take(data, pos, 4)
    (count,) = struct.unpack("<I", raw)
    if count != int(mask.sum()):
        raise IntegrityError(f"value count {count} does not match mask popcount {int(mask.sum())}")
    raw, pos = _take(data, pos, 2 * count)
    if pos != len(data):
        raise IntegrityError(f"{len(data) - pos} trailing bytes after delta")
    values = np.frombuffer(raw, dtype="<f2").astype(np.float16)
    return ModelDelta(phase=phase, mask=mask, values=values)


def apply_delta(params: np.ndarray, delta: ModelDelta) -> np.ndarray:
    if len(params) != delta.total_params:
        raise ValueError(f"delta targets {delta.total_params} params, model has {len(params)}")
    out = np.array(params, dtype=np.float64, copy=True)
    out[delta.mask] = delta.values.astype(np.float64)
    return out


@dataclass(eq=False)
class UplinkBatch:
    client_id: int
    timestamps: np.ndarray  # float32, nondecreasing
    features: np.ndarray  # (count, G, d), held at binary16 precision after decoding

    def __len__(self) -> int:
        return len(self.timestamps)


def encode_uplink(batch: UplinkBatch) -> bytes:
    if len(batch) == 0:
        raise ValueError("refusing to encode an empty uplink batch")
    ts = np.asarray(batch.timestamps, dtype="<f4")
    if np.any(np.diff(ts) < 0):
        raise ValueError("uplink timestamps must be nondecreasing")
    feats = np.asarray(batch.features, dtype=np.float64)
    if feats.shape[0] != len(ts):
        raise ValueError("one feature grid per timestamp")
    payload = gzip_bytes(feats.astype("<f2").tobytes())
    return b"".join(
        [
            UPLINK_MAGIC,
            bytes([VERSION]),
            struct.pack("<II", batch.client_id, len(ts)),
            ts.tobytes(),
            struct.pack("<I", len(payload)),
            payload,
        ]
    )


def decode_uplink(data: bytes, dim: int) -> UplinkBatch:
    """Inverse of :func:`encode_uplink`; ``dim`` is the per-cell feature size."""
    pos = _header(data, UPLINK_MAGIC)
    raw, pos = _take(data, pos, 8)
    client, count = struct.unpack("<II", raw)
    raw, pos = _take(data, pos, 4 * count)
    ts = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    raw, pos = _take(data, pos, 4)
    (plen,) = struct.unpack("<I", raw)
    payload, pos = _take(data, pos, plen)
    if pos != len(data):
        raise IntegrityError(f"{len(data) - pos} trailing bytes after uplink batch")
    flat = np.frombuffer(gunzip_bytes(payload), dtype="<f2")
    if count == 0 or flat.size % (count * dim):
        raise IntegrityError("feature payload does not split into count x cells x dim")
    feats = flat.astype(np.float64).reshape(count, -1, dim)
    return UplinkBatch(client_id=client, timestamps=ts, features=feats)


@dataclass(frozen=True)
class ControlRecord:
    rate: float
    t_update: float
    flags: int = 0


def encode_control(rec: ControlRecord) -> bytes:
    return struct.pack("<ffI", rec.rate, rec.t_update, rec.flags)


def decode_control(data: bytes) -> ControlRecord:
    if len(data) != CONTROL_SIZE:
        raise Truncated(f"control record must be {CONTROL_SIZE} bytes, got {len(data)}")
    rate, t_update, flags = struct.unpack("<ffI", data)
    return ControlRecord(rate, t_update, flags)
