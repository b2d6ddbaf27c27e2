"""Canonical codec byte fixtures.

A fixed set of deltas, uplink batches and control records built from fixed
seeds. Their encodings are checked in under ``tests/golden``; any change to
the wire format shows up as a byte diff against those files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import codec


def golden_cases() -> dict[str, bytes]:
    rng = np.random.default_rng(20240601)
    cases: dict[str, bytes] = {}

    mask = np.zeros(212, dtype=bool)
    mask[[0, 3, 17, 100, 211]] = True
    values = np.array([0.1, -2.5, 65504.0, 1e-3, -0.0])
    cases["delta_small"] = codec.encode_delta(codec.ModelDelta(7, mask, values))

    mask = rng.random(212) < 0.05
    vals = rng.normal(size=int(mask.sum()))
    cases["delta_random5"] = codec.encode_delta(codec.ModelDelta(42, mask, vals))

    full = np.ones(64, dtype=bool)
    cases["delta_full"] = codec.encode_delta(codec.ModelDelta(1, full, np.linspace(-1, 1, 64)))
    cases["delta_empty"] = codec.encode_delta(codec.ModelDelta(3, np.zeros(10, dtype=bool), np.zeros(0)))

    ts = np.array([0.0, 1.0, 2.0333333], dtype=np.float32)
    feats = rng.normal(size=(3, 4, 8))
    cases["uplink_three"] = codec.encode_uplink(codec.UplinkBatch(5, ts, feats))

    cases["control_normal"] = codec.encode_control(codec.ControlRecord(0.6, 10.0, 0))
    cases["control_slowdown"] = codec.encode_control(codec.ControlRecord(0.1, 14.0, codec.FLAG_SLOWDOWN))
    return cases


def write_golden(directory: str | Path) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in sorted(golden_cases().items()):
        p = out / f"{name}.bin"
        p.write_bytes(data)
        paths.append(p)
    return paths


def check_golden(directory: str | Path) -> list[str]:
    """Names whose file is missing or differs from a fresh encoding."""
    d = Path(directory)
    bad = []
    for name, data in sorted(golden_cases().items()):
        p = d / f"{name}.bin"
        if not p.exists() or p.read_bytes() != data:
            bad.append(name)
    return bad
