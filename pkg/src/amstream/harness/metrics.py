"""Per-frame metric rows, run aggregates, and their deterministic on-disk form."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER = ("time", "frame_id", "session", "policy", "miou", "sampled", "rate", "t_update", "mode")


def sig6(x: float) -> float:
    """Round to the 6 significant digits used on disk."""
    return float(f"{x:.6g}")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{x:.6g}"
    return str(x)


@dataclass
class MetricsRecord:
    policy: str
    duration: float
    rows: list[tuple] = field(default_factory=list)
    uplink_bytes: int = 0
    downlink_bytes: int = 0
    deltas: int = 0
    gpu_seconds: float = 0.0
    num_clients: int = 1
    stationary: list[bool] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def add(self, time, frame_id, session, miou, sampled, rate, t_update, mode) -> None:
        # values are stored already rounded so the record and its CSV agree exactly
        self.rows.append(
            (sig6(time), int(frame_id), int(session), self.policy, sig6(miou), bool(sampled),
             sig6(rate), sig6(t_update), mode)
        )

    def column(self, name: str) -> np.ndarray:
        i = HEADER.index(name)
        return np.array([r[i] for r in self.rows])

    def session_miou(self, session: int) -> np.ndarray:
        return np.array([r[4] for r in self.rows if r[2] == session])

    def finalize(self) -> "MetricsRecord":
        self.aggregates = compute_aggregates(
            self.rows, self.duration, self.uplink_bytes, self.downlink_bytes,
            self.deltas, self.gpu_seconds, self.num_clients,
        )
        return self

    @property
    def mean_miou(self) -> float:
        return self.aggregates["mean_miou"]


def compute_aggregates(rows, duration, up_bytes, down_bytes, deltas, gpu_seconds, num_clients) -> dict:
    mious = [r[4] for r in rows]
    per_session: dict[int, list[float]] = {}
    for r in rows:
        per_session.setdefault(r[2], []).append(r[4])
    return {
        "frames": len(rows),
        "mean_miou": float(np.mean(mious)) if mious else float("nan"),
        "session_mean_miou": {str(k): float(np.mean(v)) for k, v in sorted(per_session.items())},
        "sampled_frames": int(sum(1 for r in rows if r[5])),
        "uplink_kbps": up_bytes * 8 / duration / 1000 / num_clients,
        "downlink_kbps": down_bytes * 8 / duration / 1000 / num_clients,
        "uplink_bytes": int(up_bytes),
        "downlink_bytes": int(down_bytes),
        "deltas": int(deltas),
        "gpu_seconds": float(gpu_seconds),
        "duration": float(duration),
        "num_clients": int(num_clients),
    }


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def read_rows(path: str | Path) -> list[tuple]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        for t, fid, sess, pol, m, s, rate, tu, mode in rd:
            out.append((float(t), int(fid), int(sess), pol, float(m), s == "1", float(rate), float(tu), mode))
    return out


def emit_metrics(record: MetricsRecord, out_dir: str | Path, stem: str = "metrics") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (per-frame rows) and ``<stem>.summary.json`` (aggregates)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        summary_path = out / f"{stem}.summary.json"
        csv_path.write_text(rows_to_csv(record.rows))
        summary = {"policy": record.policy, **(record.aggregates or record.finalize().aggregates)}
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {out}: {exc}") from exc
    return csv_path, summary_path
