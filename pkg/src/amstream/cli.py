"""Command-line entry point: ``amstream {run,compare-strategies,sweep,golden}``.

Every configuration key is also a flag (``--drift-rate 0.0002``); a YAML
config file given with ``--config`` is read first and flags override it.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .harness.config import FIELD_TYPES, ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("amstream")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file of configuration keys (flat or in sections)")
    g = p.add_argument_group("configuration keys (override the file)")
    for name, kind in FIELD_TYPES.items():
        g.add_argument("--" + name.replace("_", "-"), dest="cfg__" + name, default=argparse.SUPPRESS,
                       metavar=kind.split("[")[0].upper())


def _overrides(ns: argparse.Namespace) -> dict:
    return {k[5:]: v for k, v in vars(ns).items() if k.startswith("cfg__")}


def _config(ns: argparse.Namespace) -> ExperimentConfig:
    return load_config(ns.config, _overrides(ns))


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])


def cmd_run(ns) -> int:
    from .harness.experiment import run_experiment
    from .harness.metrics import emit_metrics

    cfg = _config(ns)
    record = run_experiment(cfg)
    csv_path, summary_path = emit_metrics(record, cfg.out_dir, ns.stem or cfg.policy)
    agg = record.aggregates
    print(f"policy={cfg.policy} mean_miou={agg['mean_miou']:.6g} "
          f"uplink_kbps={agg['uplink_kbps']:.6g} downlink_kbps={agg['downlink_kbps']:.6g} "
          f"deltas={agg['deltas']}")
    print(f"wrote {csv_path} {summary_path}")
    return EXIT_OK


def cmd_compare(ns) -> int:
    from .harness.analysis import compare_strategies

    cfg = _config(ns)
    strategies = [s for s in ns.strategies.replace(",", " ").split() if s]
    rows = compare_strategies(cfg, strategies, ns.fractions, ns.seeds, ns.workers)
    table = [[r.strategy, r.fraction, r.mean_miou, r.delta] for r in rows]
    out = Path(cfg.out_dir) / "strategies.csv"
    _write_table(out, ["strategy", "fraction", "mean_miou", "delta_vs_full"], table)
    for r in rows:
        print(f"{r.strategy:16s} fraction={r.fraction:<6g} mean_miou={r.mean_miou:.4f} delta={r.delta:+.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(ns) -> int:
    from .harness.analysis import sweep

    cfg = _config(ns)
    points = sweep(cfg, ns.axis, ns.values, ns.seeds, ns.workers)
    out = Path(cfg.out_dir) / f"sweep_{ns.axis}.csv"
    _write_table(out, [ns.axis, "mean_miou", "downlink_kbps"],
                 [[p.value, p.mean_miou, p.downlink_kbps] for p in points])
    for p in points:
        print(f"{ns.axis}={p.value:<8g} mean_miou={p.mean_miou:.4f} downlink_kbps={p.downlink_kbps:.4g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_golden(ns) -> int:
    from .harness.golden import check_golden, write_golden

    if ns.check:
        bad = check_golden(ns.out)
        if bad:
            print("golden mismatch: " + ", ".join(bad), file=sys.stderr)
            return EXIT_RUNTIME
        print(f"golden fixtures in {ns.out} match")
        return EXIT_OK
    for p in write_golden(ns.out):
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amstream", description="Adaptive model streaming simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its per-frame CSV and summary")
    _add_config_flags(p)
    p.add_argument("--stem", help="output file stem (default: policy name)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare-strategies", help="mean mIoU of each coordinate strategy versus full training")
    _add_config_flags(p)
    p.add_argument("--strategies", default="gradient-guided,random,first,last,first-last")
    p.add_argument("--fractions", type=_float_list, default=[0.2, 0.1, 0.05, 0.01])
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="mean mIoU and downlink rate across values of one knob")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=["horizon", "t_horizon", "t_update"])
    p.add_argument("--values", type=_float_list, required=True, help="comma separated values, seconds")
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("golden", help="write (or --check) the canonical codec byte fixtures")
    p.add_argument("--out", default="tests/golden")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_golden)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
