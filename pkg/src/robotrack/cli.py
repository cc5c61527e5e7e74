"""Command-line entry point: ``simulate``, ``bench`` and ``sweep-threshold``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from .bench import BenchmarkConfig, emit_report, load_config, run_benchmark, sweep_threshold
from .noise_sim import InvalidTrajectoryId, reference_trajectory, simulate_run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value configuration file")
    p.add_argument("--filters", type=_str_list, help="comma separated filter names, e.g. EKF,UKF,PF")
    p.add_argument("--trajectories", type=_int_list, help="comma separated trajectory ids (1..6)")
    p.add_argument("--seeds", type=int, help="number of seeds; seeds 0..N-1 are used")
    p.add_argument("--horizons", type=_int_list, help="comma separated prediction horizons in frames")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--format", type=_str_list, dest="formats", help="report formats: csv,json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robotrack", description="Mobile-robot tracking filter benchmark")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one simulated run as CSV per trajectory and seed")
    _add_common(p)

    p = sub.add_parser("bench", help="run the benchmark sweep and write the report")
    _add_common(p)
    p.add_argument("--gating", choices=("both", "on", "off"), help="which gate pairings to run")

    p = sub.add_parser("sweep-threshold", help="scan the improbability gate threshold")
    _add_common(p)
    p.add_argument("--thresholds", type=_float_list, default=(3.0, 5.0, 7.8, 11.345, 16.0, 25.0, 50.0),
                   help="comma separated squared-distance thresholds")
    return parser


def config_from_args(args) -> BenchmarkConfig:
    cfg = load_config(args.config) if args.config else BenchmarkConfig()
    overrides = {}
    if args.filters is not None:
        overrides["filters"] = args.filters
    if args.trajectories is not None:
        overrides["trajectories"] = args.trajectories
    if args.seeds is not None:
        overrides["seeds"] = tuple(range(args.seeds))
    if args.horizons is not None:
        overrides["horizons"] = args.horizons
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.formats is not None:
        overrides["formats"] = args.formats
    if getattr(args, "gating", None) is not None:
        overrides["gating"] = args.gating
    return dataclasses.replace(cfg, **overrides)


def _progress(done: int, total: int) -> None:
    print(f"\r{done}/{total} runs", end="" if done < total else "\n", file=sys.stderr, flush=True)


def cmd_simulate(cfg: BenchmarkConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for tid in cfg.trajectories:
        traj = reference_trajectory(tid, cfg.robot, cfg.T, cfg.n_points)
        for seed in cfg.seeds:
            path = out / f"sim_traj{tid}_seed{seed}.csv"
            simulate_run(traj, cfg.noise, seed, cfg.robot).to_csv(path)
            print(path)
    return EXIT_OK


def cmd_bench(cfg: BenchmarkConfig) -> int:
    report = run_benchmark(cfg, _progress)
    for path in emit_report(report, cfg.out_dir, cfg.formats):
        print(path)
    for f in report.failures:
        print(f"failed: {f['label']} trajectory {f['trajectory']} seed {f['seed']}: {f['error']}", file=sys.stderr)
    return EXIT_PARTIAL if report.failures else EXIT_OK


def cmd_sweep_threshold(cfg: BenchmarkConfig, thresholds) -> int:
    rows = sweep_threshold(cfg, thresholds, _progress)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "threshold_sweep.csv"
    cols = ("threshold", "filter", "horizon", "pos_rmse_m", "heading_rmse_rad", "rejections")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_sweep_threshold(cfg, args.thresholds)
    except (ValueError, OSError, InvalidTrajectoryId) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
