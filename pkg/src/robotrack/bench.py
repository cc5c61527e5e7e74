"""Benchmark harness: filters x trajectories x seeds x prediction horizons.

Every (trajectory, seed) pair is simulated once and then fed, frame by
frame, to each configured filter. After each correction the filter predicts
``max(horizons)`` frames ahead; the prediction ``h`` frames out is scored
against the reference pose ``h`` frames later. Per-run RMSE values are
averaged over seeds.
"""

from __future__ import annotations

import ast
import configparser
import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .filters import FILTERS
from .filters.gaussian import CD_STEP, GAUSSIAN_FILTERS
from .improbability import GateConfig, GatedFilter
from .noise_sim import (
    DEFAULT_T,
    N_POINTS,
    STREAM_FILTER,
    NoiseConfig,
    make_rng,
    name_key,
    reference_trajectory,
    simulate_run,
)
from .numerics import wrap_angle
from .robot_model import RobotModel, RobotParams

log = logging.getLogger(__name__)

DEFAULT_FILTERS = tuple(GAUSSIAN_FILTERS) + ("PF", "SPPF", "GMSPPF")
UNGATEABLE = frozenset({"PF"})
CSV_COLUMNS = (
    "filter", "gated", "trajectory", "horizon", "pos_rmse_m", "heading_rmse_rad",
    "wall_ms_mean", "tc_ratio", "resets", "rejections", "seeds",
)
TIMING_COLUMNS = ("wall_ms_mean", "tc_ratio")


class LengthMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def rmse_position(reference, predicted) -> float:
    """Root mean squared Euclidean distance between two ``(N, >=2)`` pose lists."""
    ref = np.asarray(reference, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if len(ref) != len(pred):
        raise LengthMismatch(f"{len(ref)} reference poses vs {len(pred)} predictions")
    if len(ref) == 0:
        raise LengthMismatch("no poses to compare")
    d = ref[:, :2] - pred[:, :2]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rmse_heading(reference, predicted) -> float:
    """RMSE of heading differences wrapped to (-pi, pi]."""
    ref = np.asarray(reference, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if ref.shape != pred.shape:
        raise LengthMismatch(f"{ref.shape} reference headings vs {pred.shape} predictions")
    if ref.size == 0:
        raise LengthMismatch("no headings to compare")
    d = wrap_angle(ref - pred)
    return float(np.sqrt(np.mean(d * d)))


def relative_time(times: dict) -> dict:
    """Each entry divided by the smallest one.

    Raises
    ------
    ValueError
        If an entry is not strictly positive.
    """
    if not times:
        return {}
    if any(not (t > 0) for t in times.values()):
        raise ValueError("relative_time needs strictly positive times")
    lo = min(times.values())
    return {k: t / lo for k, t in times.items()}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterSpec:
    name: str
    gated: bool = False

    def __post_init__(self):
        if self.name not in FILTERS:
            raise ValueError(f"unknown filter {self.name!r}; choose from {sorted(FILTERS)}")
        if self.gated and self.name in UNGATEABLE:
            raise ValueError(f"{self.name} is never paired with the improbability gate")

    @property
    def label(self) -> str:
        return f"{self.name}+IF" if self.gated else self.name


@dataclass(frozen=True)
class BenchmarkConfig:
    """Everything that defines a sweep; see :func:`load_config` for the file format."""

    filters: tuple = DEFAULT_FILTERS
    gating: str = "both"  # both | on | off
    trajectories: tuple = (1, 2, 3, 4, 5, 6)
    seeds: tuple = tuple(range(20))
    horizons: tuple = (1, 4, 8)
    T: float = DEFAULT_T
    n_points: int = N_POINTS
    input_mode: str = "schedule"  # schedule | hold
    input_delay: int = 4
    noise: NoiseConfig = NoiseConfig()
    robot: RobotParams = RobotParams()
    gate: GateConfig = GateConfig()
    ukf_alpha: float = 1.0
    ukf_beta: float = 2.0
    ukf_kappa: Optional[float] = None
    cd_step: float = CD_STEP
    pf_particles: int = 600
    pf_ess_threshold: Optional[float] = None
    sppf_particles: int = 300
    sppf_proposal: str = "ukf"
    gmsppf_particles: int = 200
    gmsppf_components: int = 3
    gmsppf_proposal: str = "cdkf"
    gmsppf_em_iters: int = 10
    out_dir: str = "bench_out"
    formats: tuple = ("csv", "json")
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be >= 1")
        if not self.T > 0:
            raise ValueError("sampling period T must be positive")
        if self.gating not in ("both", "on", "off"):
            raise ValueError("gating must be 'both', 'on' or 'off'")
        if self.input_mode not in ("schedule", "hold"):
            raise ValueError("input_mode must be 'schedule' or 'hold'")
        if self.input_delay < 0:
            raise ValueError("input_delay must be >= 0")
        if self.n_points <= max(self.horizons) + 1:
            raise ValueError("runs are too short for the longest horizon")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        for fmt in self.formats:
            if fmt not in ("csv", "json"):
                raise ValueError(f"unknown report format {fmt!r}")
        for name in self.filters:
            if name not in FILTERS:
                raise ValueError(f"unknown filter {name!r}; choose from {sorted(FILTERS)}")

    def filter_specs(self) -> list:
        specs = []
        for name in self.filters:
            if self.gating in ("both", "off") or name in UNGATEABLE:
                specs.append(FilterSpec(name, False))
            if self.gating in ("both", "on") and name not in UNGATEABLE:
                specs.append(FilterSpec(name, True))
        return specs

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                v = {k: list(x) if isinstance(x, tuple) else x for k, x in dataclasses.asdict(v).items()}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


# key in the config file -> (section object or None, field name, parser)
def _tuple_of(kind):
    def parse(v):
        if isinstance(v, (int, float, str)):
            v = (v,)
        return tuple(kind(x) for x in v)
    return parse


def _seeds(v):
    if isinstance(v, int):
        return tuple(range(v))
    return _tuple_of(int)(v)


def _optional_float(v):
    return None if v is None else float(v)


_TOP_KEYS = {
    "bench.filters": ("filters", _tuple_of(str)),
    "bench.gating": ("gating", str),
    "bench.trajectories": ("trajectories", _tuple_of(int)),
    "bench.seeds": ("seeds", _seeds),
    "bench.horizons": ("horizons", _tuple_of(int)),
    "bench.T": ("T", float),
    "bench.n_points": ("n_points", int),
    "bench.input_mode": ("input_mode", str),
    "bench.input_delay": ("input_delay", int),
    "bench.jobs": ("jobs", int),
    "ukf.alpha": ("ukf_alpha", float),
    "ukf.beta": ("ukf_beta", float),
    "ukf.kappa": ("ukf_kappa", _optional_float),
    "cdkf.h": ("cd_step", float),
    "pf.particles": ("pf_particles", int),
    "pf.ess_threshold": ("pf_ess_threshold", _optional_float),
    "sppf.particles": ("sppf_particles", int),
    "sppf.proposal": ("sppf_proposal", str),
    "gmsppf.particles": ("gmsppf_particles", int),
    "gmsppf.components": ("gmsppf_components", int),
    "gmsppf.proposal": ("gmsppf_proposal", str),
    "gmsppf.em_iters": ("gmsppf_em_iters", int),
    "output.dir": ("out_dir", str),
    "output.formats": ("formats", _tuple_of(str)),
}
_SECTIONS = {"noise": ("noise", NoiseConfig), "robot": ("robot", RobotParams), "gate": ("gate", GateConfig)}


def _literal(text: str):
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if "," in text and not text.startswith(("(", "[")):
        return tuple(_literal(part) for part in text.split(",") if part.strip())
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str, base: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkConfig:
    """Apply flat ``section.key = value`` lines to ``base``.

    Lists are comma separated; ``none`` clears optional values. Unknown keys
    raise ``ValueError`` so typos do not pass silently.
    """
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[config]\n" + text)
    top, nested = {}, {}
    for key, raw in parser["config"].items():
        value = _literal(raw)
        if key in _TOP_KEYS:
            name, conv = _TOP_KEYS[key]
            top[name] = conv(value)
            continue
        section, _, sub = key.partition(".")
        if section not in _SECTIONS or not sub:
            raise ValueError(f"unknown configuration key {key!r}")
        attr, cls = _SECTIONS[section]
        names = {f.name: f for f in dataclasses.fields(cls)}
        if sub not in names:
            raise ValueError(f"unknown configuration key {key!r}")
        if isinstance(getattr(cls(), sub), tuple):
            value = _tuple_of(float)(value)
        elif isinstance(getattr(cls(), sub), bool):
            value = bool(value)
        elif isinstance(getattr(cls(), sub), float):
            value = float(value)
        nested.setdefault(attr, {})[sub] = value
    for attr, values in nested.items():
        top[attr] = dataclasses.replace(getattr(base, attr), **values)
    return dataclasses.replace(base, **top)


def load_config(path, base: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read configuration {path}: {exc.strerror}") from exc
    return parse_config_text(text, base)


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------

def make_filter(spec: FilterSpec, model, x0, P0, rng, cfg: BenchmarkConfig):
    name = spec.name
    if name == "UKF" or name == "SRUKF":
        inner = FILTERS[name](model, x0, P0, alpha=cfg.ukf_alpha, beta=cfg.ukf_beta, kappa=cfg.ukf_kappa)
    elif name in ("CDKF", "DD1", "DD2", "SRCDKF"):
        inner = FILTERS[name](model, x0, P0, h=cfg.cd_step)
    elif name == "EKF":
        inner = FILTERS[name](model, x0, P0)
    elif name == "PF":
        inner = FILTERS[name](model, x0, P0, n_particles=cfg.pf_particles, rng=rng, ess_threshold=cfg.pf_ess_threshold)
    elif name == "SPPF":
        inner = FILTERS[name](model, x0, P0, n_particles=cfg.sppf_particles, rng=rng, proposal=cfg.sppf_proposal)
    elif name == "GMSPPF":
        inner = FILTERS[name](
            model, x0, P0, n_components=cfg.gmsppf_components, n_particles=cfg.gmsppf_particles,
            rng=rng, proposal=cfg.gmsppf_proposal, em_iters=cfg.gmsppf_em_iters,
        )
    else:  # pragma: no cover - FilterSpec validates names
        raise ValueError(name)
    return GatedFilter(inner, cfg.gate) if spec.gated else inner


def lookahead_inputs(inputs: np.ndarray, k: int, n: int, mode: str, delay: int) -> np.ndarray:
    """Inputs for the ``n`` steps that follow frame ``k``.

    ``schedule`` uses the planned inputs. ``hold`` uses only commands that
    were already issued at frame ``k`` (those up to ``delay`` frames ahead,
    as commands act with that delay) and holds the last one afterwards.
    Indices past the end of the run repeat the final input.
    """
    last = len(inputs) - 1
    idx = np.minimum(np.arange(k, k + n), last)
    if mode == "hold":
        idx = np.minimum(idx, min(k + max(delay - 1, 0), last))
    return inputs[idx]


@dataclass
class RunResult:
    label: str
    trajectory: int
    seed: int
    pos_rmse: dict
    heading_rmse: dict
    max_pos_error: dict
    step_ms: float
    roll_ms: float
    frames: int
    resets: int
    rejections: int
    error: Optional[str] = None

    def wall_ms(self, horizon: int, max_horizon: int) -> float:
        """Per-cycle time for ``horizon``: step plus that share of the roll."""
        return self.step_ms + self.roll_ms * horizon / max_horizon


def run_filter(spec: FilterSpec, sim, traj, cfg: BenchmarkConfig, model=None) -> RunResult:
    """Feed one simulated run to one filter and score its predictions."""
    if model is None:
        model = RobotModel(cfg.robot, cfg.T, cfg.noise.process_cov(cfg.T), cfg.noise.R)
    H = max(cfg.horizons)
    n = len(sim.measurements)
    ideal = sim.ideal
    rng = make_rng(sim.seed, traj.id, STREAM_FILTER, name_key(spec.label))
    x0 = np.zeros(model.n)
    x0[:3] = sim.measurements[0]
    P0 = cfg.noise.process_cov(cfg.T)
    filt = make_filter(spec, model, x0, P0, rng, cfg)

    preds = np.full((n, H, model.n), np.nan)
    step_ns = roll_ns = 0
    clock = time.perf_counter_ns
    for k in range(1, n):
        ahead = lookahead_inputs(sim.inputs, k, H, cfg.input_mode, cfg.input_delay)
        u = sim.inputs[k - 1]
        y = sim.measurements[k]
        t0 = clock()
        filt.predict(u)
        filt.correct(y)
        t1 = clock()
        preds[k] = filt.predict_ahead(H, ahead)
        t2 = clock()
        step_ns += t1 - t0
        roll_ns += t2 - t1

    pos, head, peak = {}, {}, {}
    for h in cfg.horizons:
        frames = np.arange(1, n - h)
        p = preds[frames, h - 1]
        ref = ideal[frames + h]
        pos[h] = rmse_position(ref[:, :2], p[:, :2])
        head[h] = rmse_heading(ref[:, 2], p[:, 2])
        peak[h] = float(np.max(np.hypot(*(ref[:, :2] - p[:, :2]).T)))
    cycles = n - 1
    return RunResult(
        spec.label, traj.id, sim.seed, pos, head, peak,
        step_ns / cycles / 1e6, roll_ns / cycles / 1e6, cycles,
        int(filt.resets), int(getattr(filt, "rejections", 0)),
    )


def _failed(spec, traj_id, seed, exc) -> RunResult:
    return RunResult(spec.label, traj_id, seed, {}, {}, {}, math.nan, math.nan, 0, 0, 0, error=f"{type(exc).__name__}: {exc}")


def run_work_item(cfg: BenchmarkConfig, traj_id: int, seed: int, specs=None) -> list:
    """All filter configurations on one (trajectory, seed) run.

    The order of the configurations is rotated per item so that slow drifts
    of the machine's speed spread evenly over the filters being timed.
    """
    specs = list(specs) if specs is not None else cfg.filter_specs()
    traj = reference_trajectory(traj_id, cfg.robot, cfg.T, cfg.n_points)
    sim = simulate_run(traj, cfg.noise, seed, cfg.robot)
    model = RobotModel(cfg.robot, cfg.T, cfg.noise.process_cov(cfg.T), cfg.noise.R)
    shift = (seed + traj_id) % len(specs) if specs else 0
    order = specs[shift:] + specs[:shift]
    results = {}
    for spec in order:
        try:
            results[spec] = run_filter(spec, sim, traj, cfg, model)
        except Exception as exc:  # noqa: BLE001 - a failed run must not stop the sweep
            log.warning("run failed: %s trajectory %d seed %d: %s", spec.label, traj_id, seed, exc)
            results[spec] = _failed(spec, traj_id, seed, exc)
    return [results[s] for s in specs]


def _work_item(args):
    return run_work_item(*args)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkReport:
    rows: list
    tc_table: dict
    seeds: list
    config: dict
    runs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "tc_table": {str(h): v for h, v in self.tc_table.items()},
            "seeds": self.seeds,
            "config": self.config,
            "runs": self.runs,
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls(d["rows"], {int(h): v for h, v in d["tc_table"].items()}, d["seeds"], d["config"],
                   d.get("runs", []), d.get("failures", []))

    def row(self, label: str, trajectory, horizon: int) -> dict:
        for r in self.rows:
            if r["label"] == label and r["trajectory"] == trajectory and r["horizon"] == horizon:
                return r
        raise KeyError((label, trajectory, horizon))

    def summary(self, label: str, horizon: int, key: str = "pos_rmse_m") -> float:
        """Mean of ``key`` over trajectories for one filter configuration."""
        vals = [r[key] for r in self.rows if r["label"] == label and r["horizon"] == horizon]
        return float(np.mean(vals))

    def wall_ms(self, label: str) -> float:
        """Mean per-cycle time (step plus full look-ahead roll) over all runs."""
        vals = [r["step_ms"] + r["roll_ms"] for r in self.runs if r["label"] == label]
        return float(np.mean(vals))


def _run_record(r: RunResult) -> dict:
    return {
        "label": r.label, "trajectory": r.trajectory, "seed": r.seed,
        "pos_rmse_m": {str(h): v for h, v in r.pos_rmse.items()},
        "heading_rmse_rad": {str(h): v for h, v in r.heading_rmse.items()},
        "max_pos_error_m": {str(h): v for h, v in r.max_pos_error.items()},
        "step_ms": r.step_ms, "roll_ms": r.roll_ms, "frames": r.frames,
        "resets": r.resets, "rejections": r.rejections,
    }


def assemble_report(cfg: BenchmarkConfig, results: Iterable[RunResult]) -> BenchmarkReport:
    results = list(results)
    specs = cfg.filter_specs()
    H = max(cfg.horizons)
    ok = [r for r in results if r.error is None]
    failures = [{"label": r.label, "trajectory": r.trajectory, "seed": r.seed, "error": r.error}
                for r in results if r.error is not None]

    tc_table = {}
    for h in cfg.horizons:
        times = {}
        for spec in specs:
            ts = [r.wall_ms(h, H) for r in ok if r.label == spec.label]
            if ts:
                times[spec.label] = float(np.mean(ts))
        tc_table[h] = relative_time(times)

    rows = []
    for spec in specs:
        for tid in cfg.trajectories:
            runs = [r for r in ok if r.label == spec.label and r.trajectory == tid]
            for h in cfg.horizons:
                if not runs:
                    continue
                rows.append({
                    "label": spec.label,
                    "filter": spec.name,
                    "gated": spec.gated,
                    "trajectory": tid,
                    "horizon": h,
                    "pos_rmse_m": float(np.mean([r.pos_rmse[h] for r in runs])),
                    "heading_rmse_rad": float(np.mean([r.heading_rmse[h] for r in runs])),
                    "wall_ms_mean": float(np.mean([r.wall_ms(h, H) for r in runs])),
                    "tc_ratio": tc_table[h][spec.label],
                    "resets": int(sum(r.resets for r in runs)),
                    "rejections": int(sum(r.rejections for r in runs)),
                    "seeds": len(runs),
                })
    return BenchmarkReport(rows, tc_table, list(cfg.seeds), cfg.to_dict(), [_run_record(r) for r in ok], failures)


def run_benchmark(cfg: BenchmarkConfig, progress=None) -> BenchmarkReport:
    """Run the full sweep described by ``cfg``.

    Work items are (trajectory, seed) pairs; with ``cfg.jobs > 1`` they run
    in a process pool. Random streams are keyed by trajectory, seed and
    filter label, so serial and parallel runs give identical accuracy
    figures.
    """
    specs = cfg.filter_specs()
    items = [(cfg, tid, seed, specs) for tid in cfg.trajectories for seed in cfg.seeds]
    results = []
    if cfg.jobs == 1 or len(items) == 1:
        for i, item in enumerate(items):
            results.extend(_work_item(item))
            if progress:
                progress(i + 1, len(items))
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for i, chunk in enumerate(pool.map(_work_item, items)):
                results.extend(chunk)
                if progress:
                    progress(i + 1, len(items))
    return assemble_report(cfg, results)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(r[c]) if c != "filter" else r["filter"] for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_report(report: BenchmarkReport, out_dir, formats: Sequence[str] = ("csv", "json"), stem: str = "report") -> list:
    """Write ``report`` as CSV and/or JSON under ``out_dir``; returns the paths."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            path = out / f"{stem}.{fmt}"
            if fmt == "csv":
                path.write_text(report_csv(report))
            elif fmt == "json":
                path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
            else:
                raise ValueError(f"unknown report format {fmt!r}")
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc.strerror or exc}") from exc
    return written


def mask_timing(csv_text: str) -> str:
    """CSV text with the timing columns blanked, for determinism checks."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    if not rows:
        return csv_text
    drop = [rows[0].index(c) for c in TIMING_COLUMNS if c in rows[0]]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(["" if i in drop else v for i, v in enumerate(row)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Threshold sweep
# ---------------------------------------------------------------------------

def sweep_threshold(cfg: BenchmarkConfig, thresholds: Sequence[float], progress=None) -> list:
    """Gated-filter accuracy and rejection counts for each gate threshold.

    Returns one dict per (threshold, filter, horizon) with the position and
    heading RMSE averaged over all trajectories and seeds.
    """
    out = []
    names = [n for n in cfg.filters if n not in UNGATEABLE]
    for thr in thresholds:
        sub = dataclasses.replace(cfg, filters=tuple(names), gating="on", gate=dataclasses.replace(cfg.gate, threshold=float(thr)))
        rep = run_benchmark(sub, progress)
        for spec in sub.filter_specs():
            for h in sub.horizons:
                rows = [r for r in rep.rows if r["label"] == spec.label and r["horizon"] == h]
                if not rows:
                    continue
                out.append({
                    "threshold": float(thr), "filter": spec.label, "horizon": h,
                    "pos_rmse_m": float(np.mean([r["pos_rmse_m"] for r in rows])),
                    "heading_rmse_rad": float(np.mean([r["heading_rmse_rad"] for r in rows])),
                    "rejections": int(sum(r["rejections"] for r in rows)),
                })
    return out


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
