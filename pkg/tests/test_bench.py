import dataclasses
import json

import numpy as np
import pytest

from robotrack.bench import (
    CSV_COLUMNS,
    BenchmarkConfig,
    BenchmarkReport,
    FilterSpec,
    LengthMismatch,
    emit_report,
    lookahead_inputs,
    mask_timing,
    parse_config_text,
    relative_time,
    report_csv,
    rmse_heading,
    rmse_position,
    run_benchmark,
    run_work_item,
)
from robotrack.noise_sim import NoiseConfig


def test_rmse_position_examples():
    a = np.random.default_rng(0).standard_normal((10, 2))
    assert rmse_position(a, a) == 0.0
    assert rmse_position([[0, 0], [0, 0]], [[0, 0], [3, 4]]) == pytest.approx(np.sqrt(12.5))
    d = np.array([0.3, -0.4])
    assert rmse_position(a, a + d) == pytest.approx(0.5)
    with pytest.raises(LengthMismatch):
        rmse_position(a, a[:-1])


def test_rmse_heading_examples():
    h = np.linspace(-3, 3, 7)
    assert rmse_heading(h, h) == 0.0
    assert rmse_heading(h, h + 0.1) == pytest.approx(0.1)
    assert rmse_heading([0.0], [2 * np.pi - 0.1]) == pytest.approx(0.1)
    with pytest.raises(LengthMismatch):
        rmse_heading([0.0, 1.0], [0.0])


def test_relative_time():
    assert relative_time({"a": 3.0}) == {"a": 1.0}
    assert relative_time({"a": 2.0, "b": 4.0, "c": 8.0}) == {"a": 1.0, "b": 2.0, "c": 4.0}
    with pytest.raises(ValueError):
        relative_time({"a": 0.0})


def test_filter_specs_pairing():
    specs = BenchmarkConfig().filter_specs()
    labels = [s.label for s in specs]
    assert "PF+IF" not in labels and "PF" in labels
    assert len(labels) == 19
    for name in ("EKF", "SRCDKF", "SPPF", "GMSPPF"):
        assert name in labels and f"{name}+IF" in labels
    with pytest.raises(ValueError):
        FilterSpec("PF", gated=True)
    with pytest.raises(ValueError):
        FilterSpec("KF")


def test_config_validation():
    with pytest.raises(ValueError):
        BenchmarkConfig(seeds=())
    with pytest.raises(ValueError):
        BenchmarkConfig(horizons=(0, 1))
    with pytest.raises(ValueError):
        BenchmarkConfig(T=0.0)


def test_config_text():
    text = """
    # comment
    bench.filters = EKF, PF
    bench.seeds = 3
    bench.horizons = 1, 4
    bench.T = 0.02
    noise.outlier_prob = 0.05
    noise.r_sigmas = 0.01, 0.01, 0.03
    robot.m = 2.5
    gate.threshold = 9.0
    pf.particles = 100
    ukf.kappa = none
    output.formats = csv
    """
    cfg = parse_config_text(text)
    assert cfg.filters == ("EKF", "PF")
    assert cfg.seeds == (0, 1, 2)
    assert cfg.horizons == (1, 4)
    assert cfg.T == 0.02
    assert cfg.noise.outlier_prob == 0.05 and cfg.noise.r_sigmas == (0.01, 0.01, 0.03)
    assert cfg.robot.m == 2.5
    assert cfg.gate.threshold == 9.0
    assert cfg.pf_particles == 100 and cfg.ukf_kappa is None
    assert cfg.formats == ("csv",)
    with pytest.raises(ValueError):
        parse_config_text("bench.unknown = 1")
    with pytest.raises(ValueError):
        parse_config_text("noise.nope = 1")


def test_lookahead_inputs():
    u = np.arange(10.0)[:, None] * np.ones(3)
    np.testing.assert_array_equal(lookahead_inputs(u, 3, 4, "schedule", 4)[:, 0], [3, 4, 5, 6])
    np.testing.assert_array_equal(lookahead_inputs(u, 3, 8, "hold", 4)[:, 0], [3, 4, 5, 6, 6, 6, 6, 6])
    np.testing.assert_array_equal(lookahead_inputs(u, 8, 4, "schedule", 4)[:, 0], [8, 9, 9, 9])


def small_config(**kw):
    base = dict(filters=("EKF", "PF"), trajectories=(1, 6), seeds=(0, 1), horizons=(1, 4), pf_particles=100)
    base.update(kw)
    return BenchmarkConfig(**base)


@pytest.fixture(scope="module")
def small_report():
    return run_benchmark(small_config())


def test_noise_free_ekf_is_exact():
    cfg = BenchmarkConfig(filters=("EKF",), gating="off", trajectories=(4,), seeds=(0,), horizons=(1,),
                          noise=NoiseConfig(r_sigmas=(0.0, 0.0, 0.0), outlier_prob=0.0))
    rep = run_benchmark(cfg)
    assert rep.rows[0]["pos_rmse_m"] <= 1e-6


def test_report_shape(small_report):
    rep = small_report
    labels = {r["label"] for r in rep.rows}
    assert labels == {"EKF", "EKF+IF", "PF"}
    assert len(rep.rows) == 3 * 2 * 2
    for r in rep.rows:
        assert r["pos_rmse_m"] >= 0 and r["heading_rmse_rad"] >= 0 and r["seeds"] == 2
    for table in rep.tc_table.values():
        vals = list(table.values())
        assert sum(v == 1.0 for v in vals) == 1 and min(vals) == 1.0
    assert rep.row("EKF+IF", 6, 4)["rejections"] > 0
    assert rep.failures == []


def test_report_csv_and_json(small_report, tmp_path):
    paths = emit_report(small_report, tmp_path / "out")
    csv_text = paths[0].read_text()
    lines = csv_text.splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 1 + len(small_report.rows)
    assert sum(len(l.split(",")) for l in lines[1:]) == len(small_report.rows) * len(CSV_COLUMNS)
    loaded = json.loads(paths[1].read_text())
    assert loaded == json.loads(json.dumps(small_report.to_dict()))
    assert BenchmarkReport.from_dict(loaded).to_dict() == json.loads(json.dumps(small_report.to_dict()))
    again = emit_report(small_report, tmp_path / "again")
    assert again[0].read_bytes() == paths[0].read_bytes()
    assert again[1].read_bytes() == paths[1].read_bytes()


def test_empty_filter_list_gives_header_only(tmp_path):
    rep = run_benchmark(small_config(filters=(), trajectories=(1,), seeds=(0,)))
    path = emit_report(rep, tmp_path, ("csv",))[0]
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_emit_report_error_has_path(small_report, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_report(small_report, blocker / "sub")


def test_rmse_deterministic_and_parallel_equal(small_report):
    again = run_benchmark(small_config(jobs=2))
    assert mask_timing(report_csv(again)) == mask_timing(report_csv(small_report))


def test_failures_are_recorded(monkeypatch):
    import robotrack.bench as bench

    real = bench.run_filter

    def flaky(spec, sim, traj, cfg, model=None):
        if spec.label == "EKF" and sim.seed == 1:
            raise FloatingPointError("boom")
        return real(spec, sim, traj, cfg, model)

    monkeypatch.setattr(bench, "run_filter", flaky)
    rep = run_benchmark(small_config(trajectories=(1,)))
    assert len(rep.failures) == 1 and "boom" in rep.failures[0]["error"]
    assert rep.row("EKF", 1, 1)["seeds"] == 1


def test_work_item_order_does_not_change_results():
    cfg = small_config()
    specs = cfg.filter_specs()
    a = run_work_item(cfg, 6, 0, specs)
    b = run_work_item(cfg, 6, 0, specs[::-1])[::-1]
    for x, y in zip(a, b):
        assert x.pos_rmse == y.pos_rmse


def test_hold_mode_runs():
    rep = run_benchmark(small_config(filters=("EKF",), gating="off", trajectories=(6,), seeds=(0,), input_mode="hold"))
    assert rep.rows[0]["pos_rmse_m"] > 0
