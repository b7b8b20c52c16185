"""Benchmark harness: error metrics, timings, report serialization."""

import math
import time

import numpy as np
import pytest

from aphtherm import network
from aphtherm.bench import (BenchmarkReport, TaskRow, TimingRow, config_hash,
                            export_field_set, export_report, import_report,
                            mae_max_error, run_benchmark, time_median,
                            time_operation)
from aphtherm.errors import ValidationError
from aphtherm.fdsolver import FieldSolution, Grid
from aphtherm.hypernet import StandardizationStats, WeightBank, hypernet_spec
from aphtherm.hypernet import HypernetModel
from aphtherm.model import OperatingCondition, PhysicalRanges, TemperatureScale
from aphtherm.network import SECTOR_NET
from aphtherm.pinn import TaskPinn, evaluate_field

GRID = Grid(8, 9)


def uniform_solution(value, grid=GRID):
    shape = (3, grid.n_phi, grid.n_z)
    return FieldSolution(fluid=np.full(shape, value),
                         metal=np.full(shape, value), grid=grid)


def handmade_task(seed, condition):
    w = np.stack([network.init_weights(SECTOR_NET, seed + j) for j in range(3)])
    return TaskPinn(weights=w, final_losses={}, seed=seed, condition=condition)


def mean_model(bank):
    spec = hypernet_spec()
    w = network.init_weights(spec, 0)
    s = spec.layer_sizes
    w[-(s[-2] * s[-1] + s[-1]):] = 0.0
    return HypernetModel(weights=w, stats=StandardizationStats.from_bank(bank),
                         ranges=bank.ranges)


@pytest.fixture(scope="module")
def tiny_bank():
    entries = [handmade_task(0, OperatingCondition(250.0, 30.0, 30.0, 650.0)),
               handmade_task(5, OperatingCondition(350.0, 60.0, 60.0, 750.0))]
    return WeightBank(entries=entries, ranges=PhysicalRanges(),
                      design_name="tiny2")


def test_mae_identical_solutions_are_zero():
    a = uniform_solution(0.4)
    assert mae_max_error(a, uniform_solution(0.4)) == (0.0, 0.0)


def test_mae_uniform_offset_in_degrees():
    a = uniform_solution(0.40)
    b = uniform_solution(0.41)
    mae, mx = mae_max_error(a, b)
    assert mae == pytest.approx(5.0)
    assert mx == pytest.approx(5.0)


def test_mae_single_sector_offset_and_field_selection():
    a = uniform_solution(0.5)
    fluid = a.fluid.copy()
    fluid[1] += 0.03
    b = FieldSolution(fluid=fluid, metal=a.metal.copy(), grid=GRID)
    mae, mx = mae_max_error(a, b, fields=("fluid",))
    assert mae == pytest.approx(0.03 * 500.0 / 3.0)
    assert mx == pytest.approx(15.0)
    mae_both, mx_both = mae_max_error(a, b)
    assert mae_both == pytest.approx(0.03 * 500.0 / 6.0)
    assert mx_both == pytest.approx(15.0)
    mae_metal, mx_metal = mae_max_error(a, b, fields=("metal",))
    assert (mae_metal, mx_metal) == (0.0, 0.0)


def test_mae_is_symmetric():
    a = uniform_solution(0.2)
    b = uniform_solution(0.9)
    assert mae_max_error(a, b) == mae_max_error(b, a)


def test_mae_rejects_bad_input():
    a = uniform_solution(0.2)
    with pytest.raises(ValidationError, match="grid mismatch"):
        mae_max_error(a, uniform_solution(0.2, Grid(8, 10)))
    with pytest.raises(ValidationError, match="unknown field"):
        mae_max_error(a, a, fields=("temperature",))
    with pytest.raises(ValidationError):
        mae_max_error(a, a, fields=())


def test_time_operation_and_median():
    assert time_operation(lambda: None) < 0.01
    t = time_operation(lambda: time.sleep(0.01))
    assert 0.005 < t < 0.5
    row = time_median(lambda: None, repeats=3)
    assert row.runs == 3
    assert row.seconds >= 0.0
    assert row.spread >= 0.0
    with pytest.raises(ValidationError):
        time_median(lambda: None, repeats=0)


def test_config_hash_stability_and_sensitivity():
    a = config_hash({"grid": [60, 60], "seed": 0})
    b = config_hash({"seed": 0, "grid": [60, 60]})
    assert a == b
    assert len(a) == 12
    assert int(a, 16) >= 0
    assert config_hash({"grid": [60, 60], "seed": 1}) != a


def test_run_benchmark_structure(tiny_bank):
    model = mean_model(tiny_bank)
    tasks = [OperatingCondition(300.0, 45.0, 45.0, 700.0),
             OperatingCondition(260.0, 35.0, 35.0, 660.0)]
    report = run_benchmark(model, tiny_bank, tasks, grid=Grid(16, 16),
                           timing=False)
    assert len(report.rows) == 4
    assert {r.method for r in report.rows} == {"hypernet", "nearest-neighbor"}
    assert all(r.status == "ok" for r in report.rows)
    for r in report.rows:
        assert r.mae_nondim == pytest.approx(r.mae_c / 500.0)
        assert 0.0 <= r.mae_c <= r.max_c
    assert report.bank_design == "tiny2"
    assert len(report.config_hash) == 12
    means = report.aggregate_means()
    assert set(means) == {"hypernet", "nearest-neighbor"}
    assert report.failures() == []
    assert "benchmark of 2 tasks" in report.summary()


def test_run_benchmark_nearest_neighbor_picks_its_own_entry(tiny_bank):
    cond = tiny_bank.entries[0].condition
    report = run_benchmark(None, tiny_bank, [cond], grid=Grid(16, 16),
                           methods=("nearest-neighbor",), timing=False)
    assert len(report.rows) == 1
    row = report.rows[0]
    from aphtherm.fdsolver import SolverSettings, solve
    from aphtherm.model import CoefficientMap, to_nondim
    oracle = solve(to_nondim(cond, TemperatureScale(), CoefficientMap()),
                   Grid(16, 16), SolverSettings())
    own = evaluate_field(tiny_bank.entries[0], Grid(16, 16))
    mae, mx = mae_max_error(own, oracle)
    assert row.mae_c == pytest.approx(mae, rel=1e-12)
    assert row.max_c == pytest.approx(mx, rel=1e-12)


def test_run_benchmark_input_validation(tiny_bank):
    cond = [OperatingCondition(300.0, 45.0, 45.0, 700.0)]
    with pytest.raises(ValidationError, match="unknown method"):
        run_benchmark(None, tiny_bank, cond, methods=("oracle",))
    with pytest.raises(ValidationError, match="requires a model"):
        run_benchmark(None, tiny_bank, cond, methods=("hypernet",))
    with pytest.raises(ValidationError, match="requires a bank"):
        run_benchmark(None, None, cond, methods=("nearest-neighbor",))


def test_run_benchmark_timing_rows(tiny_bank):
    model = mean_model(tiny_bank)
    tasks = [OperatingCondition(300.0, 45.0, 45.0, 700.0)]
    report = run_benchmark(model, tiny_bank, tasks, grid=Grid(12, 12),
                           timing=True, timing_grid=Grid(16, 16),
                           timing_repeats=1)
    ops = [t.operation for t in report.timings]
    assert ops == ["fd-solve", "hypernet-infer", "nearest-neighbor-infer"]
    assert all(t.seconds > 0 for t in report.timings)
    assert all(t.runs == 1 for t in report.timings)
    assert any("timing fd-solve" in line for line in report.summary().splitlines())


def test_run_benchmark_records_failures_and_continues(tiny_bank):
    model = mean_model(tiny_bank)
    # far enough outside the design box that weight prediction refuses
    out = OperatingCondition(450.0, 45.0, 45.0, 700.0)
    ok = OperatingCondition(300.0, 45.0, 45.0, 700.0)
    report = run_benchmark(model, tiny_bank, [out, ok], grid=Grid(12, 12),
                           timing=False)
    failed = report.failures()
    assert len(failed) == 1
    assert failed[0].method == "hypernet"
    assert failed[0].task == 1
    assert math.isnan(failed[0].mae_c)
    assert failed[0].message != ""
    # nearest neighbor still produced a row for the same task
    nn_rows = [r for r in report.rows if r.method == "nearest-neighbor"]
    assert all(r.status == "ok" for r in nn_rows)
    assert "hypernet" in report.aggregate_means()  # from the ok task
    assert "FAILED rows: 1" in report.summary()


def test_report_round_trip(tmp_path, tiny_bank):
    model = mean_model(tiny_bank)
    tasks = [OperatingCondition(300.0, 45.0, 45.0, 700.0)]
    report = run_benchmark(model, tiny_bank, tasks, grid=Grid(12, 12),
                           timing=True, timing_grid=Grid(12, 12),
                           timing_repeats=1)
    path = tmp_path / "report.csv"
    export_report(report, path)
    assert (tmp_path / "report_timings.csv").exists()
    summary = (tmp_path / "report_summary.txt").read_text()
    assert "benchmark of 1 tasks" in summary
    back = import_report(path)
    assert back.rows == report.rows
    assert back.timings == report.timings
    assert back.bank_design == report.bank_design
    assert back.config_hash == report.config_hash


def test_report_round_trip_preserves_nan_failures(tmp_path):
    cond = OperatingCondition(300.0, 45.0, 45.0, 700.0)
    nan = float("nan")
    report = BenchmarkReport(
        rows=[TaskRow(1, "hypernet", cond, nan, nan, nan, nan,
                      "failed", "oracle: diverged")],
        timings=[TimingRow("fd-solve", 1.25, 0.01, 3)],
        bank_design="L25", config_hash="abc123abc123")
    path = tmp_path / "failed.csv"
    export_report(report, path)
    back = import_report(path)
    assert len(back.rows) == 1
    row = back.rows[0]
    assert row.status == "failed"
    assert row.message == "oracle: diverged"
    assert math.isnan(row.mae_c) and math.isnan(row.max_nondim)
    assert back.timings == report.timings


def test_import_report_rejects_foreign_header(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValidationError, match="header"):
        import_report(path)


def test_empty_report_exports_header_only(tmp_path):
    report = BenchmarkReport(rows=[], timings=[])
    path = tmp_path / "empty.csv"
    export_report(report, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 1
    back = import_report(path)
    assert back.rows == [] and back.timings == []


def test_export_field_set(tmp_path):
    sols = {"oracle": uniform_solution(0.3), "hypernet": uniform_solution(0.4)}
    paths = export_field_set(sols, tmp_path / "fields")
    assert sorted(p.name for p in paths) == ["hypernet.csv", "oracle.csv"]
    header = (tmp_path / "fields" / "oracle.csv").read_text().splitlines()[0]
    assert header.split(",")[:3] == ["sector", "phi", "z"]
