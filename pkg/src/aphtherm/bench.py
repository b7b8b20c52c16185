"""Error and timing comparisons between inference methods and the oracle.

Benchmarks pit the condition-to-weights network against a nearest-neighbor
baseline (and optionally freshly trained task nets) on held-out tasks, with
the finite-difference solver as ground truth. Errors are reported in both
degrees C and nondimensional units; timings are medians over repeats.
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import (AphthermError, EnvelopeError, NumericalError,
                     TrainingError, ValidationError)
from .fdsolver import FieldSolution, Grid, SolverSettings, solve, write_field_csv
from .hypernet import (HypernetModel, WeightBank, infer_field,
                       nearest_neighbor_weights, predict_weights)
from .model import (CoefficientMap, OperatingCondition, TemperatureScale,
                    VARIABLE_NAMES, to_nondim)
from .pinn import TrainingConfig, evaluate_field, train_base_pinn

METHOD_HYPERNET = "hypernet"
METHOD_NEAREST = "nearest-neighbor"
METHOD_BASE_PINN = "base-pinn"
KNOWN_METHODS = (METHOD_HYPERNET, METHOD_NEAREST, METHOD_BASE_PINN)


def mae_max_error(a: FieldSolution, b: FieldSolution,
                  scale: TemperatureScale = TemperatureScale(),
                  fields=("fluid", "metal")):
    """Mean and maximum absolute temperature difference in degrees C.

    Averages over the selected fields (default both fluid and metal) across
    all sectors; both solutions must share a grid. Symmetric in its
    arguments.
    """
    if a.grid != b.grid:
        raise ValidationError(
            f"grid mismatch: {a.grid.n_phi}x{a.grid.n_z} vs {b.grid.n_phi}x{b.grid.n_z}")
    for f in fields:
        if f not in ("fluid", "metal"):
            raise ValidationError(f"unknown field {f!r}; expected 'fluid' or 'metal'")
    if not fields:
        raise ValidationError("fields must name at least one of 'fluid', 'metal'")
    diff = np.concatenate([np.abs(getattr(a, f) - getattr(b, f)).ravel()
                           for f in fields])
    return float(diff.mean() * scale.t_span), float(diff.max() * scale.t_span)


def time_operation(thunk: Callable[[], object]) -> float:
    """Wall-clock seconds for one execution, monotonic clock."""
    t0 = time.perf_counter()
    thunk()
    return time.perf_counter() - t0


@dataclass(frozen=True)
class TimingRow:
    """Median wall time of an operation plus the observed spread."""

    operation: str
    seconds: float       # median over runs
    spread: float        # max - min over runs
    runs: int


def time_median(thunk: Callable[[], object], repeats: int = 3) -> TimingRow:
    """Median-of-repeats timing; the spread column records max - min."""
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    samples = [time_operation(thunk) for _ in range(repeats)]
    return TimingRow(operation="", seconds=float(statistics.median(samples)),
                     spread=float(max(samples) - min(samples)), runs=repeats)


@dataclass(frozen=True)
class TaskRow:
    """One (task, method) error measurement."""

    task: int
    method: str
    condition: OperatingCondition
    mae_c: float
    max_c: float
    mae_nondim: float
    max_nondim: float
    status: str = "ok"     # "ok" or "failed"
    message: str = ""


@dataclass
class BenchmarkReport:
    rows: list
    timings: list
    bank_design: str = ""
    config_hash: str = ""

    def aggregate_means(self) -> dict:
        """method -> (mean MAE degC, mean max-error degC) over ok rows."""
        out = {}
        for method in sorted({r.method for r in self.rows}):
            ok = [r for r in self.rows if r.method == method and r.status == "ok"]
            if ok:
                out[method] = (float(np.mean([r.mae_c for r in ok])),
                               float(np.mean([r.max_c for r in ok])))
        return out

    def failures(self) -> list:
        return [r for r in self.rows if r.status != "ok"]

    def summary(self) -> str:
        lines = [f"benchmark of {len({r.task for r in self.rows})} tasks"
                 f" against bank {self.bank_design or '<unnamed>'}",
                 f"config hash: {self.config_hash}"]
        for method, (mae, mx) in self.aggregate_means().items():
            lines.append(f"  {method}: mean MAE {mae:.3f} degC, mean max error {mx:.3f} degC")
        for t in self.timings:
            lines.append(f"  timing {t.operation}: {t.seconds:.4f} s"
                         f" (median of {t.runs}, spread {t.spread:.4f})")
        n_fail = len(self.failures())
        if n_fail:
            lines.append(f"  FAILED rows: {n_fail}")
        return "\n".join(lines)


def config_hash(config: dict) -> str:
    """12-hex digest of a JSON-serializable configuration mapping.

    Canonical encoding (sorted keys, no whitespace variation) so equal
    configs always hash equally and any change shows up.
    """
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _benchmark_config(grid, settings, scale, cmap, methods, seed, train_cfg):
    cfg = {
        "grid": [grid.n_phi, grid.n_z],
        "settings": asdict(settings),
        "scale": asdict(scale),
        "coefficients": asdict(cmap),
        "methods": list(methods),
        "seed": seed,
    }
    if train_cfg is not None:
        cfg["train"] = asdict(train_cfg)
    return cfg


def run_benchmark(model: Optional[HypernetModel], bank: Optional[WeightBank],
                  tasks, grid: Grid = Grid(60, 60),
                  settings: SolverSettings = SolverSettings(),
                  scale: TemperatureScale = TemperatureScale(),
                  cmap: CoefficientMap = CoefficientMap(),
                  methods=(METHOD_HYPERNET, METHOD_NEAREST),
                  train_cfg: Optional[TrainingConfig] = None,
                  seed: int = 0, timing: bool = True,
                  timing_grid: Grid = Grid(),
                  timing_repeats: int = 3) -> BenchmarkReport:
    """Per-task error table plus operation timings.

    For every task the oracle field is solved once, then each requested
    method produces a field and its error row. A method failing on a task
    yields a row with status "failed" and the run continues. The base-pinn
    method trains from scratch per task (seed + task index) and is costly;
    it is off by default. Timing rows compare one-shot inference against a
    full solve on timing_grid and, when base-pinn is requested, against
    cold training (single run).
    """
    methods = tuple(methods)
    for m in methods:
        if m not in KNOWN_METHODS:
            raise ValidationError(f"unknown method {m!r}; known: {KNOWN_METHODS}")
    if METHOD_HYPERNET in methods and model is None:
        raise ValidationError("hypernet method requires a model")
    if METHOD_NEAREST in methods and bank is None:
        raise ValidationError("nearest-neighbor method requires a bank")
    if METHOD_BASE_PINN in methods and train_cfg is None:
        train_cfg = TrainingConfig()
    rows = []
    for i, cond in enumerate(tasks, start=1):
        try:
            oracle = solve(to_nondim(cond, scale, cmap), grid, settings)
        except (NumericalError, ValidationError) as exc:
            for method in methods:
                rows.append(TaskRow(i, method, cond, float("nan"), float("nan"),
                                    float("nan"), float("nan"), "failed",
                                    f"oracle: {exc}"))
            continue
        for method in methods:
            try:
                if method == METHOD_HYPERNET:
                    sol = infer_field(model, cond, grid)
                elif method == METHOD_NEAREST:
                    sol = evaluate_field(nearest_neighbor_weights(bank, cond), grid)
                else:
                    params = to_nondim(cond, scale, cmap)
                    task_net, _ = train_base_pinn(params, train_cfg,
                                                  seed=seed + i, condition=cond)
                    sol = evaluate_field(task_net, grid)
                mae_c, max_c = mae_max_error(sol, oracle, scale)
                rows.append(TaskRow(i, method, cond, mae_c, max_c,
                                    mae_c / scale.t_span, max_c / scale.t_span))
            except (AphthermError, EnvelopeError, TrainingError, NumericalError) as exc:
                rows.append(TaskRow(i, method, cond, float("nan"), float("nan"),
                                    float("nan"), float("nan"), "failed", str(exc)))
    timings = []
    if timing and tasks:
        probe = tasks[0]
        params = to_nondim(probe, scale, cmap)
        t = time_median(lambda: solve(params, timing_grid, settings), timing_repeats)
        timings.append(TimingRow("fd-solve", t.seconds, t.spread, t.runs))
        if model is not None:
            t = time_median(lambda: infer_field(model, probe, timing_grid),
                            timing_repeats)
            timings.append(TimingRow("hypernet-infer", t.seconds, t.spread, t.runs))
        if bank is not None:
            t = time_median(
                lambda: evaluate_field(nearest_neighbor_weights(bank, probe),
                                       timing_grid), timing_repeats)
            timings.append(TimingRow("nearest-neighbor-infer", t.seconds, t.spread, t.runs))
        if METHOD_BASE_PINN in methods:
            t = time_median(lambda: train_base_pinn(params, train_cfg, seed=seed), 1)
            timings.append(TimingRow("base-pinn-train", t.seconds, t.spread, t.runs))
    cfg = _benchmark_config(grid, settings, scale, cmap, methods, seed,
                            train_cfg if METHOD_BASE_PINN in methods else None)
    return BenchmarkReport(rows=rows, timings=timings,
                           bank_design=bank.design_name if bank is not None else "",
                           config_hash=config_hash(cfg))


ROWS_HEADER = ("task", "method", "Tin1", "Tin2", "Tin3", "m1",
               "mae_c", "max_c", "mae_nondim", "max_nondim", "status", "message")
TIMINGS_HEADER = ("operation", "seconds", "spread", "runs")


def _sibling(path: Path, tag: str, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{suffix}")


def export_report(report: BenchmarkReport, path):
    """Write a report as three files next to each other.

    path itself gets the per-task rows CSV; <stem>_timings.csv the timing
    rows; <stem>_summary.txt a human-readable block with aggregates, design
    name and config hash. Values are written with full precision so
    import_report reproduces the report exactly.
    """
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(ROWS_HEADER)
            for r in report.rows:
                writer.writerow([r.task, r.method]
                                + [repr(float(v)) for v in r.condition.as_array()]
                                + [repr(r.mae_c), repr(r.max_c),
                                   repr(r.mae_nondim), repr(r.max_nondim),
                                   r.status, r.message])
        with open(_sibling(path, "timings", ".csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TIMINGS_HEADER)
            for t in report.timings:
                writer.writerow([t.operation, repr(t.seconds), repr(t.spread), t.runs])
            writer.writerow(["__design__", report.bank_design, "", 0])
            writer.writerow(["__config_hash__", report.config_hash, "", 0])
        with open(_sibling(path, "summary", ".txt"), "w", encoding="utf-8") as fh:
            fh.write(report.summary() + "\n")
    except OSError as exc:
        raise ValidationError(f"cannot write report to {path}: {exc}") from exc


def import_report(path) -> BenchmarkReport:
    """Rebuild a BenchmarkReport written by export_report."""
    path = Path(path)
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader, ()))
            if header != ROWS_HEADER:
                raise ValidationError(f"{path}: unexpected report header {header!r}")
            for rec in reader:
                cond = OperatingCondition(*(float(v) for v in rec[2:6]))
                rows.append(TaskRow(int(rec[0]), rec[1], cond,
                                    float(rec[6]), float(rec[7]),
                                    float(rec[8]), float(rec[9]), rec[10], rec[11]))
    except OSError as exc:
        raise ValidationError(f"cannot read report from {path}: {exc}") from exc
    timings = []
    design = ""
    digest = ""
    tpath = _sibling(path, "timings", ".csv")
    if tpath.exists():
        with open(tpath, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for rec in reader:
                if rec[0] == "__design__":
                    design = rec[1]
                elif rec[0] == "__config_hash__":
                    digest = rec[1]
                else:
                    timings.append(TimingRow(rec[0], float(rec[1]),
                                             float(rec[2]), int(rec[3])))
    return BenchmarkReport(rows=rows, timings=timings,
                           bank_design=design, config_hash=digest)


def export_field_set(solutions: dict, directory,
                     scale: TemperatureScale = TemperatureScale()):
    """Write one field CSV per named solution (e.g. oracle/hypernet/base-pinn).

    Files land in directory as <name>.csv in the solver's field format;
    returns the paths written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, sol in solutions.items():
        p = directory / f"{name}.csv"
        write_field_csv(sol, p, scale)
        paths.append(p)
    return paths
