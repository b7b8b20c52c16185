"""Command-line front end.

One subcommand per pipeline stage: solve a task with the reference solver,
generate task designs, build a weight bank, train the condition-to-weights
network, run one-shot inference, benchmark methods against the oracle, and
export field comparisons. Every command supports --json for machine
consumption. Exit codes: 0 success, 2 validation, 3 training, 4 numerical,
5 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, bench, doe, hypernet
from .errors import NumericalError, TrainingError, ValidationError
from .fdsolver import (Grid, SolverSettings, outlet_means, solve,
                       write_field_csv)
from .model import (OperatingCondition, ToolkitConfig, VARIABLE_NAMES,
                    load_config, to_nondim)
from .pinn import TrainingConfig, evaluate_field, train_base_pinn

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRAINING = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


def _parse_task(text: str) -> OperatingCondition:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ValidationError(
            f"--task expects 4 comma-separated values ({', '.join(VARIABLE_NAMES)}), got {text!r}")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ValidationError(f"--task: {exc}") from exc
    return OperatingCondition(*values)


def _parse_grid(text: str) -> Grid:
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            n = int(parts[0])
            return Grid(n, n)
        if len(parts) == 2:
            return Grid(int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise ValidationError(f"--grid: {exc}") from exc
    raise ValidationError(f"--grid expects N or NxM, got {text!r}")


def _emit(args, payload: dict, human_lines):
    if args.json:
        json.dump(payload, sys.stdout, indent=2, default=str)
        sys.stdout.write("\n")
    else:
        for line in human_lines:
            print(line)


def _load_cfg(args) -> ToolkitConfig:
    return load_config(args.config) if args.config else ToolkitConfig()


def _center_task(cfg: ToolkitConfig) -> OperatingCondition:
    b = cfg.ranges.bounds()
    return OperatingCondition(*(0.5 * (b[:, 0] + b[:, 1])))


def _cmd_solve(args):
    cfg = _load_cfg(args)
    cond = _parse_task(args.task) if args.task else _center_task(cfg)
    grid = _parse_grid(args.grid)
    settings = SolverSettings(outer_tol=args.tol, fluid_scheme=args.scheme)
    sol = solve(to_nondim(cond, cfg.scale, cfg.coefficients), grid, settings)
    outlets = outlet_means(sol)
    outlets_c = [cfg.scale.t_ref + cfg.scale.t_span * v for v in outlets]
    lines = [f"solved {grid.n_phi}x{grid.n_z} in {sol.sweeps} sweeps"
             f" (final change {sol.final_change:.2e})"]
    for j, (nd, c) in enumerate(zip(outlets, outlets_c), start=1):
        lines.append(f"  sector {j} outlet mean: {nd:.6f} nondim = {c:.2f} degC")
    if args.out:
        write_field_csv(sol, args.out, cfg.scale)
        lines.append(f"field written to {args.out}")
    _emit(args, {"sweeps": sol.sweeps, "final_change": sol.final_change,
                 "outlet_means_nondim": list(map(float, outlets)),
                 "outlet_means_c": list(map(float, outlets_c)),
                 "field_csv": args.out}, lines)


def _cmd_design(args):
    cfg = _load_cfg(args)
    if args.kind == "ff":
        levels = tuple(int(v) for v in args.levels.split(","))
        design = doe.full_factorial(cfg.ranges, levels)
    else:
        design = doe.orthogonal_design(cfg.ranges, args.size,
                                       args.levels_per_var, seed=args.seed)
    report = doe.validate_design(design, cfg.ranges)
    lines = [report.summary()]
    if args.out:
        doe.write_task_table(design.tasks, args.out)
        lines.append(f"tasks written to {args.out}")
    _emit(args, {"name": design.name, "method": design.method,
                 "size": len(design), "balanced": report.balanced,
                 "has_duplicates": report.has_duplicates,
                 "min_pairwise_distance": report.min_pairwise_distance,
                 "coverage": report.coverage, "tasks_csv": args.out}, lines)


def _train_cfg_from(args) -> TrainingConfig:
    return TrainingConfig(learning_rate=args.lr, max_steps=args.max_steps)


def _cmd_train_bank(args):
    cfg = _load_cfg(args)
    if args.tasks_csv:
        tasks = doe.load_task_table(args.tasks_csv)
        design = doe.TaskDesign(name=Path(args.tasks_csv).stem, tasks=tasks,
                                level_spec={}, method="external")
    else:
        design = doe.orthogonal_design(cfg.ranges, args.size,
                                       args.levels_per_var, seed=args.seed)
    train_cfg = _train_cfg_from(args)
    lines = []

    def progress(i, task, report):
        lines.append(f"  task {i}: {report.steps} steps ({report.stop_reason}),"
                     f" loss {task.final_losses['total']:.3e}")

    bank = hypernet.build_bank(design, train_cfg, cfg.ranges, cfg.scale,
                               cfg.coefficients, base_seed=args.seed,
                               progress=progress)
    hypernet.save_bank(bank, args.bank_dir)
    losses = [e.final_losses["total"] for e in bank.entries]
    lines.append(f"bank of {len(bank)} tasks ({design.name}) written to {args.bank_dir}")
    lines.append(f"final losses: min {min(losses):.3e}, max {max(losses):.3e}")
    _emit(args, {"bank_dir": args.bank_dir, "design": design.name,
                 "size": len(bank), "loss_min": min(losses),
                 "loss_max": max(losses)}, lines)


def _cmd_train_hypernet(args):
    cfg = _load_cfg(args)
    bank = hypernet.load_bank(args.bank_dir)
    if args.validation_csv:
        val_tasks = doe.load_task_table(args.validation_csv)
    else:
        val_tasks = doe.load_validation_tasks()
    grid = _parse_grid(args.grid)
    settings = SolverSettings()
    validation = [(c, solve(to_nondim(c, cfg.scale, cfg.coefficients), grid, settings))
                  for c in val_tasks]
    hcfg = hypernet.HypernetTrainConfig(
        learning_rate=args.lr, max_epochs=args.max_epochs,
        val_every=args.val_every, patience=args.patience, seed=args.seed)
    model, report = hypernet.train_hypernet(bank, validation, hcfg)
    hypernet.save_model(model, args.model_out)
    lines = [f"trained for {report.epochs} epochs ({report.stop_reason}),"
             f" best at {report.best_epoch}",
             f"best validation field MAE: {report.best_val_mae:.5f} nondim"
             f" = {report.best_val_mae * cfg.scale.t_span:.2f} degC",
             f"model written to {args.model_out}"]
    _emit(args, {"model": args.model_out, "epochs": report.epochs,
                 "stop_reason": report.stop_reason,
                 "best_epoch": report.best_epoch,
                 "best_val_mae_nondim": report.best_val_mae,
                 "wall_seconds": report.wall_seconds}, lines)


def _cmd_infer(args):
    cfg = _load_cfg(args)
    model = hypernet.load_model(args.model)
    cond = _parse_task(args.task) if args.task else _center_task(cfg)
    grid = _parse_grid(args.grid)
    sol = hypernet.infer_field(model, cond, grid, cfg.scale, cfg.coefficients)
    outlets = outlet_means(sol)
    outlets_c = [cfg.scale.t_ref + cfg.scale.t_span * v for v in outlets]
    lines = [f"inferred {grid.n_phi}x{grid.n_z} field (no training, no solver)"]
    for j, (nd, c) in enumerate(zip(outlets, outlets_c), start=1):
        lines.append(f"  sector {j} outlet mean: {nd:.6f} nondim = {c:.2f} degC")
    if args.out:
        write_field_csv(sol, args.out, cfg.scale)
        lines.append(f"field written to {args.out}")
    _emit(args, {"outlet_means_nondim": list(map(float, outlets)),
                 "outlet_means_c": list(map(float, outlets_c)),
                 "field_csv": args.out}, lines)


def _cmd_benchmark(args):
    cfg = _load_cfg(args)
    model = hypernet.load_model(args.model) if args.model else None
    bank = hypernet.load_bank(args.bank_dir) if args.bank_dir else None
    tasks = (doe.load_task_table(args.tasks_csv) if args.tasks_csv
             else doe.load_test_tasks())
    methods = tuple(m.strip() for m in args.methods.split(","))
    report = bench.run_benchmark(
        model, bank, tasks, grid=_parse_grid(args.grid),
        scale=cfg.scale, cmap=cfg.coefficients, methods=methods,
        train_cfg=_train_cfg_from(args) if bench.METHOD_BASE_PINN in methods else None,
        seed=args.seed, timing=not args.no_timing,
        timing_grid=_parse_grid(args.timing_grid))
    lines = [report.summary()]
    if args.out:
        bench.export_report(report, args.out)
        lines.append(f"report written to {args.out}")
    agg = {m: {"mae_c": v[0], "max_c": v[1]}
           for m, v in report.aggregate_means().items()}
    _emit(args, {"aggregates": agg, "config_hash": report.config_hash,
                 "failures": len(report.failures()),
                 "timings": [{"operation": t.operation, "seconds": t.seconds,
                              "runs": t.runs} for t in report.timings],
                 "report_csv": args.out}, lines)


def _cmd_export_field(args):
    cfg = _load_cfg(args)
    cond = _parse_task(args.task) if args.task else _center_task(cfg)
    grid = _parse_grid(args.grid)
    params = to_nondim(cond, cfg.scale, cfg.coefficients)
    solutions = {"oracle": solve(params, grid, SolverSettings())}
    if args.model:
        model = hypernet.load_model(args.model)
        solutions["hypernet"] = hypernet.infer_field(model, cond, grid)
    if not args.skip_base_pinn:
        task_net, _ = train_base_pinn(params, _train_cfg_from(args),
                                      seed=args.seed, condition=cond)
        solutions["base-pinn"] = evaluate_field(task_net, grid)
    paths = bench.export_field_set(solutions, args.dir, cfg.scale)
    lines = [f"wrote {len(paths)} field files to {args.dir}:"]
    lines += [f"  {p}" for p in paths]
    _emit(args, {"dir": args.dir, "files": [str(p) for p in paths]}, lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aphtherm",
        description="Thermal-field toolkit for a tri-sector rotary regenerator: "
                    "reference solver, per-task sector nets, and one-shot "
                    "condition-to-weights inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with ranges/scale/coefficients")
    common.add_argument("--seed", type=int, default=0, help="base random seed")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common],
                       help="run the finite-difference reference solver on one task")
    p.add_argument("--task", help="Tin1,Tin2,Tin3,m1 (default: box center)")
    p.add_argument("--grid", default="240", help="N or NxM nodes (default 240)")
    p.add_argument("--tol", type=float, default=1e-8, help="outer sweep tolerance")
    p.add_argument("--scheme", default="backward-euler",
                   choices=["backward-euler", "trapezoid"], help="fluid marching scheme")
    p.add_argument("--out", help="write the field CSV here")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("design", parents=[common], help="generate a task design")
    p.add_argument("--kind", choices=["ff", "oa"], default="oa")
    p.add_argument("--levels", default="7,5,3,3", help="ff level counts per variable")
    p.add_argument("--size", type=int, default=25, help="oa design size")
    p.add_argument("--levels-per-var", type=int, default=5, help="oa levels per variable")
    p.add_argument("--out", help="write the task CSV here")
    p.set_defaults(func=_cmd_design)

    p = sub.add_parser("train-bank", parents=[common],
                       help="train sector nets for every design task")
    p.add_argument("--tasks-csv", help="task table to train on (default: generate)")
    p.add_argument("--size", type=int, default=25)
    p.add_argument("--levels-per-var", type=int, default=5)
    p.add_argument("--bank-dir", required=True, help="output bank directory")
    p.add_argument("--max-steps", type=int, default=10000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=_cmd_train_bank)

    p = sub.add_parser("train-hypernet", parents=[common],
                       help="fit the condition-to-weights network on a bank")
    p.add_argument("--bank-dir", required=True)
    p.add_argument("--model-out", required=True, help="output .npz model path")
    p.add_argument("--validation-csv", help="validation tasks (default: bundled)")
    p.add_argument("--grid", default="60", help="validation oracle grid")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--max-epochs", type=int, default=30000)
    p.add_argument("--val-every", type=int, default=100)
    p.add_argument("--patience", type=int, default=50)
    p.set_defaults(func=_cmd_train_hypernet)

    p = sub.add_parser("infer", parents=[common],
                       help="one-shot field inference from a trained model")
    p.add_argument("--model", required=True, help=".npz model path")
    p.add_argument("--task", help="Tin1,Tin2,Tin3,m1 (default: box center)")
    p.add_argument("--grid", default="240")
    p.add_argument("--out", help="write the field CSV here")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("benchmark", parents=[common],
                       help="compare inference methods against the oracle")
    p.add_argument("--model", help=".npz model path")
    p.add_argument("--bank-dir", help="bank for the nearest-neighbor baseline")
    p.add_argument("--tasks-csv", help="tasks to evaluate (default: bundled test set)")
    p.add_argument("--methods", default="hypernet,nearest-neighbor",
                   help="comma list of hypernet,nearest-neighbor,base-pinn")
    p.add_argument("--grid", default="60", help="error evaluation grid")
    p.add_argument("--timing-grid", default="240", help="grid for timing rows")
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--max-steps", type=int, default=10000, help="base-pinn steps")
    p.add_argument("--lr", type=float, default=1e-3, help="base-pinn learning rate")
    p.add_argument("--out", help="write the report CSVs here")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("export-field", parents=[common],
                       help="write oracle/hypernet/base-pinn fields for one task")
    p.add_argument("--task", help="Tin1,Tin2,Tin3,m1 (default: box center)")
    p.add_argument("--grid", default="60")
    p.add_argument("--model", help=".npz model path (adds the hypernet field)")
    p.add_argument("--skip-base-pinn", action="store_true",
                   help="skip training the per-task comparison net")
    p.add_argument("--max-steps", type=int, default=10000, help="base-pinn steps")
    p.add_argument("--lr", type=float, default=1e-3, help="base-pinn learning rate")
    p.add_argument("--dir", required=True, help="output directory")
    p.set_defaults(func=_cmd_export_field)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
