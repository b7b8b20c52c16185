"""End-to-end guarantees, one test per shipped claim.

Each test prints a single `criterion N: PASS/FAIL (detail)` line; run with
`pytest tests/test_acceptance.py -v -s` to watch them complete. Expensive
artifacts (the 25-task bank, the trained condition-to-weights model, oracle
fields) are module-scoped fixtures shared by criteria 6, 7, and 9, and the
whole module finishes in roughly ten to fifteen minutes on one core.
"""

import time

import numpy as np
import pytest

from aphtherm import _kernels, doe, hypernet, network
from aphtherm.bench import mae_max_error, time_median
from aphtherm.fdsolver import (Grid, SolverSettings, apply_interfaces,
                               energy_balance_residual,
                               grid_independence_study, solve)
from aphtherm.hypernet import (build_bank, infer_field,
                               nearest_neighbor_weights, predict_weights,
                               train_hypernet)
from aphtherm.model import (CoefficientMap, NondimParams, OperatingCondition,
                            PhysicalRanges, TemperatureScale, to_nondim)
from aphtherm.network import SECTOR_NET
from aphtherm.pinn import (TrainingConfig, evaluate_field, loss_and_gradient,
                           loss_total, sample_collocation, train_base_pinn,
                           train_base_pinn_restarts)

RANGES = PhysicalRanges()
SCALE = TemperatureScale()
CMAP = CoefficientMap()
CENTER = OperatingCondition(300.0, 45.0, 45.0, 700.0)
EVAL_GRID = Grid(60, 60)


def _verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    return ok, line


def _random_conditions(n, seed):
    rng = np.random.default_rng(seed)
    b = RANGES.bounds()
    X = b[:, 0] + rng.uniform(size=(n, 4)) * (b[:, 1] - b[:, 0])
    return [OperatingCondition(*row) for row in X]


def _nondim_mae(sol, oracle):
    return mae_max_error(sol, oracle, SCALE)[0] / SCALE.t_span


def _error_table(model, bank, tasks, oracles):
    """(hypernet, nearest-neighbor) per-task nondimensional MAE arrays."""
    maes_h = np.array([_nondim_mae(evaluate_field(predict_weights(model, c),
                                                  EVAL_GRID), o)
                       for c, o in zip(tasks, oracles)])
    maes_n = np.array([_nondim_mae(evaluate_field(nearest_neighbor_weights(bank, c),
                                                  EVAL_GRID), o)
                       for c, o in zip(tasks, oracles)])
    return maes_h, maes_n


@pytest.fixture(scope="module")
def bank25():
    design = doe.orthogonal_design(RANGES, size=25, levels_per_var=5, seed=0)
    t0 = time.perf_counter()
    bank = build_bank(design, TrainingConfig(), RANGES, SCALE, CMAP, base_seed=0)
    return bank, time.perf_counter() - t0


@pytest.fixture(scope="module")
def val_pairs():
    tasks = doe.load_validation_tasks()
    t0 = time.perf_counter()
    pairs = [(c, solve(to_nondim(c, SCALE, CMAP), EVAL_GRID, SolverSettings()))
             for c in tasks]
    return pairs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def test_set():
    tasks = doe.load_test_tasks()
    t0 = time.perf_counter()
    oracles = [solve(to_nondim(c, SCALE, CMAP), EVAL_GRID, SolverSettings())
               for c in tasks]
    return tasks, oracles, time.perf_counter() - t0


@pytest.fixture(scope="module")
def model25(bank25, val_pairs):
    bank, _ = bank25
    pairs, _ = val_pairs
    t0 = time.perf_counter()
    model, report = train_hypernet(bank, pairs)
    return model, report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def base_pinn_runs():
    tasks = [CENTER] + _random_conditions(2, seed=42)
    runs = []
    for cond in tasks:
        t0 = time.perf_counter()
        net, _ = train_base_pinn_restarts(to_nondim(cond, SCALE, CMAP),
                                          TrainingConfig(), seeds=(0, 1, 2),
                                          condition=cond)
        wall = time.perf_counter() - t0
        oracle = solve(to_nondim(cond, SCALE, CMAP), EVAL_GRID, SolverSettings())
        mae = _nondim_mae(evaluate_field(net, EVAL_GRID), oracle)
        runs.append((cond, net, mae, wall))
    return runs


def test_criterion_1_derivative_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    sizes = SECTOR_NET.layer_sizes
    worst_j = worst_h = 0.0
    for trial in range(50):
        w = network.init_weights(SECTOR_NET, 1000 + trial)
        X = rng.uniform(0.05, 0.95, size=(4, 2))
        _, J, H = _kernels.mlp_derivatives(w, sizes, X)
        h = 1e-5
        Jn = np.empty_like(J)
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = h
            Jn[:, :, k] = (_kernels.mlp_forward(w, sizes, X + dx)
                           - _kernels.mlp_forward(w, sizes, X - dx)) / (2 * h)
        worst_j = max(worst_j, np.abs(J - Jn).max() / np.abs(Jn).max())
        h2 = 1e-4
        dz = np.array([0.0, h2])
        Hn = (_kernels.mlp_forward(w, sizes, X + dz)
              - 2 * _kernels.mlp_forward(w, sizes, X)
              + _kernels.mlp_forward(w, sizes, X - dz)) / h2 ** 2
        worst_h = max(worst_h, np.abs(H[:, :, 1] - Hn).max() / np.abs(Hn).max())

    params = to_nondim(CENTER, SCALE, CMAP)
    colloc = sample_collocation(0, n_interior=64, n_inlet=16, n_interface=16,
                                n_end=8)
    w3 = np.stack([network.init_weights(SECTOR_NET, s) for s in (0, 1, 2)])
    _, _, grad = loss_and_gradient(w3, colloc, params)
    flat = w3.reshape(-1)
    g = grad.reshape(-1)
    gmax = np.abs(g).max()
    worst_g = 0.0
    for k in rng.choice(flat.size, size=100, replace=False):
        h = 1e-5 * (1.0 + abs(flat[k]))
        wp, wm = flat.copy(), flat.copy()
        wp[k] += h
        wm[k] -= h
        fp, _ = loss_total(wp.reshape(3, -1), colloc, params)
        fm, _ = loss_total(wm.reshape(3, -1), colloc, params)
        num = (fp - fm) / (2 * h)
        worst_g = max(worst_g, abs(num - g[k]) / max(abs(g[k]), 1e-3 * gmax))
    elapsed = time.perf_counter() - t0
    ok, line = _verdict(
        1, worst_j < 1e-5 and worst_h < 1e-3 and worst_g < 1e-5 and elapsed < 60,
        f"jacobian rel {worst_j:.1e} < 1e-5, z-curvature rel {worst_h:.1e} < 1e-3, "
        f"loss grad rel {worst_g:.1e} < 1e-5, {elapsed:.1f}s < 60s")
    assert ok, line


def test_criterion_2_oracle_sanity():
    t0 = time.perf_counter()
    grid = Grid(120, 120)
    uniform = solve(NondimParams(theta_in=(0.5, 0.5, 0.5), ntu=(3.0, 2.5, 2.5),
                                 pe=(50.0, 50.0, 50.0)), grid, SolverSettings())
    udev = max(np.abs(uniform.fluid - 0.5).max(), np.abs(uniform.metal - 0.5).max())
    worst_violation = 0.0
    for cond in _random_conditions(50, seed=7):
        params = to_nondim(cond, SCALE, CMAP)
        sol = solve(params, grid, SolverSettings())
        lo, hi = min(params.theta_in), max(params.theta_in)
        for block in (sol.fluid, sol.metal):
            worst_violation = max(worst_violation, lo - block.min(),
                                  block.max() - hi)
    settings = SolverSettings()
    sol = solve(to_nondim(CENTER, SCALE, CMAP), grid, settings)
    gap = float(np.max(np.abs(sol.metal[:, 0, :]
                              - apply_interfaces(sol.metal[:, -1, :]))))
    elapsed = time.perf_counter() - t0
    ok, line = _verdict(
        2, udev < 1e-10 and worst_violation < 1e-9 and gap <= settings.outer_tol
        and elapsed < 300,
        f"uniform dev {udev:.1e} < 1e-10, max-principle violation "
        f"{worst_violation:.1e} < 1e-9 over 50 tasks, interface gap {gap:.1e} "
        f"<= {settings.outer_tol:.0e}, {elapsed:.0f}s < 300s")
    assert ok, line


def test_criterion_3_grid_trend():
    t0 = time.perf_counter()
    rows = grid_independence_study(
        to_nondim(CENTER, SCALE, CMAP),
        [Grid(n, n) for n in (30, 60, 120, 240, 480)])
    d = [r.diff_prev for r in rows[1:]]
    monotone = d[0] > d[1] > d[2]
    ratio = d[3] / d[0]
    elapsed = time.perf_counter() - t0
    ok, line = _verdict(
        3, monotone and ratio < 0.15 and elapsed < 900,
        f"diffs {d[0]:.2e} > {d[1]:.2e} > {d[2]:.2e}, 240->480 is "
        f"{100 * ratio:.1f}% of 30->60 (< 15%), {elapsed:.0f}s < 900s")
    assert ok, line


def test_criterion_4_energy_balance():
    sol = solve(to_nondim(CENTER, SCALE, CMAP), Grid(240, 240),
                SolverSettings(outer_tol=1e-10))
    resid = abs(energy_balance_residual(sol))
    ok, line = _verdict(4, resid < 1e-6, f"|energy residual| {resid:.2e} < 1e-6")
    assert ok, line


def test_criterion_5_base_pinn_fidelity(base_pinn_runs):
    maes = [mae for _, _, mae, _ in base_pinn_runs]
    walls = [wall for _, _, _, wall in base_pinn_runs]
    ok, line = _verdict(
        5, all(m < 0.012 for m in maes) and all(w < 600 for w in walls),
        "MAE " + "/".join(f"{m:.4f}" for m in maes) + " < 0.012 nondim, "
        + "/".join(f"{w:.0f}" for w in walls) + "s < 600s per task")
    assert ok, line


def test_criterion_6_end_to_end(bank25, val_pairs, test_set, model25):
    bank, t_bank = bank25
    _, t_val = val_pairs
    tasks, oracles, t_test = test_set
    model, report, t_model = model25
    t0 = time.perf_counter()
    maes_h, maes_n = _error_table(model, bank, tasks, oracles)
    Z = model.stats.standardize(bank.weight_matrix())
    Zp = _kernels.mlp_forward(model.weights, model.spec.layer_sizes,
                              bank.normalized_conditions())
    rmse = float(np.sqrt(((Zp - Z) ** 2).mean()))
    total = t_bank + t_val + t_test + t_model + (time.perf_counter() - t0)
    ok, line = _verdict(
        6, maes_h.mean() < 0.02 and maes_h.mean() <= maes_n.mean()
        and rmse < 0.2 and total < 10800,
        f"test MAE {maes_h.mean():.4f} < 0.02, nearest-neighbor "
        f"{maes_n.mean():.4f} (hypernet wins), reconstruction RMSE "
        f"{rmse:.2e} < 0.2, {total:.0f}s < 3h; {report.epochs} epochs, "
        f"stop {report.stop_reason}")
    assert ok, line


def test_criterion_7_speed_ratios(model25):
    model, _, _ = model25
    grid = Grid(240, 240)
    params = to_nondim(CENTER, SCALE, CMAP)
    t_fd = time_median(lambda: solve(params, grid, SolverSettings()), 3).seconds
    t_infer = time_median(lambda: infer_field(model, CENTER, grid), 3).seconds
    t_train = time_median(
        lambda: train_base_pinn(params, TrainingConfig(), seed=0), 1).seconds
    fd_ratio = t_fd / t_infer
    train_ratio = t_train / t_infer
    ok, line = _verdict(
        7, fd_ratio >= 10.0 and train_ratio >= 20.0,
        f"inference {t_infer * 1e3:.1f} ms vs solve {t_fd:.2f}s = "
        f"{fd_ratio:.0f}x (>= 10x), vs cold training {t_train:.0f}s = "
        f"{train_ratio:.0f}x (>= 20x)")
    assert ok, line


def test_criterion_8_design_properties():
    ff = doe.full_factorial(RANGES, levels=(7, 5, 3, 3))
    X = np.stack([t.as_array() for t in ff.tasks])
    b = RANGES.bounds()
    ff_ok = (len(ff) == 315
             and len({tuple(r) for r in X}) == 315
             and np.all(X >= b[:, 0]) and np.all(X <= b[:, 1]))
    l4 = doe.validate_design(doe.orthogonal_design(RANGES, size=4,
                                                   levels_per_var=2))
    l49 = doe.validate_design(doe.orthogonal_design(RANGES, size=49,
                                                    levels_per_var=7))
    balance_ok = l4.balanced and l49.balanced and not l4.has_duplicates \
        and not l49.has_duplicates
    val = doe.load_validation_tasks()
    tst = doe.load_test_tasks()
    tables_ok = (len(val) == 19 and len(tst) == 19
                 and val[0] == OperatingCondition(206.36, 45.01, 39.56, 769.01)
                 and val[18] == OperatingCondition(403.56, 33.74, 29.93, 611.67)
                 and tst[0] == OperatingCondition(220.76, 64.23, 56.86, 632.42)
                 and tst[18] == OperatingCondition(398.48, 53.51, 49.94, 746.56))
    ok, line = _verdict(
        8, ff_ok and balance_ok and tables_ok,
        f"FF315 distinct in-box: {ff_ok}, L4/L49 balanced: {balance_ok}, "
        f"19+19 bundled tasks match: {tables_ok}")
    assert ok, line


def test_criterion_9_determinism(bank25, val_pairs, test_set, model25,
                                 base_pinn_runs):
    bank, _ = bank25
    pairs, _ = val_pairs
    tasks, oracles, _ = test_set
    model, _, _ = model25

    design = doe.orthogonal_design(RANGES, size=25, levels_per_var=5, seed=0)
    bank2 = build_bank(design, TrainingConfig(), RANGES, SCALE, CMAP, base_seed=0)
    banks_equal = np.array_equal(bank2.weight_matrix(), bank.weight_matrix())

    model2, _ = train_hypernet(bank2, pairs)
    models_equal = np.array_equal(model2.weights, model.weights) \
        and np.array_equal(model2.stats.mean, model.stats.mean) \
        and np.array_equal(model2.stats.std, model.stats.std)

    h1, n1 = _error_table(model, bank, tasks, oracles)
    h2, n2 = _error_table(model2, bank2, tasks, oracles)
    tables_equal = np.array_equal(h1, h2) and np.array_equal(n1, n2)

    pinns_equal = True
    for cond, net, _, _ in base_pinn_runs:
        again, _ = train_base_pinn_restarts(to_nondim(cond, SCALE, CMAP),
                                            TrainingConfig(), seeds=(0, 1, 2),
                                            condition=cond)
        pinns_equal = pinns_equal and np.array_equal(again.weights, net.weights)

    ok, line = _verdict(
        9, banks_equal and models_equal and tables_equal and pinns_equal,
        f"bank bit-identical: {banks_equal}, model bit-identical: "
        f"{models_equal}, error tables identical: {tables_equal}, "
        f"per-task nets identical: {pinns_equal}")
    assert ok, line
