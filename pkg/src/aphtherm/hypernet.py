"""Condition-to-weights network and the task bank it learns from.

The bank holds trained sector-net weights for a designed set of operating
conditions. A trunk-plus-heads network (4 inputs -> two tanh layers of 256
-> one linear output per sector net, 3 x 354 values) learns the map from
the normalized condition to standardized weight coordinates. After
training, a new condition costs one network evaluation: no solver, no
per-task training.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels, autodiff, network
from .errors import (BankBuildError, EnvelopeError, NumericalError,
                     TrainingError, ValidationError)
from .fdsolver import FieldSolution, Grid
from .model import (CoefficientMap, NondimParams, OperatingCondition,
                    PhysicalRanges, TemperatureScale, VARIABLE_NAMES,
                    normalize_condition, to_nondim)
from .network import SECTOR_NET, AdamState, MlpSpec, param_count
from .pinn import N_SECTORS, SECTOR_PARAMS, TaskPinn, TrainingConfig, train_base_pinn

BANK_FORMAT_VERSION = 1
MODEL_FORMAT_VERSION = 1

# trunk widths of the condition-to-weights net; output is 3 sector heads
TRUNK_WIDTHS = (256, 256)


def hypernet_spec(base_spec: MlpSpec = SECTOR_NET) -> MlpSpec:
    """Network shape mapping a normalized condition to all sector weights.

    The three per-sector linear heads share the trunk, which is identical
    to a single linear output layer of width 3 * param_count(base_spec);
    the output is split back into the per-sector vectors on prediction.
    """
    return MlpSpec((4,) + TRUNK_WIDTHS + (N_SECTORS * param_count(base_spec),))


@dataclass
class WeightBank:
    """Trained tasks plus the design box they were sampled from."""

    entries: list
    ranges: PhysicalRanges
    design_name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("bank must contain at least one entry")
        for i, e in enumerate(self.entries):
            if not isinstance(e, TaskPinn):
                raise ValidationError(f"entry {i} is not a TaskPinn")
            if e.condition is None:
                raise ValidationError(f"entry {i} has no operating condition")

    def __len__(self):
        return len(self.entries)

    def weight_matrix(self):
        """(n_entries, 3 * n_params) array of flat weight vectors."""
        return np.stack([e.flat_weights() for e in self.entries])

    def normalized_conditions(self):
        """(n_entries, 4) conditions mapped into the design box."""
        return np.stack([normalize_condition(e.condition, self.ranges)
                         for e in self.entries])


def _chain_order(U):
    """Training order and warm-start parents for the bank tasks.

    Starts nearest the design centroid, then repeatedly trains the
    untrained task closest to any trained one (its parent). Precomputed
    from the design alone, so the schedule does not depend on how training
    is executed. Returns (order, parent) with parent[i] being a design
    index or None for the root.
    """
    n = U.shape[0]
    d2 = ((U[:, None, :] - U[None, :, :]) ** 2).sum(axis=2)
    start = int(np.argmin(((U - U.mean(axis=0)) ** 2).sum(axis=1)))
    order = [start]
    parent = {start: None}
    remaining = set(range(n)) - {start}
    while remaining:
        rem = sorted(remaining)
        sub = d2[np.ix_(rem, order)]
        flat = int(np.argmin(sub))
        i, j = divmod(flat, sub.shape[1])
        pick, par = rem[i], order[j]
        order.append(pick)
        parent[pick] = par
        remaining.remove(pick)
    return order, parent


def build_bank(design, train_cfg: TrainingConfig = TrainingConfig(),
               ranges: PhysicalRanges = PhysicalRanges(),
               scale: TemperatureScale = TemperatureScale(),
               cmap: CoefficientMap = CoefficientMap(),
               base_seed: int = 0, progress=None) -> WeightBank:
    """Train one TaskPinn per design task, warm-starting along a chain.

    design: a TaskDesign or any object with .tasks (OperatingConditions)
    and .name. Each task's seed is base_seed + its design index, so results
    do not depend on the chain order used to schedule training. If any task
    fails, the rest are still attempted and a BankBuildError carrying the
    partial bank and the failure list is raised at the end.
    """
    tasks = list(design.tasks)
    if not tasks:
        raise ValidationError("design has no tasks")
    U = np.stack([normalize_condition(c, ranges) for c in tasks])
    order, parent = _chain_order(U)
    trained = {}
    failures = []
    for idx in order:
        cond = tasks[idx]
        par = parent[idx]
        warm = trained.get(par) if par is not None else None
        try:
            params = to_nondim(cond, scale, cmap)
            task, report = train_base_pinn(params, train_cfg,
                                           seed=base_seed + idx,
                                           warm_start=warm, condition=cond)
            trained[idx] = task
            if progress is not None:
                progress(idx, task, report)
        except (TrainingError, NumericalError, ValidationError) as exc:
            failures.append((cond, exc))
    entries = [trained[i] for i in range(len(tasks)) if i in trained]
    if failures:
        partial = None
        if entries:
            partial = WeightBank(entries=entries, ranges=ranges,
                                 design_name=getattr(design, "name", ""),
                                 metadata={"base_seed": base_seed, "partial": True})
        raise BankBuildError(
            f"{len(failures)} of {len(tasks)} bank tasks failed",
            partial=partial, failures=failures)
    return WeightBank(entries=entries, ranges=ranges,
                      design_name=getattr(design, "name", ""),
                      metadata={"base_seed": base_seed})


def _condition_dict(c: OperatingCondition):
    return {name: getattr(c, name) for name in VARIABLE_NAMES}


def save_bank(bank: WeightBank, directory):
    """Write a bank as manifest.json plus one JSON file per entry.

    JSON floats round-trip exactly, so load_bank reproduces the weights
    bit for bit.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, e in enumerate(bank.entries):
        name = f"task_{i:03d}.json"
        names.append(name)
        payload = {
            "condition": _condition_dict(e.condition),
            "seed": e.seed,
            "final_losses": e.final_losses,
            "net_sizes": list(e.spec.layer_sizes),
            "weights": [row.tolist() for row in e.weights],
        }
        with open(directory / name, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    manifest = {
        "format_version": BANK_FORMAT_VERSION,
        "design_name": bank.design_name,
        "ranges": {name: list(getattr(bank.ranges, name)) for name in VARIABLE_NAMES},
        "entries": names,
        "metadata": bank.metadata,
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_bank(directory) -> WeightBank:
    """Inverse of save_bank; validates the manifest and entry shapes."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"{directory} has no manifest.json")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != BANK_FORMAT_VERSION:
        raise ValidationError(f"unsupported bank format version {version!r}")
    try:
        ranges = PhysicalRanges(**{k: tuple(v) for k, v in manifest["ranges"].items()})
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad ranges in manifest: {exc}") from exc
    entries = []
    for name in manifest["entries"]:
        with open(directory / name, encoding="utf-8") as fh:
            payload = json.load(fh)
        spec = MlpSpec(tuple(payload["net_sizes"]))
        entries.append(TaskPinn(
            weights=np.array(payload["weights"], dtype=float),
            final_losses=payload["final_losses"],
            seed=int(payload["seed"]),
            condition=OperatingCondition(**payload["condition"]),
            spec=spec))
    return WeightBank(entries=entries, ranges=ranges,
                      design_name=manifest.get("design_name", ""),
                      metadata=manifest.get("metadata", {}))


@dataclass(frozen=True)
class StandardizationStats:
    """Per-coordinate affine map applied to weight vectors before learning."""

    mean: np.ndarray
    std: np.ndarray

    STD_FLOOR = 1e-8  # coordinates identical across the bank stay finite

    @classmethod
    def from_bank(cls, bank: WeightBank) -> "StandardizationStats":
        W = bank.weight_matrix()
        mean = W.mean(axis=0)
        std = np.maximum(W.std(axis=0), cls.STD_FLOOR)
        return cls(mean=mean, std=std)

    def standardize(self, W):
        return (np.asarray(W, dtype=float) - self.mean) / self.std

    def destandardize(self, Z):
        return np.asarray(Z, dtype=float) * self.std + self.mean


@dataclass
class HypernetModel:
    """Trained condition-to-weights network plus its decoding context."""

    weights: np.ndarray
    stats: StandardizationStats
    ranges: PhysicalRanges
    base_spec: MlpSpec = SECTOR_NET
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        expected = param_count(self.spec)
        if self.weights.shape != (expected,):
            raise ValidationError(
                f"hypernet weights must have shape ({expected},), got {self.weights.shape}")

    @property
    def spec(self) -> MlpSpec:
        return hypernet_spec(self.base_spec)


def _normalize_lenient(condition, ranges):
    b = ranges.bounds()
    return (condition.as_array() - b[:, 0]) / (b[:, 1] - b[:, 0])


ENVELOPE_SLACK = 0.10  # fraction of each range allowed outside the box


def predict_weights(model: HypernetModel, condition: OperatingCondition) -> TaskPinn:
    """Predict sector-net weights for a condition; no training involved.

    Conditions outside the design box raise a warning; more than 10% of a
    range outside raises EnvelopeError, since the weight map has no support
    there.
    """
    u = _normalize_lenient(condition, model.ranges)
    too_far = (u < -ENVELOPE_SLACK) | (u > 1.0 + ENVELOPE_SLACK)
    if np.any(too_far):
        bad = int(np.argmax(too_far))
        raise EnvelopeError(
            f"{VARIABLE_NAMES[bad]}={getattr(condition, VARIABLE_NAMES[bad])!r} is more "
            f"than {ENVELOPE_SLACK:.0%} of the range outside the design box")
    outside = (u < 0.0) | (u > 1.0)
    if np.any(outside):
        bad = int(np.argmax(outside))
        warnings.warn(
            f"{VARIABLE_NAMES[bad]}={getattr(condition, VARIABLE_NAMES[bad])!r} is outside "
            "the design box; prediction is an extrapolation", stacklevel=2)
    z = _kernels.mlp_forward(model.weights, model.spec.layer_sizes, u[None, :])[0]
    flat = model.stats.destandardize(z)
    return TaskPinn(weights=flat.reshape(N_SECTORS, param_count(model.base_spec)),
                    final_losses={}, seed=-1, condition=condition,
                    spec=model.base_spec)


def infer_field(model: HypernetModel, condition: OperatingCondition,
                grid: Grid = Grid(),
                scale: Optional[TemperatureScale] = None,
                cmap: Optional[CoefficientMap] = None) -> FieldSolution:
    """Condition -> field in one shot: predict weights, evaluate the nets.

    Never trains and never runs the reference solver. When scale and cmap
    are provided the matching NondimParams are attached for bookkeeping.
    """
    from .pinn import evaluate_field
    task = predict_weights(model, condition)
    params = to_nondim(condition, scale, cmap) if scale and cmap else None
    return evaluate_field(task, grid, params=params)


def nearest_neighbor_weights(bank: WeightBank, condition: OperatingCondition) -> TaskPinn:
    """Bank entry nearest in normalized condition space; ties take the
    lowest bank index."""
    u = _normalize_lenient(condition, bank.ranges)
    U = np.stack([_normalize_lenient(e.condition, bank.ranges) for e in bank.entries])
    d2 = ((U - u) ** 2).sum(axis=1)
    return bank.entries[int(np.argmin(d2))]


@dataclass(frozen=True)
class HypernetTrainConfig:
    """Training controls for the condition-to-weights network."""

    learning_rate: float = 1e-4
    max_epochs: int = 30000
    val_every: int = 100
    min_delta: float = 1e-6   # required improvement of the validation MAE
    patience: int = 50        # validation checks without improvement
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.max_epochs < 1 or self.val_every < 1 or self.patience < 1:
            raise ValidationError("max_epochs, val_every, patience must be >= 1")
        if self.min_delta < 0:
            raise ValidationError("min_delta must be nonnegative")


@dataclass
class HypernetTrainReport:
    epochs: int
    stop_reason: str
    best_epoch: int
    best_val_mae: float
    train_loss_history: np.ndarray
    val_epochs: np.ndarray
    val_history: np.ndarray
    wall_seconds: float


def _field_mae(weights3, base_spec, oracle: FieldSolution):
    """Combined fluid+metal MAE of a weight triple against an oracle field."""
    grid = oracle.grid
    PP, ZZ = np.meshgrid(grid.phi_nodes(), grid.z_nodes(), indexing="ij")
    X = np.column_stack([PP.ravel(), ZZ.ravel()])
    err = 0.0
    for j in range(N_SECTORS):
        Y = _kernels.mlp_forward(weights3[j], base_spec.layer_sizes, X)
        err += np.abs(Y[:, 0] - oracle.fluid[j].ravel()).sum()
        err += np.abs(Y[:, 1] - oracle.metal[j].ravel()).sum()
    return err / (N_SECTORS * 2 * X.shape[0])


def train_hypernet(bank: WeightBank, validation, cfg: HypernetTrainConfig = HypernetTrainConfig()):
    """Fit the condition-to-weights map on a bank.

    validation: list of (OperatingCondition, FieldSolution) pairs used for
    early stopping: every val_every epochs the current map is decoded into
    fields and compared against the oracles; training stops once the mean
    MAE stops improving by min_delta for patience checks. The weights at
    the stopping epoch are kept (the validation MAE passes through a
    shallow transient minimum long before the weight fit converges, so
    restoring that earlier snapshot would return an underfit map; the
    plateau point carries both a converged fit and a near-best MAE).
    Returns (HypernetModel, HypernetTrainReport).
    """
    if not validation:
        raise ValidationError("validation tasks are required for early stopping")
    base_spec = bank.entries[0].spec
    spec = hypernet_spec(base_spec)
    U = bank.normalized_conditions()
    stats = StandardizationStats.from_bank(bank)
    Z = stats.standardize(bank.weight_matrix())
    # lenient on purpose: assessment tasks may sit slightly outside the box
    Uval = np.stack([_normalize_lenient(c, bank.ranges) for c, _ in validation])
    oracles = [o for _, o in validation]

    # fresh trunk, zero output layer: the initial prediction is the bank
    # mean in every coordinate
    w = network.init_weights(spec, cfg.seed)
    s = spec.layer_sizes
    head = s[-2] * s[-1] + s[-1]
    w[-head:] = 0.0

    def loss_fn(wt):
        pred = network.forward_tape(spec, wt, U)
        err = pred - Z
        return (err * err).mean()

    def val_mae(wv):
        Zp = _kernels.mlp_forward(wv, spec.layer_sizes, Uval)
        maes = []
        for i, oracle in enumerate(oracles):
            flat = stats.destandardize(Zp[i])
            maes.append(_field_mae(flat.reshape(N_SECTORS, -1), base_spec, oracle))
        return float(np.mean(maes))

    state = AdamState.fresh(w.size)
    best_val = val_mae(w)
    best_epoch = 0
    bad_checks = 0
    train_hist = np.empty(cfg.max_epochs)
    val_eps = [0]
    val_hist = [best_val]
    stop_reason = "max_epochs"
    epochs = 0
    t0 = time.perf_counter()
    for ep in range(1, cfg.max_epochs + 1):
        total, grad = network.loss_gradient(loss_fn, w)
        state, w = network.adam_step(state, grad, w, cfg.learning_rate)
        train_hist[ep - 1] = total
        epochs = ep
        if ep % cfg.val_every == 0:
            v = val_mae(w)
            val_eps.append(ep)
            val_hist.append(v)
            if v < best_val - cfg.min_delta:
                best_val = v
                best_epoch = ep
                bad_checks = 0
            else:
                bad_checks += 1
                if bad_checks >= cfg.patience:
                    stop_reason = "validation_plateau"
                    break
    wall = time.perf_counter() - t0
    model = HypernetModel(weights=w, stats=stats, ranges=bank.ranges,
                          base_spec=base_spec,
                          metadata={"bank_size": len(bank),
                                    "design_name": bank.design_name,
                                    "best_epoch": best_epoch,
                                    "seed": cfg.seed})
    report = HypernetTrainReport(
        epochs=epochs, stop_reason=stop_reason, best_epoch=best_epoch,
        best_val_mae=best_val, train_loss_history=train_hist[:epochs].copy(),
        val_epochs=np.array(val_eps), val_history=np.array(val_hist),
        wall_seconds=wall)
    return model, report


def save_model(model: HypernetModel, path):
    """Write the model as a single .npz archive."""
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "ranges": {name: list(getattr(model.ranges, name)) for name in VARIABLE_NAMES},
        "base_sizes": list(model.base_spec.layer_sizes),
        "metadata": model.metadata,
    }
    np.savez(path, weights=model.weights, mean=model.stats.mean,
             std=model.stats.std, meta=np.array(json.dumps(meta)))


def load_model(path) -> HypernetModel:
    """Inverse of save_model; validates version and shapes."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"{path}: not a readable model file ({exc})") from exc
    try:
        meta = json.loads(str(data["meta"]))
        weights = data["weights"]
        stats = StandardizationStats(mean=data["mean"], std=data["std"])
    except KeyError as exc:
        raise ValidationError(f"{path}: missing model field {exc}") from exc
    if meta.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported model format version {meta.get('format_version')!r}")
    ranges = PhysicalRanges(**{k: tuple(v) for k, v in meta["ranges"].items()})
    return HypernetModel(weights=weights, stats=stats, ranges=ranges,
                         base_spec=MlpSpec(tuple(meta["base_sizes"])),
                         metadata=meta.get("metadata", {}))
