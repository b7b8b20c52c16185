"""Per-task sector nets trained on the governing residuals.

Each task trains three small nets (one per sector, inputs (phi, z), outputs
(fluid, metal)) against four loss families: the interior PDE residuals on
quasi-random collocation points, the fluid inlet condition at z = 0, metal
continuity across the sector interfaces (with the counterflow z-flip), and
the zero metal z-derivative at both walls. Training is full-batch Adam on
the exact gradient from the fused kernel.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from . import _kernels, autodiff, network
from .errors import TrainingError, ValidationError
from .fdsolver import FieldSolution, Grid
from .model import NondimParams, OperatingCondition
from .network import SECTOR_NET, AdamState, MlpSpec, param_count

N_SECTORS = 3
SECTOR_PARAMS = param_count(SECTOR_NET)

# interface pair k compares net k against net (k+2) % 3; the first two
# neighbors are counterflow (z flips), the third is parallel
_IFACE_FLIP = (True, True, False)


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the four loss families."""

    pde: float = 1.0
    inlet: float = 10.0
    interface: float = 10.0
    end_derivative: float = 1.0

    def __post_init__(self):
        vals = (self.pde, self.inlet, self.interface, self.end_derivative)
        if any(v < 0 for v in vals):
            raise ValidationError(f"loss weights must be nonnegative, got {vals!r}")
        if all(v == 0 for v in vals):
            raise ValidationError("at least one loss weight must be positive")

    def as_array(self):
        return np.array([self.pde, self.inlet, self.interface, self.end_derivative])


@dataclass(frozen=True)
class CollocationSet:
    """Quasi-random training points, fixed for a whole training run.

    interior: (3, n_interior, 2) points (phi, z) per sector.
    inlet_phi: (3, n_inlet) phi values, evaluated at z = 0.
    iface_a / iface_b: (3, n_interface, 2) paired points; pair k holds
        points on net k and net (k+2) % 3 whose metal outputs must agree,
        with z flipped on the second net for counterflow neighbors.
    end_phi: (3, n_end) phi values, evaluated at both z = 0 and z = 1.
    seed: the sampling seed, kept for provenance.
    """

    interior: np.ndarray
    inlet_phi: np.ndarray
    iface_a: np.ndarray
    iface_b: np.ndarray
    end_phi: np.ndarray
    seed: int

    def __post_init__(self):
        if self.interior.ndim != 3 or self.interior.shape[0] != 3 or self.interior.shape[2] != 2:
            raise ValidationError(f"interior must be (3, n, 2), got {self.interior.shape}")
        for name in ("inlet_phi", "end_phi"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != 3:
                raise ValidationError(f"{name} must be (3, n), got {arr.shape}")
        for name in ("iface_a", "iface_b"):
            arr = getattr(self, name)
            if arr.shape != self.iface_a.shape or arr.ndim != 3 or arr.shape[0] != 3 \
                    or arr.shape[2] != 2:
                raise ValidationError(f"{name} must be (3, n, 2), got {arr.shape}")


def sample_collocation(seed, n_interior=1024, n_inlet=128, n_interface=128,
                       n_end=64) -> CollocationSet:
    """Scrambled Sobol points for every loss family; deterministic in seed."""
    if min(n_interior, n_inlet, n_interface, n_end) < 1:
        raise ValidationError("all collocation counts must be >= 1")
    eng2 = qmc.Sobol(d=2, scramble=True, seed=seed)
    interior = np.stack([eng2.random(n_interior) for _ in range(3)])
    eng1 = qmc.Sobol(d=1, scramble=True, seed=seed + 1)
    inlet_phi = np.stack([eng1.random(n_inlet).ravel() for _ in range(3)])
    iface_z = np.stack([eng1.random(n_interface).ravel() for _ in range(3)])
    end_phi = np.stack([eng1.random(n_end).ravel() for _ in range(3)])
    iface_a = np.empty((3, n_interface, 2))
    iface_b = np.empty((3, n_interface, 2))
    for k in range(3):
        z = iface_z[k]
        iface_a[k, :, 0] = 0.0
        iface_a[k, :, 1] = z
        iface_b[k, :, 0] = 1.0
        iface_b[k, :, 1] = (1.0 - z) if _IFACE_FLIP[k] else z
    return CollocationSet(interior=interior, inlet_phi=inlet_phi, iface_a=iface_a,
                          iface_b=iface_b, end_phi=end_phi, seed=int(seed))


@dataclass(frozen=True)
class TrainingConfig:
    """Training controls for one task's sector nets."""

    learning_rate: float = 1e-3
    max_steps: int = 10000
    loss_tol: float = 1e-6           # stop when total loss drops below this
    plateau_delta: float = 1e-8      # stop when loss improves less than this
    plateau_window: int = 500        # ... over this many steps
    lr_decay_factor: float = 1.0     # optional staircase decay, off by default
    lr_decay_every: int = 0
    n_interior: int = 1024
    n_inlet: int = 128
    n_interface: int = 128
    n_end: int = 64
    loss_weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")
        if self.loss_tol < 0 or self.plateau_delta < 0:
            raise ValidationError("tolerances must be nonnegative")
        if self.plateau_window < 1:
            raise ValidationError("plateau_window must be >= 1")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValidationError("lr_decay_factor must be in (0, 1]")
        if self.lr_decay_every < 0:
            raise ValidationError("lr_decay_every must be >= 0")


@dataclass
class TaskPinn:
    """Trained sector nets for one task.

    weights has shape (3, n_params): one flat weight vector per sector in
    the canonical layout. condition is the physical operating point when
    known (bank entries always carry one).
    """

    weights: np.ndarray
    final_losses: dict
    seed: int
    condition: Optional[OperatingCondition] = None
    spec: MlpSpec = SECTOR_NET

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        expected = (N_SECTORS, param_count(self.spec))
        if self.weights.shape != expected:
            raise ValidationError(
                f"weights must have shape {expected}, got {self.weights.shape}")

    def flat_weights(self):
        return self.weights.reshape(-1)


LOSS_TERM_NAMES = ("pde", "inlet", "interface", "end_derivative")


def _terms_dict(total, terms):
    out = {name: float(v) for name, v in zip(LOSS_TERM_NAMES, terms)}
    out["total"] = float(total)
    return out


def loss_total(weights, colloc: CollocationSet, params: NondimParams,
               loss_weights: LossWeights = LossWeights()):
    """Weighted total loss and the per-family breakdown (kernel-backed)."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (N_SECTORS, SECTOR_PARAMS):
        raise ValidationError(
            f"weights must have shape {(N_SECTORS, SECTOR_PARAMS)}, got {weights.shape}")
    total, terms, _ = _kernels.pinn_loss_grad(
        weights.reshape(-1), SECTOR_NET.layer_sizes, colloc.interior,
        colloc.inlet_phi, colloc.iface_a, colloc.iface_b, colloc.end_phi,
        np.asarray(params.theta_in), np.asarray(params.ntu), np.asarray(params.pe),
        loss_weights.as_array(), want_grad=False)
    return total, _terms_dict(total, terms)


def loss_and_gradient(weights, colloc, params, loss_weights=LossWeights()):
    """Total loss, term breakdown, and d(total)/d(weights) as (3, n) array."""
    weights = np.asarray(weights, dtype=float)
    total, terms, grad = _kernels.pinn_loss_grad(
        weights.reshape(-1), SECTOR_NET.layer_sizes, colloc.interior,
        colloc.inlet_phi, colloc.iface_a, colloc.iface_b, colloc.end_phi,
        np.asarray(params.theta_in), np.asarray(params.ntu), np.asarray(params.pe),
        loss_weights.as_array(), want_grad=True)
    return total, _terms_dict(total, terms), grad.reshape(N_SECTORS, SECTOR_PARAMS)


def residual_conduction(weights_j, x, ntu_j, pe_j):
    """Metal-equation residual of one sector net at points x (N, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    Y, J, H = _kernels.mlp_derivatives(np.asarray(weights_j, dtype=float),
                                       SECTOR_NET.layer_sizes, x)
    T, Tm = Y[:, 0], Y[:, 1]
    return J[:, 1, 0] - ntu_j * (T - Tm) - (1.0 / pe_j) * H[:, 1, 1]


def residual_convection(weights_j, x, ntu_j):
    """Fluid-equation residual of one sector net at points x (N, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    Y, J, _ = _kernels.mlp_derivatives(np.asarray(weights_j, dtype=float),
                                       SECTOR_NET.layer_sizes, x)
    T, Tm = Y[:, 0], Y[:, 1]
    return J[:, 0, 1] - ntu_j * (Tm - T)


def _tape_carries(w, X, need_p, need_q, need_r):
    """Tape-tracked forward pass with the same derivative carries the
    kernels use, so the mechanical tape gradient checks the hand-written
    kernel adjoints to roundoff. Returns (value, d/dphi, d/dz, d2/dz2)
    Tensors (None where not requested)."""
    sizes = SECTOR_NET.layer_sizes
    n = X.shape[0]
    a = autodiff.Tensor(np.asarray(X, dtype=float))
    p = autodiff.Tensor(np.tile([1.0, 0.0], (n, 1))) if need_p else None
    q = autodiff.Tensor(np.tile([0.0, 1.0], (n, 1))) if (need_q or need_r) else None
    r = autodiff.Tensor(np.zeros((n, 2))) if need_r else None
    off = 0
    last = len(sizes) - 2
    for l in range(len(sizes) - 1):
        nin, nout = sizes[l], sizes[l + 1]
        W = w[off:off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = w[off:off + nout]
        off += nout
        s = a @ W.T + b
        u = p @ W.T if p is not None else None
        v = q @ W.T if q is not None else None
        g = r @ W.T if r is not None else None
        if l == last:
            a, p, q, r = s, u, v, g
            break
        a = s.tanh()
        sp = 1.0 - a * a
        p = sp * u if u is not None else None
        if v is not None:
            if r is not None:
                spp = -2.0 * a * sp
                r = spp * v * v + sp * g
            q = sp * v
    return a, p, q, r


def make_loss_function(colloc: CollocationSet, params: NondimParams,
                       loss_weights: LossWeights = LossWeights()):
    """Tape-based loss closure over the flat (3*n_params,) weight vector.

    Slow reference path, mathematically identical to the fused kernel; the
    returned callable suits network.loss_gradient.
    """
    lw = loss_weights.as_array()
    theta_in = np.asarray(params.theta_in)
    ntu = np.asarray(params.ntu)
    pe = np.asarray(params.pe)
    n_tot = 3 * colloc.interior.shape[1]
    n_bc = 3 * colloc.inlet_phi.shape[1]
    n_if = 3 * colloc.iface_a.shape[1]
    n_neu = 3 * 2 * colloc.end_phi.shape[1]

    def split(w):
        return [w[j * SECTOR_PARAMS:(j + 1) * SECTOR_PARAMS] for j in range(N_SECTORS)]

    def loss(w):
        ws = split(w)
        pde = autodiff.Tensor(0.0)
        for j in range(3):
            a, p, q, r = _tape_carries(ws[j], colloc.interior[j], True, True, True)
            T = a[:, 0]
            Tm = a[:, 1]
            rc = p[:, 1] - ntu[j] * (T - Tm) - (1.0 / pe[j]) * r[:, 1]
            rv = q[:, 0] - ntu[j] * (Tm - T)
            pde = pde + (rc * rc).sum() + (rv * rv).sum()
        total = lw[0] * pde / (2 * n_tot)
        bc = autodiff.Tensor(0.0)
        for j in range(3):
            X = np.column_stack([colloc.inlet_phi[j], np.zeros_like(colloc.inlet_phi[j])])
            a, _, _, _ = _tape_carries(ws[j], X, False, False, False)
            mis = a[:, 0] - theta_in[j]
            bc = bc + (mis * mis).sum()
        total = total + lw[1] * bc / n_bc
        ifc = autodiff.Tensor(0.0)
        for k in range(3):
            ja, jb = k, (k + 2) % 3
            aa, _, _, _ = _tape_carries(ws[ja], colloc.iface_a[k], False, False, False)
            ab, _, _, _ = _tape_carries(ws[jb], colloc.iface_b[k], False, False, False)
            d = aa[:, 1] - ab[:, 1]
            ifc = ifc + (d * d).sum()
        total = total + lw[2] * ifc / n_if
        neu = autodiff.Tensor(0.0)
        for j in range(3):
            phis = colloc.end_phi[j]
            X = np.vstack([np.column_stack([phis, np.zeros_like(phis)]),
                           np.column_stack([phis, np.ones_like(phis)])])
            _, _, q, _ = _tape_carries(ws[j], X, False, True, False)
            dz = q[:, 1]
            neu = neu + (dz * dz).sum()
        total = total + lw[3] * neu / n_neu
        return total

    return loss


@dataclass
class TrainingReport:
    """What happened during one training run."""

    steps: int
    stop_reason: str
    loss_history: np.ndarray
    final_losses: dict
    wall_seconds: float
    warm_started: bool


def train_base_pinn(params: NondimParams, cfg: TrainingConfig = TrainingConfig(),
                    seed: int = 0, warm_start: Optional[TaskPinn] = None,
                    condition: Optional[OperatingCondition] = None):
    """Train the three sector nets for one task.

    Deterministic in (params, cfg, seed, warm_start): the collocation set and
    the initial weights both derive from seed. warm_start copies another
    task's weights as the starting point instead of a fresh init. Returns
    (TaskPinn, TrainingReport). Raises TrainingError (carrying the last
    finite weights) if the loss goes non-finite.
    """
    colloc = sample_collocation(seed + 1000, cfg.n_interior, cfg.n_inlet,
                                cfg.n_interface, cfg.n_end)
    if warm_start is not None:
        if warm_start.weights.shape != (N_SECTORS, SECTOR_PARAMS):
            raise ValidationError("warm_start weights have the wrong shape")
        w = warm_start.flat_weights().copy()
    else:
        w = np.concatenate([network.init_weights(SECTOR_NET, seed + 17 * j)
                            for j in range(N_SECTORS)])
    state = AdamState.fresh(w.size)
    lw = cfg.loss_weights
    history = np.empty(cfg.max_steps)
    t0 = time.perf_counter()
    stop_reason = "max_steps"
    steps = 0
    terms = {}
    for t in range(cfg.max_steps):
        lr = cfg.learning_rate
        if cfg.lr_decay_every > 0:
            lr = lr * cfg.lr_decay_factor ** (t // cfg.lr_decay_every)
        total, terms, grad = loss_and_gradient(
            w.reshape(N_SECTORS, SECTOR_PARAMS), colloc, params, lw)
        if not np.isfinite(total):
            raise TrainingError(
                f"loss became non-finite at step {t}",
                last_state=w.reshape(N_SECTORS, SECTOR_PARAMS).copy())
        history[t] = total
        steps = t + 1
        if total < cfg.loss_tol:
            stop_reason = "loss_tol"
            break
        if t >= cfg.plateau_window:
            if history[t - cfg.plateau_window] - total < cfg.plateau_delta:
                stop_reason = "plateau"
                break
        state, w = network.adam_step(state, grad.reshape(-1), w, lr)
    wall = time.perf_counter() - t0
    task = TaskPinn(weights=w.reshape(N_SECTORS, SECTOR_PARAMS).copy(),
                    final_losses=terms, seed=int(seed), condition=condition)
    report = TrainingReport(steps=steps, stop_reason=stop_reason,
                            loss_history=history[:steps].copy(),
                            final_losses=terms, wall_seconds=wall,
                            warm_started=warm_start is not None)
    return task, report


def train_base_pinn_restarts(params: NondimParams,
                             cfg: TrainingConfig = TrainingConfig(),
                             seeds=(0, 1, 2),
                             condition: Optional[OperatingCondition] = None):
    """Train from several fresh initializations, keep the lowest final loss.

    Cold Adam runs occasionally settle in a poor local minimum; restarting
    from a handful of seeds and selecting on the training loss alone (no
    reference fields involved) makes the outcome reliable while staying
    deterministic in (params, cfg, seeds). A restart whose loss goes
    non-finite is skipped; if every restart fails the last TrainingError is
    re-raised. Returns (TaskPinn, TrainingReport) of the winning run.
    """
    if len(seeds) < 1:
        raise ValidationError("seeds must contain at least one entry")
    best = None
    last_error = None
    for seed in seeds:
        try:
            task, report = train_base_pinn(params, cfg, seed=int(seed),
                                           condition=condition)
        except TrainingError as err:
            last_error = err
            continue
        if best is None or report.final_losses["total"] < best[1].final_losses["total"]:
            best = (task, report)
    if best is None:
        raise last_error
    return best


def evaluate_field(task: TaskPinn, grid: Grid = Grid(),
                   params: Optional[NondimParams] = None) -> FieldSolution:
    """Evaluate the sector nets on a grid, packaged like a solver result.

    Pure network evaluation: no residuals, no training. params is optional
    bookkeeping copied onto the FieldSolution (useful when the caller wants
    to run solution diagnostics later).
    """
    phis = grid.phi_nodes()
    zs = grid.z_nodes()
    PP, ZZ = np.meshgrid(phis, zs, indexing="ij")
    X = np.column_stack([PP.ravel(), ZZ.ravel()])
    fluid = np.empty((N_SECTORS, grid.n_phi, grid.n_z))
    metal = np.empty((N_SECTORS, grid.n_phi, grid.n_z))
    for j in range(N_SECTORS):
        Y = _kernels.mlp_forward(task.weights[j], task.spec.layer_sizes, X)
        fluid[j] = Y[:, 0].reshape(grid.n_phi, grid.n_z)
        metal[j] = Y[:, 1].reshape(grid.n_phi, grid.n_z)
    return FieldSolution(fluid=fluid, metal=metal, grid=grid, params=params)
