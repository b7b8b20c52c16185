"""Finite-difference reference solver for the periodic tri-sector fields.

Nondimensional model on (phi, z) in [0,1]^2 per sector j:

    d(theta_m)/dphi = NTU_j (theta - theta_m) + (1/Pe_j) d2(theta_m)/dz2
    d(theta)/dz     = NTU_j (theta_m - theta)          (sign folded into NTU)
    theta(phi, 0)   = theta_in_j
    d(theta_m)/dz   = 0 at z in {0, 1}

The metal marches in phi by backward Euler (tridiagonal in z with ghost-node
Neumann ends), the fluid marches in z by backward Euler, and each phi step
iterates the metal/fluid coupling to a tight fixed point. Sector coupling is
rotational: the metal leaving sector j enters the next sector with the axial
coordinate flipped for counterflow neighbors, and the assembly is swept
Gauss-Seidel style until the metal field stops changing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.signal import lfilter

from .errors import DivergenceError, NumericalError, ValidationError
from .model import NondimParams, TemperatureScale, from_nondim_temperature

FLUID_SCHEMES = ("backward-euler", "trapezoid")


@dataclass(frozen=True)
class Grid:
    """Uniform grid: n_phi x n_z nodes including both boundaries."""

    n_phi: int = 240
    n_z: int = 240

    def __post_init__(self):
        if self.n_phi < 2:
            raise ValidationError(f"n_phi must be >= 2, got {self.n_phi}")
        if self.n_z < 3:
            raise ValidationError(f"n_z must be >= 3, got {self.n_z}")

    @property
    def dphi(self):
        return 1.0 / (self.n_phi - 1)

    @property
    def dz(self):
        return 1.0 / (self.n_z - 1)

    def phi_nodes(self):
        return np.linspace(0.0, 1.0, self.n_phi)

    def z_nodes(self):
        return np.linspace(0.0, 1.0, self.n_z)


@dataclass(frozen=True)
class SolverSettings:
    """Iteration controls for the rotational Gauss-Seidel assembly."""

    outer_tol: float = 1e-8
    max_outer_sweeps: int = 10000
    relaxation: float = 1.0
    fluid_scheme: str = "backward-euler"
    inner_tol: float = 1e-13
    max_inner: int = 100

    def __post_init__(self):
        if not self.outer_tol > 0:
            raise ValidationError(f"outer_tol must be positive, got {self.outer_tol!r}")
        if self.max_outer_sweeps < 1:
            raise ValidationError("max_outer_sweeps must be >= 1")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValidationError(f"relaxation must be in (0, 1], got {self.relaxation!r}")
        if self.fluid_scheme not in FLUID_SCHEMES:
            raise ValidationError(
                f"fluid_scheme must be one of {FLUID_SCHEMES}, got {self.fluid_scheme!r}")
        if not self.inner_tol > 0 or self.max_inner < 1:
            raise ValidationError("inner_tol must be positive and max_inner >= 1")


@dataclass
class FieldSolution:
    """Per-sector fluid and metal fields on a shared grid.

    fluid/metal have shape (3, n_phi, n_z); index order is (sector, phi, z).
    params is the NondimParams the fields correspond to (None when the
    producer had no solver parameters, e.g. a network evaluation's bookkeeping
    was not supplied). fluid_scheme records the z-integration rule used, which
    the energy-balance check needs to cancel discretization error exactly.
    """

    fluid: np.ndarray
    metal: np.ndarray
    grid: Grid
    params: Optional[NondimParams] = None
    fluid_scheme: str = "backward-euler"
    sweeps: int = 0
    final_change: float = float("nan")

    def __post_init__(self):
        self.fluid = np.asarray(self.fluid, dtype=float)
        self.metal = np.asarray(self.metal, dtype=float)
        shape = (3, self.grid.n_phi, self.grid.n_z)
        if self.fluid.shape != shape or self.metal.shape != shape:
            raise ValidationError(
                f"fields must have shape {shape}, got fluid {self.fluid.shape}, "
                f"metal {self.metal.shape}")


def apply_interfaces(metal_outlets):
    """Rotate the metal outlet profiles into the next sectors' inlets.

    metal_outlets: (3, n_z) array, row j = metal profile leaving sector j at
    phi = 1. Returns (3, n_z) inlet profiles at phi = 0: sector 1 receives
    sector 3's outlet flipped in z, sector 2 receives sector 1's outlet
    flipped in z, and sector 3 receives sector 2's outlet unflipped. The
    flips encode counterflow neighbors sharing the axial coordinate.
    """
    out = np.asarray(metal_outlets, dtype=float)
    if out.ndim != 2 or out.shape[0] != 3:
        raise ValidationError(f"metal_outlets must have shape (3, n_z), got {out.shape}")
    inlets = np.empty_like(out)
    inlets[0] = out[2][::-1]
    inlets[1] = out[0][::-1]
    inlets[2] = out[1]
    return inlets


def _fluid_march(metal_row, theta_in, ntu, dz, scheme):
    """Integrate the fluid equation along z given the metal profile."""
    if ntu == 0.0:
        return np.full_like(metal_row, theta_in)
    if scheme == "backward-euler":
        beta = 1.0 / (1.0 + ntu * dz)
        tail, _ = lfilter([1.0 - beta], [1.0, -beta], metal_row[1:],
                          zi=np.array([beta * theta_in]))
    else:  # trapezoid
        c = 0.5 * ntu * dz
        d = (1.0 - c) / (1.0 + c)
        e = c / (1.0 + c)
        tail, _ = lfilter([e, e], [1.0, -d], metal_row[1:],
                          zi=np.array([e * metal_row[0] + d * theta_in]))
    return np.concatenate(([theta_in], tail))


class _SectorStepper:
    """Constant-coefficient machinery for one sector on one grid."""

    def __init__(self, ntu, pe, grid, settings):
        self.ntu = float(ntu)
        self.dz = grid.dz
        self.dphi = grid.dphi
        self.scheme = settings.fluid_scheme
        self.inner_tol = settings.inner_tol
        self.max_inner = settings.max_inner
        n_z = grid.n_z
        mu = 1.0 / (pe * self.dz * self.dz)
        diag = 1.0 / self.dphi + self.ntu + 2.0 * mu
        # banded form for solve_banded: row 0 super-diag, 1 diag, 2 sub-diag.
        # Ghost-node Neumann ends double the off-diagonal at both walls.
        ab = np.zeros((3, n_z))
        ab[1, :] = diag
        ab[0, 1:] = -mu
        ab[0, 1] = -2.0 * mu
        ab[2, :-1] = -mu
        ab[2, n_z - 2] = -2.0 * mu
        self.ab = ab

    def march(self, metal, fluid, theta_in):
        """Fill metal rows 1..P-1 and all fluid rows; metal[0] is the inlet.

        Each phi step solves the implicit metal system against the current
        fluid column, re-marches the fluid, and repeats to a fixed point
        (contraction factor NTU*dphi/(1+NTU*dphi) < 1).
        """
        P = metal.shape[0]
        fluid[0] = _fluid_march(metal[0], theta_in, self.ntu, self.dz, self.scheme)
        inv_dphi = 1.0 / self.dphi
        for i in range(1, P):
            m = metal[i - 1]
            f = fluid[i - 1].copy()
            for _ in range(self.max_inner):
                rhs = metal[i - 1] * inv_dphi + self.ntu * f
                m_new = solve_banded((1, 1), self.ab, rhs, check_finite=False)
                f = _fluid_march(m_new, theta_in, self.ntu, self.dz, self.scheme)
                delta = np.max(np.abs(m_new - m))
                m = m_new
                if delta <= self.inner_tol:
                    break
            metal[i] = m
            fluid[i] = f


def solve(params: NondimParams, grid: Grid = Grid(),
          settings: SolverSettings = SolverSettings()) -> FieldSolution:
    """Solve the coupled tri-sector system to the requested tolerance.

    Converges when the largest metal-field change over one full rotation
    sweep drops to settings.outer_tol. Raises DivergenceError if the sweep
    cap is hit first (carrying the last change) and NumericalError if the
    iteration produces non-finite values or breaks the discrete bounds
    [min(theta_in), max(theta_in)].
    """
    theta_in = np.asarray(params.theta_in, dtype=float)
    if not np.all(np.isfinite(theta_in)):
        raise NumericalError(f"theta_in is not finite: {theta_in!r}")
    steppers = [_SectorStepper(params.ntu[j], params.pe[j], grid, settings)
                for j in range(3)]
    P, Z = grid.n_phi, grid.n_z
    metal = np.full((3, P, Z), float(theta_in.mean()))
    fluid = np.zeros((3, P, Z))
    relax = settings.relaxation
    change = np.inf
    for sweep in range(1, settings.max_outer_sweeps + 1):
        prev = metal.copy()
        for j in range(3):
            inlet = apply_interfaces(metal[:, -1, :])[j]
            metal[j, 0] = relax * inlet + (1.0 - relax) * metal[j, 0]
            steppers[j].march(metal[j], fluid[j], theta_in[j])
        change = float(np.max(np.abs(metal - prev)))
        if not np.isfinite(change):
            raise NumericalError(f"solver produced non-finite values at sweep {sweep}")
        if change <= settings.outer_tol:
            break
    else:
        raise DivergenceError(
            f"no convergence in {settings.max_outer_sweeps} sweeps "
            f"(last change {change:.3e} > outer_tol {settings.outer_tol:.3e})",
            residual=change)
    lo, hi = float(theta_in.min()), float(theta_in.max())
    eps = 1e-9
    vmin = min(float(metal.min()), float(fluid.min()))
    vmax = max(float(metal.max()), float(fluid.max()))
    if vmin < lo - eps or vmax > hi + eps:
        raise NumericalError(
            f"solution violates the discrete bounds [{lo}, {hi}]: "
            f"range [{vmin}, {vmax}]")
    return FieldSolution(fluid=fluid, metal=metal, grid=grid, params=params,
                         fluid_scheme=settings.fluid_scheme, sweeps=sweep,
                         final_change=change)


def outlet_means(sol: FieldSolution):
    """Per-sector mean outlet fluid temperature: average over phi at z = 1.

    Averages the marched rows only (phi index >= 1): row 0 restates the
    rotated inlet boundary, which already belongs to the upstream sector's
    last row, and the energy balance uses the same row set.
    """
    return sol.fluid[:, 1:, -1].mean(axis=1)


@dataclass(frozen=True)
class GridStudyRow:
    grid: Grid
    outlets: np.ndarray
    diff_prev: Optional[float]  # max abs outlet change vs the previous row


def grid_independence_study(params: NondimParams, grids,
                            settings: SolverSettings = SolverSettings()):
    """Solve on a ladder of grids and report successive outlet differences."""
    rows = []
    prev = None
    for g in grids:
        sol = solve(params, g, settings)
        outs = outlet_means(sol)
        diff = None if prev is None else float(np.max(np.abs(outs - prev)))
        rows.append(GridStudyRow(grid=g, outlets=outs, diff_prev=diff))
        prev = outs
    return rows


def energy_balance_residual(sol: FieldSolution, weights=(1.0, 1.0, 1.0)):
    """Net nondimensional heat imbalance across the three streams.

    For each sector the fluid picks up theta_in - mean_phi(outlet); summing
    with the capacity weights (equal by construction of the nondim model)
    must vanish for the continuous problem. On the grid this holds exactly
    only after subtracting the z-integration error of the fluid march, which
    for backward Euler equals NTU*dz/2 times the drop in the phi-averaged
    metal-fluid gap between the walls (and vanishes for the trapezoid rule).
    The phi average excludes the inlet row, matching the rows the marching
    scheme actually balances.

    At a converged solution the residual tracks outer_tol, so it is a
    solver-quality diagnostic rather than a model error.
    """
    if sol.params is None:
        raise ValidationError("energy balance needs solver params on the solution")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (3,):
        raise ValidationError(f"weights must have shape (3,), got {weights.shape}")
    ntu = np.asarray(sol.params.ntu, dtype=float)
    theta_in = np.asarray(sol.params.theta_in, dtype=float)
    dz = sol.grid.dz
    residual = 0.0
    for j in range(3):
        T = sol.fluid[j]
        M = sol.metal[j]
        picked_up = theta_in[j] - T[1:, -1].mean()
        if sol.fluid_scheme == "backward-euler":
            gap_drop = (M[1:, 0] - T[1:, 0]).mean() - (M[1:, -1] - T[1:, -1]).mean()
            corr = 0.5 * ntu[j] * dz * gap_drop
        else:
            corr = 0.0
        residual += weights[j] * (picked_up - corr)
    return float(residual)


FIELD_CSV_HEADER = ["sector", "phi", "z", "theta_fluid", "theta_metal",
                    "T_fluid_C", "T_metal_C"]


def write_field_csv(sol: FieldSolution, path, scale: TemperatureScale = TemperatureScale()):
    """Write the fields as CSV rows ordered by sector, then phi, then z.

    Sectors are numbered 1..3; temperatures appear both nondimensional and
    in degC under the given scale. Floats are written with repr precision so
    a read-back is exact.
    """
    phis = sol.grid.phi_nodes()
    zs = sol.grid.z_nodes()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELD_CSV_HEADER)
        for j in range(3):
            Tc = from_nondim_temperature(sol.fluid[j], scale)
            Mc = from_nondim_temperature(sol.metal[j], scale)
            for i, phi in enumerate(phis):
                for k, z in enumerate(zs):
                    writer.writerow([j + 1, repr(float(phi)), repr(float(z)),
                                     repr(float(sol.fluid[j, i, k])),
                                     repr(float(sol.metal[j, i, k])),
                                     repr(float(Tc[i, k])), repr(float(Mc[i, k]))])
