"""Operating conditions and the physical <-> nondimensional mapping.

An operating condition is the 4-vector lambda = (gas inlet temperature,
primary air inlet temperature, secondary air inlet temperature, gas mass
flow). Everything downstream of this module works on nondimensional
quantities: temperatures scaled to [0, 1] by a fixed reference span and
per-sector transfer/conduction coefficients obtained from reference values
by a power-law flow correction.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EnvelopeError, ValidationError

VARIABLE_NAMES = ("t_in_gas", "t_in_primary_air", "t_in_secondary_air", "gas_flow")
SECTOR_NAMES = ("gas", "primary_air", "secondary_air")


@dataclass(frozen=True)
class OperatingCondition:
    """One task: inlet temperatures in degC and gas mass flow in t/h."""

    t_in_gas: float
    t_in_primary_air: float
    t_in_secondary_air: float
    gas_flow: float

    def __post_init__(self):
        for name in VARIABLE_NAMES:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v!r}")
        if self.gas_flow <= 0:
            raise ValidationError(f"gas_flow must be positive, got {self.gas_flow!r}")

    def as_array(self):
        return np.array([self.t_in_gas, self.t_in_primary_air,
                         self.t_in_secondary_air, self.gas_flow], dtype=float)

    @classmethod
    def from_array(cls, values) -> "OperatingCondition":
        values = np.asarray(values, dtype=float)
        if values.shape != (4,):
            raise ValidationError(f"condition vector must have shape (4,), got {values.shape}")
        return cls(*values.tolist())


@dataclass(frozen=True)
class PhysicalRanges:
    """Design box for each condition variable: (min, max) pairs."""

    t_in_gas: tuple = (200.0, 400.0)
    t_in_primary_air: tuple = (10.0, 80.0)
    t_in_secondary_air: tuple = (10.0, 80.0)
    gas_flow: tuple = (600.0, 800.0)

    def __post_init__(self):
        for name in VARIABLE_NAMES:
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValidationError(f"{name} range must be finite, got ({lo!r}, {hi!r})")
            if not lo < hi:
                raise ValidationError(f"{name} range must have min < max, got ({lo!r}, {hi!r})")
        # the whole flow range must be usable as a power-law base
        if self.gas_flow[0] <= 0:
            raise ValidationError("gas_flow range must be positive")

    def bounds(self):
        """(4, 2) array of (min, max) rows in canonical variable order."""
        return np.array([getattr(self, n) for n in VARIABLE_NAMES], dtype=float)


@dataclass(frozen=True)
class TemperatureScale:
    """Affine temperature scale: theta = (T - t_ref) / t_span."""

    t_ref: float = 0.0
    t_span: float = 500.0

    def __post_init__(self):
        if not (math.isfinite(self.t_ref) and math.isfinite(self.t_span)):
            raise ValidationError("temperature scale must be finite")
        if self.t_span <= 0:
            raise ValidationError(f"t_span must be positive, got {self.t_span!r}")


@dataclass(frozen=True)
class CoefficientMap:
    """Reference transfer/conduction coefficients plus the flow correction.

    NTU scales with gas flow as (flow / flow_ref) ** flow_exponent applied
    to all three sectors; Peclet numbers are taken as flow-independent.
    """

    ntu_ref: tuple = (3.0, 2.5, 2.5)
    pe_ref: tuple = (50.0, 50.0, 50.0)
    flow_ref: float = 700.0
    flow_exponent: float = -0.2

    def __post_init__(self):
        if len(self.ntu_ref) != 3 or len(self.pe_ref) != 3:
            raise ValidationError("ntu_ref and pe_ref must each have 3 entries")
        if any(v <= 0 or not math.isfinite(v) for v in self.ntu_ref):
            raise ValidationError(f"ntu_ref must be positive, got {self.ntu_ref!r}")
        if any(v <= 0 or not math.isfinite(v) for v in self.pe_ref):
            raise ValidationError(f"pe_ref must be positive, got {self.pe_ref!r}")
        if self.flow_ref <= 0 or not math.isfinite(self.flow_ref):
            raise ValidationError(f"flow_ref must be positive, got {self.flow_ref!r}")
        if not math.isfinite(self.flow_exponent):
            raise ValidationError("flow_exponent must be finite")


@dataclass(frozen=True)
class NondimParams:
    """Solver-facing parameters: per-sector theta_in, NTU, and Pe."""

    theta_in: tuple
    ntu: tuple
    pe: tuple

    def __post_init__(self):
        for name in ("theta_in", "ntu", "pe"):
            vals = getattr(self, name)
            if len(vals) != 3:
                raise ValidationError(f"{name} must have 3 entries, got {len(vals)}")
            if any(not math.isfinite(v) for v in vals):
                raise ValidationError(f"{name} must be finite, got {vals!r}")
        if any(v < 0 for v in self.ntu):
            raise ValidationError(f"ntu must be nonnegative, got {self.ntu!r}")
        if any(v <= 0 for v in self.pe):
            raise ValidationError(f"pe must be positive, got {self.pe!r}")


def normalize_condition(c: OperatingCondition, r: PhysicalRanges):
    """Map a condition into the unit hypercube defined by the ranges.

    Raises EnvelopeError naming the offending variable if any coordinate
    falls outside [0, 1] by more than 1e-12.
    """
    b = r.bounds()
    u = (c.as_array() - b[:, 0]) / (b[:, 1] - b[:, 0])
    for i, name in enumerate(VARIABLE_NAMES):
        if u[i] < -1e-12 or u[i] > 1.0 + 1e-12:
            raise EnvelopeError(
                f"{name}={getattr(c, name)!r} outside range "
                f"[{b[i, 0]!r}, {b[i, 1]!r}] (normalized {u[i]!r})")
    return np.clip(u, 0.0, 1.0)


def denormalize_condition(u, r: PhysicalRanges) -> OperatingCondition:
    """Inverse of normalize_condition; u must lie in [0, 1]^4."""
    u = np.asarray(u, dtype=float)
    if u.shape != (4,):
        raise ValidationError(f"normalized vector must have shape (4,), got {u.shape}")
    if np.any(u < -1e-12) or np.any(u > 1.0 + 1e-12):
        bad = int(np.argmax((u < -1e-12) | (u > 1.0 + 1e-12)))
        raise EnvelopeError(f"{VARIABLE_NAMES[bad]} normalized value {u[bad]!r} outside [0, 1]")
    b = r.bounds()
    x = b[:, 0] + np.clip(u, 0.0, 1.0) * (b[:, 1] - b[:, 0])
    return OperatingCondition(*x.tolist())


def to_nondim(c: OperatingCondition, scale: TemperatureScale,
              cmap: CoefficientMap) -> NondimParams:
    """Build solver parameters for a condition.

    Inlet temperatures must land in [0, 1] under the scale; the NTU flow
    correction multiplies all three reference values by
    (gas_flow / flow_ref) ** flow_exponent.
    """
    theta = []
    for name in ("t_in_gas", "t_in_primary_air", "t_in_secondary_air"):
        th = (getattr(c, name) - scale.t_ref) / scale.t_span
        if th < 0.0 or th > 1.0:
            raise ValidationError(
                f"{name}={getattr(c, name)!r} maps to theta={th!r} outside [0, 1] "
                f"for scale (t_ref={scale.t_ref!r}, t_span={scale.t_span!r})")
        theta.append(th)
    factor = (c.gas_flow / cmap.flow_ref) ** cmap.flow_exponent
    ntu = tuple(v * factor for v in cmap.ntu_ref)
    return NondimParams(theta_in=tuple(theta), ntu=ntu, pe=tuple(float(v) for v in cmap.pe_ref))


def from_nondim_temperature(theta, scale: TemperatureScale):
    """Map nondimensional temperature(s) back to degC."""
    return np.asarray(theta, dtype=float) * scale.t_span + scale.t_ref


@dataclass(frozen=True)
class ToolkitConfig:
    """Bundle of ranges, temperature scale, and coefficient map."""

    ranges: PhysicalRanges = PhysicalRanges()
    scale: TemperatureScale = TemperatureScale()
    coefficients: CoefficientMap = CoefficientMap()


def _tuplify(x):
    return tuple(x) if isinstance(x, (list, tuple)) else x


def load_config(path) -> ToolkitConfig:
    """Read a JSON config file; missing sections/keys keep their defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"config file {path}: top level must be an object")
    known = {"ranges": PhysicalRanges, "scale": TemperatureScale,
             "coefficients": CoefficientMap}
    for key in raw:
        if key not in known:
            raise ValidationError(f"config file {path}: unknown section {key!r}")
    parts = {}
    for key, cls in known.items():
        section = raw.get(key, {})
        if not isinstance(section, dict):
            raise ValidationError(f"config file {path}: section {key!r} must be an object")
        field_names = {f.name for f in dataclasses.fields(cls)}
        for k in section:
            if k not in field_names:
                raise ValidationError(f"config file {path}: unknown key {key}.{k}")
        kwargs = {k: _tuplify(v) for k, v in section.items()}
        try:
            parts[key] = cls(**kwargs)
        except (TypeError, ValidationError) as exc:
            raise ValidationError(f"config file {path}: bad section {key!r}: {exc}") from exc
    return ToolkitConfig(ranges=parts["ranges"], scale=parts["scale"],
                         coefficients=parts["coefficients"])


def save_config(cfg: ToolkitConfig, path):
    """Write a config as JSON; load_config(save_config(c)) reproduces c."""
    payload = {
        "ranges": dataclasses.asdict(cfg.ranges),
        "scale": dataclasses.asdict(cfg.scale),
        "coefficients": dataclasses.asdict(cfg.coefficients),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
