"""Thermal-field toolkit for tri-sector rotary air preheaters.

Three ways to get a temperature field, in decreasing cost order: a
finite-difference reference solver, per-task physics-trained sector nets,
and a weight-predicting network that maps an operating condition straight
to sector-net weights so new conditions need no training at all.
"""

from ._kernels import backend_name
from .model import (CoefficientMap, NondimParams, OperatingCondition,
                    PhysicalRanges, TemperatureScale, ToolkitConfig,
                    denormalize_condition, from_nondim_temperature,
                    load_config, normalize_condition, save_config, to_nondim)

__version__ = "0.1.0"

__all__ = [
    "CoefficientMap", "NondimParams", "OperatingCondition", "PhysicalRanges",
    "TemperatureScale", "ToolkitConfig", "backend_name",
    "denormalize_condition", "from_nondim_temperature", "load_config",
    "normalize_condition", "save_config", "to_nondim", "__version__",
]
