"""Kernel backend selection.

Prefers the compiled Cython extension when it imports cleanly, otherwise
falls back to the numpy implementation. Set APHTHERM_KERNELS=fallback (or
=compiled) to force a choice; forcing an unavailable compiled backend is an
error so benchmarks cannot silently measure the wrong thing.
"""

import os

from . import _fallback

_requested = os.environ.get("APHTHERM_KERNELS", "").strip().lower()

_impl = None
if _requested in ("", "compiled"):
    try:
        from . import _compiled as _impl  # noqa: F401
    except ImportError:
        _impl = None
        if _requested == "compiled":
            raise ImportError(
                "APHTHERM_KERNELS=compiled but the compiled extension is not available")
if _requested == "fallback":
    _impl = None
elif _requested not in ("", "compiled", "fallback"):
    raise ValueError(f"APHTHERM_KERNELS must be 'compiled' or 'fallback', got {_requested!r}")

if _impl is not None:
    BACKEND = "compiled"
    mlp_forward = _impl.mlp_forward
    mlp_derivatives = _impl.mlp_derivatives
    pinn_loss_grad = _impl.pinn_loss_grad
else:
    BACKEND = "fallback"
    mlp_forward = _fallback.mlp_forward
    mlp_derivatives = _fallback.mlp_derivatives
    pinn_loss_grad = _fallback.pinn_loss_grad


def backend_name():
    """Name of the active kernel backend: 'compiled' or 'fallback'."""
    return BACKEND
