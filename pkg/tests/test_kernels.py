"""Backend equivalence: compiled extension vs numpy fallback vs autodiff tape."""

import os
import subprocess
import sys

import numpy as np
import pytest

from aphtherm import _kernels
from aphtherm._kernels import _fallback
from aphtherm.model import NondimParams
from aphtherm.network import SECTOR_NET, init_weights, loss_gradient
from aphtherm.pinn import (LossWeights, make_loss_function,
                           sample_collocation)

try:
    from aphtherm._kernels import _compiled
except ImportError:
    _compiled = None

needs_compiled = pytest.mark.skipif(_compiled is None,
                                    reason="compiled extension unavailable")

SIZES = SECTOR_NET.layer_sizes
PARAMS = NondimParams(theta_in=(0.85, 0.12, 0.18), ntu=(3.0, 2.5, 2.5),
                      pe=(50.0, 50.0, 50.0))


def _loss_args(n=128):
    colloc = sample_collocation(seed=42, n_interior=n, n_inlet=32,
                                n_interface=32, n_end=16)
    return (colloc.interior, colloc.inlet_phi, colloc.iface_a, colloc.iface_b,
            colloc.end_phi, np.asarray(PARAMS.theta_in), np.asarray(PARAMS.ntu),
            np.asarray(PARAMS.pe), LossWeights().as_array()), colloc


def test_selected_backend_reports_a_name():
    assert _kernels.backend_name() in ("compiled", "fallback")


@needs_compiled
def test_forward_backends_identical():
    w = init_weights(SECTOR_NET, seed=1)
    X = np.random.default_rng(0).random((257, 2))
    a = _fallback.mlp_forward(w, SIZES, X)
    b = _compiled.mlp_forward(w, SIZES, X)
    assert np.array_equal(a, b)


@needs_compiled
def test_derivative_backends_identical():
    w = init_weights(SECTOR_NET, seed=2)
    X = np.random.default_rng(1).random((123, 2))
    Ya, Ja, Ha = _fallback.mlp_derivatives(w, SIZES, X)
    Yb, Jb, Hb = _compiled.mlp_derivatives(w, SIZES, X)
    assert np.allclose(Ya, Yb, atol=1e-15, rtol=0)
    assert np.allclose(Ja, Jb, atol=1e-14, rtol=0)
    assert np.allclose(Ha, Hb, atol=1e-13, rtol=0)


@needs_compiled
def test_loss_and_gradient_backends_agree():
    w_all = np.concatenate([init_weights(SECTOR_NET, seed=s) for s in (3, 4, 5)])
    args, _ = _loss_args()
    la, ta, ga = _fallback.pinn_loss_grad(w_all, SIZES, *args)
    lb, tb, gb = _compiled.pinn_loss_grad(w_all, SIZES, *args)
    assert la == pytest.approx(lb, rel=1e-12)
    assert np.allclose(ta, tb, rtol=1e-12)
    scale = np.abs(ga).max()
    assert np.abs(ga - gb).max() < 1e-12 * scale


@needs_compiled
def test_compiled_repeat_calls_bit_identical():
    # the buffer pool must not leak state between calls
    w_all = np.concatenate([init_weights(SECTOR_NET, seed=s) for s in (6, 7, 8)])
    args, _ = _loss_args()
    first = _compiled.pinn_loss_grad(w_all, SIZES, *args)
    for _ in range(3):
        again = _compiled.pinn_loss_grad(w_all, SIZES, *args)
        assert again[0] == first[0]
        assert np.array_equal(again[1], first[1])
        assert np.array_equal(again[2], first[2])


def test_kernel_gradient_matches_tape():
    w_all = np.concatenate([init_weights(SECTOR_NET, seed=s) for s in (9, 10, 11)])
    args, colloc = _loss_args(n=64)
    loss_fn = make_loss_function(colloc, PARAMS, LossWeights())
    tape_loss, tape_grad = loss_gradient(loss_fn, w_all)
    k_loss, _, k_grad = _kernels.pinn_loss_grad(w_all, SIZES, *args)
    assert k_loss == pytest.approx(tape_loss, rel=1e-12)
    scale = np.abs(tape_grad).max()
    assert np.abs(k_grad - tape_grad).max() < 1e-12 * scale


def test_kernel_gradient_matches_finite_differences():
    w_all = np.concatenate([init_weights(SECTOR_NET, seed=s) for s in (12, 13, 14)])
    args, _ = _loss_args(n=64)
    loss0, _, grad = _kernels.pinn_loss_grad(w_all, SIZES, *args)
    rng = np.random.default_rng(99)
    idx = rng.choice(w_all.size, size=60, replace=False)
    h = 1e-6
    for i in idx:
        wp = w_all.copy()
        wp[i] += h
        lp = _kernels.pinn_loss_grad(wp, SIZES, *args, want_grad=False)[0]
        wm = w_all.copy()
        wm[i] -= h
        lm = _kernels.pinn_loss_grad(wm, SIZES, *args, want_grad=False)[0]
        fd = (lp - lm) / (2 * h)
        assert fd == pytest.approx(grad[i], rel=2e-5, abs=1e-9)


def test_want_grad_false_skips_gradient():
    w_all = np.concatenate([init_weights(SECTOR_NET, seed=s) for s in (1, 2, 3)])
    args, _ = _loss_args(n=32)
    total, terms, grad = _kernels.pinn_loss_grad(w_all, SIZES, *args,
                                                 want_grad=False)
    assert grad is None
    assert terms.shape == (4,)
    # terms come back already weighted; the total is their plain sum
    assert total == pytest.approx(float(terms.sum()))


def _backend_of(env_value):
    env = dict(os.environ)
    env["APHTHERM_KERNELS"] = env_value
    out = subprocess.run(
        [sys.executable, "-c",
         "from aphtherm import _kernels; print(_kernels.backend_name())"],
        capture_output=True, text=True, env=env)
    return out


def test_env_override_fallback():
    out = _backend_of("fallback")
    assert out.returncode == 0
    assert out.stdout.strip() == "fallback"


@needs_compiled
def test_env_override_compiled():
    out = _backend_of("compiled")
    assert out.returncode == 0
    assert out.stdout.strip() == "compiled"


def test_env_override_rejects_unknown():
    out = _backend_of("gpu")
    assert out.returncode != 0
    assert "APHTHERM_KERNELS" in out.stderr
