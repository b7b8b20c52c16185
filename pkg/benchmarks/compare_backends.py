"""Compare the compiled kernel extension against the numpy fallback.

Times the three hot operations (batched forward pass, input derivatives,
full training-step loss+gradient) on both backends, checks they agree to
machine precision, and prints the speedups. Run from the repository root:

    python3 benchmarks/compare_backends.py [--reps N]
"""

import argparse
import statistics
import time

import numpy as np

from aphtherm._kernels import _fallback

try:
    from aphtherm._kernels import _compiled
except ImportError:
    _compiled = None

from aphtherm.network import SECTOR_NET, init_weights
from aphtherm.model import NondimParams
from aphtherm.pinn import LossWeights, sample_collocation


def timed(fn, reps, budget_s=2.0):
    """Median seconds per call: up to `reps` calls within a time budget."""
    samples = []
    t_start = time.perf_counter()
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
        if time.perf_counter() - t_start > budget_s:
            break
    return statistics.median(samples), len(samples)


def rel_diff(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(float(np.max(np.abs(a))), 1e-300)
    return float(np.max(np.abs(a - b))) / denom


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=200, help="max repetitions per timing")
    args = parser.parse_args()

    if _compiled is None:
        print("compiled extension not available; nothing to compare "
              "(reinstall with a working C toolchain)")
        return

    sizes = SECTOR_NET.layer_sizes
    rng = np.random.default_rng(0)
    w = init_weights(SECTOR_NET, seed=1)
    w_all = np.concatenate([init_weights(SECTOR_NET, seed=s) for s in (1, 2, 3)])
    X = rng.random((4096, sizes[0]))
    colloc = sample_collocation(seed=7)
    params = NondimParams(theta_in=(0.9, 0.1, 0.1), ntu=(3.0, 2.5, 2.5),
                          pe=(50.0, 50.0, 50.0))
    lw = LossWeights().as_array()
    pinn_args = (colloc.interior, colloc.inlet_phi, colloc.iface_a,
                 colloc.iface_b, colloc.end_phi,
                 np.asarray(params.theta_in), np.asarray(params.ntu),
                 np.asarray(params.pe), lw)

    cases = [
        ("mlp_forward (4096 pts)",
         lambda m: m.mlp_forward(w, sizes, X)),
        ("mlp_derivatives (4096 pts)",
         lambda m: m.mlp_derivatives(w, sizes, X)),
        ("pinn_loss_grad (training step)",
         lambda m: m.pinn_loss_grad(w_all, sizes, *pinn_args)),
    ]

    print(f"{'operation':34s} {'fallback':>12s} {'compiled':>12s} {'speedup':>8s} {'agreement':>11s}")
    for name, call in cases:
        ref = call(_fallback)
        out = call(_compiled)
        if isinstance(ref, tuple):
            agree = max(rel_diff(r, o) for r, o in zip(ref, out) if r is not None)
        else:
            agree = rel_diff(ref, out)
        t_fb, n_fb = timed(lambda: call(_fallback), args.reps)
        t_cc, n_cc = timed(lambda: call(_compiled), args.reps)
        print(f"{name:34s} {t_fb*1e3:10.3f} ms {t_cc*1e3:10.3f} ms"
              f" {t_fb/t_cc:7.2f}x {agree:11.2e}")
        if agree > 1e-12:
            raise SystemExit(f"backends disagree on {name}: {agree:.3e}")
    print("\nall operations agree to <= 1e-12 relative; timings are medians"
          f" (up to {args.reps} reps each)")


if __name__ == "__main__":
    main()
