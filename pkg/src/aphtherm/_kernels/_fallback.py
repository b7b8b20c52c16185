"""Pure-numpy kernels: MLP evaluation, input derivatives, and the fused
residual-loss gradient for the three-sector physics nets.

This module and ``_compiled`` (the Cython twin) expose the same functions
with identical semantics; the package picks one at import time. All arrays
are float64. Weight layout per layer: row-major weight matrix [out x in]
followed by the bias vector, layers concatenated in order.

Derivative carries: for hidden activations a = tanh(s) the forward pass
propagates da/dx_d and d2a/dz2 alongside the values, so first and second
input derivatives come out in a single pass instead of nested differencing.
"""

from __future__ import annotations

import numpy as np


def _unpack(w, sizes):
    mats = []
    off = 0
    for i in range(len(sizes) - 1):
        nin, nout = sizes[i], sizes[i + 1]
        W = w[off:off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = w[off:off + nout]
        off += nout
        mats.append((W, b))
    return mats


def mlp_forward(w, sizes, X):
    """Evaluate a tanh-hidden, linear-output MLP on rows of X -> (N, out)."""
    a = np.asarray(X, dtype=float)
    params = _unpack(np.asarray(w, dtype=float), sizes)
    last = len(params) - 1
    for l, (W, b) in enumerate(params):
        s = a @ W.T + b
        a = s if l == last else np.tanh(s)
    return a


def mlp_derivatives(w, sizes, X):
    """Values plus first and diagonal second input derivatives.

    Returns (Y (N, out), J (N, out, d_in), H (N, out, d_in)) where
    J[n, o, d] = dY[n, o]/dX[n, d] and H is the same for second derivatives
    (no cross terms).
    """
    X = np.asarray(X, dtype=float)
    params = _unpack(np.asarray(w, dtype=float), sizes)
    n, d_in = X.shape
    last = len(params) - 1
    a = X
    # carries: one (N, width) slab per input dimension
    J = [np.tile((np.arange(d_in) == d).astype(float), (n, 1)) for d in range(d_in)]
    H = [np.zeros((n, d_in)) for _ in range(d_in)]
    for l, (W, b) in enumerate(params):
        s = a @ W.T + b
        u = [J[d] @ W.T for d in range(d_in)]
        g = [H[d] @ W.T for d in range(d_in)]
        if l == last:
            a, J, H = s, u, g
            break
        a = np.tanh(s)
        sp = 1.0 - a * a
        spp = -2.0 * a * sp
        J = [sp * u[d] for d in range(d_in)]
        H = [spp * u[d] * u[d] + sp * g[d] for d in range(d_in)]
    Jout = np.stack(J, axis=2)
    Hout = np.stack(H, axis=2)
    return a, Jout, Hout


def _forward_carries(params, X, need):
    """Forward pass caching activations and phi/z derivative carries.

    need is a subset of {"a", "p", "q", "r"}: value, d/dphi, d/dz, d2/dz2.
    Inputs are (N, 2) with columns (phi, z).
    """
    L = len(params)
    A = [X]
    P = [np.broadcast_to(np.array([1.0, 0.0]), X.shape).copy()] if "p" in need else None
    Q = [np.broadcast_to(np.array([0.0, 1.0]), X.shape).copy()] if ("q" in need or "r" in need) else None
    R = [np.zeros_like(X)] if "r" in need else None
    U, V, G, SP, SPP = [], [], [], [], []
    for l, (W, b) in enumerate(params):
        S = A[-1] @ W.T + b
        u = P[-1] @ W.T if P is not None else None
        v = Q[-1] @ W.T if Q is not None else None
        g = R[-1] @ W.T if R is not None else None
        if l < L - 1:
            a = np.tanh(S)
            sp = 1.0 - a * a
            spp = -2.0 * a * sp
            A.append(a)
            if P is not None:
                P.append(sp * u)
            if Q is not None:
                Q.append(sp * v)
            if R is not None:
                R.append(spp * v * v + sp * g)
            SP.append(sp)
            SPP.append(spp)
        else:
            A.append(S)
            if P is not None:
                P.append(u)
            if Q is not None:
                Q.append(v)
            if R is not None:
                R.append(g)
            SP.append(None)
            SPP.append(None)
        U.append(u)
        V.append(v)
        G.append(g)
    return dict(A=A, P=P, Q=Q, R=R, U=U, V=V, G=G, SP=SP, SPP=SPP)


def _backward_carries(params, cache, Abar, Pbar, Qbar, Rbar):
    """Reverse pass through _forward_carries; returns the flat weight grad.

    Adjoint algebra for a hidden layer a = tanh(s) with carries
    p = sp*u, q = sp*v, r = spp*v^2 + sp*g (sp = 1-a^2, spp = -2*a*sp):
    the s-adjoint picks up a_bar*sp plus the carry adjoints through the
    activation derivatives, using d(spp)/ds = (6a^2-2)*sp.
    """
    L = len(params)
    A, P, Q, R = cache["A"], cache["P"], cache["Q"], cache["R"]
    U, V, G, SP, SPP = cache["U"], cache["V"], cache["G"], cache["SP"], cache["SPP"]
    grads = [None] * L
    aB, pB, qB, rB = Abar, Pbar, Qbar, Rbar
    for l in range(L - 1, -1, -1):
        W, b = params[l]
        if l == L - 1:
            Sbar = aB if aB is not None else None
            Ubar, Vbar, Gbar = pB, qB, rB
        else:
            a = A[l + 1]
            sp, spp = SP[l], SPP[l]
            Sbar = aB * sp if aB is not None else 0.0
            Ubar = Vbar = Gbar = None
            if pB is not None:
                Ubar = pB * sp
                Sbar = Sbar + pB * U[l] * spp
            if qB is not None:
                Vbar = qB * sp
                Sbar = Sbar + qB * V[l] * spp
            if rB is not None:
                dspp = (6.0 * a * a - 2.0) * sp
                Vbar = (Vbar if Vbar is not None else 0.0) + rB * 2.0 * spp * V[l]
                Gbar = rB * sp
                Sbar = Sbar + rB * (V[l] * V[l] * dspp + G[l] * spp)
            if not isinstance(Sbar, np.ndarray):
                Sbar = None
        Wbar = np.zeros_like(W)
        bbar = np.zeros_like(b)
        if Sbar is not None:
            Wbar += Sbar.T @ A[l]
            bbar += Sbar.sum(axis=0)
        if Ubar is not None:
            Wbar += Ubar.T @ P[l]
        if Vbar is not None:
            Wbar += Vbar.T @ Q[l]
        if Gbar is not None:
            Wbar += Gbar.T @ R[l]
        grads[l] = (Wbar, bbar)
        aB = Sbar @ W if Sbar is not None else None
        pB = Ubar @ W if Ubar is not None else None
        qB = Vbar @ W if Vbar is not None else None
        rB = Gbar @ W if Gbar is not None else None
    return np.concatenate([np.concatenate([Wb.ravel(), bb]) for Wb, bb in grads])


def pinn_loss_grad(w_all, sizes, interior, inlet_phi, iface_a, iface_b,
                   end_phi, theta_in, ntu, pe, loss_w, want_grad=True):
    """Fused loss (and optionally gradient) of the three sector nets.

    w_all: concatenation of the 3 per-sector weight vectors.
    interior: (3, Ni, 2) collocation points (phi, z) per sector.
    inlet_phi: (3, Nb) phi values; inlet residual is evaluated at z = 0.
    iface_a/iface_b: (3, Np, 2) paired points; pair k compares the metal
        output of net k at iface_a[k] with net (k+2)%3 at iface_b[k].
    end_phi: (3, Ne) phi values; the z-derivative penalty is applied at
        both z = 0 and z = 1.
    theta_in, ntu, pe: per-sector parameter triples.
    loss_w: weights (pde, inlet, interface, end-derivative).

    Returns (total, terms (4,) weighted, grad or None).
    """
    w_all = np.asarray(w_all, dtype=float)
    pc = w_all.size // 3
    params = [_unpack(w_all[j * pc:(j + 1) * pc], sizes) for j in range(3)]
    w_pde, w_bc, w_if, w_neu = [float(v) for v in loss_w]
    theta_in = np.asarray(theta_in, dtype=float)
    ntu = np.asarray(ntu, dtype=float)
    pe = np.asarray(pe, dtype=float)

    n_tot = 3 * interior.shape[1]
    n_bc = 3 * inlet_phi.shape[1]
    n_ift = 3 * iface_a.shape[1]
    n_neu = 3 * 2 * end_phi.shape[1]

    caches_int, adj_int = [], []
    pde_sum = 0.0
    for j in range(3):
        c = _forward_carries(params[j], interior[j], need=("a", "p", "q", "r"))
        caches_int.append(c)
        A, P, Q, R = c["A"][-1], c["P"][-1], c["Q"][-1], c["R"][-1]
        T, Tm = A[:, 0], A[:, 1]
        Rc = P[:, 1] - ntu[j] * (T - Tm) - (1.0 / pe[j]) * R[:, 1]
        Rv = Q[:, 0] - ntu[j] * (Tm - T)
        pde_sum += np.sum(Rc * Rc) + np.sum(Rv * Rv)
        adj_int.append((Rc, Rv))
    L_pde = pde_sum / (2 * n_tot)

    caches_in = []
    bc_sum = 0.0
    for j in range(3):
        X = np.column_stack([inlet_phi[j], np.zeros_like(inlet_phi[j])])
        c = _forward_carries(params[j], X, need=("a",))
        caches_in.append(c)
        mis = c["A"][-1][:, 0] - theta_in[j]
        bc_sum += np.sum(mis * mis)
    L_bc = bc_sum / n_bc

    caches_if = []
    if_sum = 0.0
    for k in range(3):
        ja, jb = k, (k + 2) % 3
        ca = _forward_carries(params[ja], iface_a[k], need=("a",))
        cb = _forward_carries(params[jb], iface_b[k], need=("a",))
        caches_if.append((ca, cb))
        d = ca["A"][-1][:, 1] - cb["A"][-1][:, 1]
        if_sum += np.sum(d * d)
    L_if = if_sum / n_ift

    caches_neu = []
    neu_sum = 0.0
    for j in range(3):
        phis = end_phi[j]
        X = np.vstack([np.column_stack([phis, np.zeros_like(phis)]),
                       np.column_stack([phis, np.ones_like(phis)])])
        c = _forward_carries(params[j], X, need=("a", "q"))
        caches_neu.append(c)
        dz = c["Q"][-1][:, 1]
        neu_sum += np.sum(dz * dz)
    L_neu = neu_sum / n_neu

    terms = np.array([w_pde * L_pde, w_bc * L_bc, w_if * L_if, w_neu * L_neu])
    total = float(terms.sum())
    if not want_grad:
        return total, terms, None

    grads = [np.zeros(pc) for _ in range(3)]
    for j in range(3):
        Rc, Rv = adj_int[j]
        cRc = w_pde * Rc / n_tot
        cRv = w_pde * Rv / n_tot
        N = Rc.shape[0]
        Abar = np.zeros((N, 2)); Pbar = np.zeros((N, 2))
        Qbar = np.zeros((N, 2)); Rbar = np.zeros((N, 2))
        Pbar[:, 1] = cRc
        Abar[:, 0] = -ntu[j] * cRc + ntu[j] * cRv
        Abar[:, 1] = ntu[j] * cRc - ntu[j] * cRv
        Rbar[:, 1] = -(1.0 / pe[j]) * cRc
        Qbar[:, 0] = cRv
        grads[j] += _backward_carries(params[j], caches_int[j], Abar, Pbar, Qbar, Rbar)
    for j in range(3):
        c = caches_in[j]
        mis = c["A"][-1][:, 0] - theta_in[j]
        Abar = np.zeros_like(c["A"][-1])
        Abar[:, 0] = w_bc * 2.0 * mis / n_bc
        grads[j] += _backward_carries(params[j], c, Abar, None, None, None)
    for k in range(3):
        ja, jb = k, (k + 2) % 3
        ca, cb = caches_if[k]
        d = ca["A"][-1][:, 1] - cb["A"][-1][:, 1]
        co = w_if * 2.0 * d / n_ift
        Abar_a = np.zeros_like(ca["A"][-1]); Abar_a[:, 1] = co
        Abar_b = np.zeros_like(cb["A"][-1]); Abar_b[:, 1] = -co
        grads[ja] += _backward_carries(params[ja], ca, Abar_a, None, None, None)
        grads[jb] += _backward_carries(params[jb], cb, Abar_b, None, None, None)
    for j in range(3):
        c = caches_neu[j]
        dz = c["Q"][-1][:, 1]
        Qbar = np.zeros_like(c["Q"][-1])
        Qbar[:, 1] = w_neu * 2.0 * dz / n_neu
        grads[j] += _backward_carries(params[j], c, None, None, Qbar, None)
    return total, terms, np.concatenate(grads)
