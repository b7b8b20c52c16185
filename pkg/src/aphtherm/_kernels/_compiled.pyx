# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: same API and semantics as ``_fallback``.

Strategy: the value and all derivative carries of a layer share its weight
matrix, so they are stacked into one tall slab and pushed through a single
BLAS call per layer (instead of one numpy call per carry). Activations use
numpy's vectorized tanh; everything else elementwise is fused C loops. The
backward pass accumulates each layer's weight gradient with one rank-k
update on the stacked adjoints. The training-loop entry point recycles its
scratch slabs across calls, which matters because they are large enough
that fresh allocations would hit mmap on every step.

Slab layout for d first-derivative dims and n_h second-derivative dims
(always the trailing n_h inputs): rows [0:N] value, [(1+k)N:(2+k)N] the
k-th first-derivative carry, [(1+d+k)N:(2+d+k)N] the second-derivative
carry of input dim d-n_h+k.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

# scratch-slab pool, keyed by shape; single-threaded use assumed
_POOL = {}
_POOL_IDX = {}


def _pool_reset():
    for key in _POOL_IDX:
        _POOL_IDX[key] = 0


def _pool_get(shape):
    bufs = _POOL.setdefault(shape, [])
    idx = _POOL_IDX.get(shape, 0)
    _POOL_IDX[shape] = idx + 1
    if idx == len(bufs):
        bufs.append(np.empty(shape))
    return bufs[idx]


cdef void _gemm_rm(bint ta, bint tb, int m, int n, int k, double alpha,
                   double[:, ::1] A, double[:, ::1] B, double beta,
                   double[:, ::1] C) noexcept:
    """Row-major C (m,n) = alpha*op(A)(m,k) @ op(B)(k,n) + beta*C.

    Implemented as the transposed product in column-major BLAS. Leading
    dimensions are the stored row lengths.
    """
    cdef char cta = b'T' if ta else b'N'
    cdef char ctb = b'T' if tb else b'N'
    cdef int lda = A.shape[1]
    cdef int ldb = B.shape[1]
    cdef int ldc = C.shape[1]
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&ctb, &cta, &n, &m, &k, &alpha,
          &B[0, 0], &ldb, &A[0, 0], &lda, &beta, &C[0, 0], &ldc)


cdef void _elem_forward(double[:, ::1] proj, double[:, ::1] post,
                        double[:, ::1] sp, double[:, ::1] spp,
                        int N, int d, int n_h, int width) noexcept:
    # post[0:N] already holds tanh(s); fill sp/spp and the carry slabs
    cdef int n, o, k
    cdef double a, s, c, u, g
    for n in range(N):
        for o in range(width):
            a = post[n, o]
            s = 1.0 - a * a
            c = -2.0 * a * s
            sp[n, o] = s
            spp[n, o] = c
            for k in range(d):
                post[(1 + k) * N + n, o] = s * proj[(1 + k) * N + n, o]
            for k in range(n_h):
                u = proj[(1 + d - n_h + k) * N + n, o]
                g = proj[(1 + d + k) * N + n, o]
                post[(1 + d + k) * N + n, o] = c * u * u + s * g


cdef void _elem_backward(double[:, ::1] bar, double[:, ::1] proj,
                         double[:, ::1] post, double[:, ::1] sp,
                         double[:, ::1] spp, int N, int d, int n_h,
                         int width) noexcept:
    # in place: adjoints of the post-activation slabs -> adjoints of s
    cdef int n, o, k
    cdef double a, s, c, dspp, sbar, jb, hb, u, g
    for n in range(N):
        for o in range(width):
            a = post[n, o]
            s = sp[n, o]
            c = spp[n, o]
            dspp = (6.0 * a * a - 2.0) * s
            sbar = bar[n, o] * s
            for k in range(d):
                jb = bar[(1 + k) * N + n, o]
                sbar += jb * proj[(1 + k) * N + n, o] * c
                bar[(1 + k) * N + n, o] = jb * s
            for k in range(n_h):
                hb = bar[(1 + d + k) * N + n, o]
                u = proj[(1 + d - n_h + k) * N + n, o]
                g = proj[(1 + d + k) * N + n, o]
                sbar += hb * (u * u * dspp + g * c)
                bar[(1 + d - n_h + k) * N + n, o] += 2.0 * hb * c * u
                bar[(1 + d + k) * N + n, o] = hb * s
            bar[n, o] = sbar


cdef void _colsum_add(double[:, ::1] block, double[::1] out,
                      int N, int width) noexcept:
    cdef int n, o
    for n in range(N):
        for o in range(width):
            out[o] += block[n, o]


def _layer_views(w, sizes):
    """Per-layer (W, b) views into the flat canonical weight vector."""
    views = []
    off = 0
    for i in range(len(sizes) - 1):
        nin, nout = sizes[i], sizes[i + 1]
        W = w[off:off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = w[off:off + nout]
        off += nout
        views.append((W, b))
    return views


def _forward_pass(w, sizes, X, int d, int n_h, bint pooled):
    """Stacked forward; returns (stack0, caches, out_proj).

    caches holds (proj, post, sp, spp) per hidden layer; out_proj is the
    final slab with the bias already applied to the value block.
    """
    cdef int N = X.shape[0]
    cdef int nslab = 1 + d + n_h
    layers = _layer_views(w, sizes)
    if pooled:
        stack0 = _pool_get((nslab * N, sizes[0]))
        stack0[:] = 0.0
    else:
        stack0 = np.zeros((nslab * N, sizes[0]))
    stack0[0:N] = X
    cdef int k
    for k in range(d):
        stack0[(1 + k) * N:(2 + k) * N, k] = 1.0
    cur = stack0
    caches = []
    last = len(layers) - 1
    for l, (W, b) in enumerate(layers):
        shape = (nslab * N, W.shape[0])
        proj = _pool_get(shape) if pooled else np.empty(shape)
        _gemm_rm(False, True, nslab * N, W.shape[0], W.shape[1], 1.0,
                 cur, W, 0.0, proj)
        if l == last:
            proj[0:N] += b
            return stack0, caches, proj
        post = _pool_get(shape) if pooled else np.empty(shape)
        np.add(proj[0:N], b, out=post[0:N])
        np.tanh(post[0:N], out=post[0:N])
        sp_shape = (N, W.shape[0])
        sp = _pool_get(sp_shape) if pooled else np.empty(sp_shape)
        spp = _pool_get(sp_shape) if pooled else np.empty(sp_shape)
        _elem_forward(proj, post, sp, spp, N, d, n_h, W.shape[0])
        caches.append((proj, post, sp, spp))
        cur = post


def _backward_pass(w, sizes, stack0, caches, bar, int d, int n_h,
                   grad_sector, bint pooled):
    """Accumulate d(loss)/d(weights) into grad_sector given the adjoint
    slab of the output layer. bar is consumed (modified in place)."""
    cdef int N = bar.shape[0] // (1 + d + n_h)
    layers = _layer_views(w, sizes)
    grads = _layer_views(grad_sector, sizes)
    cdef int l
    for l in range(len(layers) - 1, -1, -1):
        W, b = layers[l]
        Wbar, bbar = grads[l]
        if l < len(layers) - 1:
            proj, post, sp, spp = caches[l]
            _elem_backward(bar, proj, post, sp, spp, N, d, n_h, W.shape[0])
        inp = caches[l - 1][1] if l > 0 else stack0
        _gemm_rm(True, False, W.shape[0], W.shape[1], bar.shape[0], 1.0,
                 bar, inp, 1.0, Wbar)
        _colsum_add(bar[0:N], bbar, N, W.shape[0])
        if l > 0:
            shape = (bar.shape[0], W.shape[1])
            down = _pool_get(shape) if pooled else np.empty(shape)
            _gemm_rm(False, False, bar.shape[0], W.shape[1], W.shape[0], 1.0,
                     bar, W, 0.0, down)
            bar = down


def mlp_forward(w, sizes, X):
    """Evaluate a tanh-hidden, linear-output MLP on rows of X -> (N, out)."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    layers = _layer_views(w, sizes)
    a = X
    last = len(layers) - 1
    for l, (W, b) in enumerate(layers):
        s = np.empty((a.shape[0], W.shape[0]))
        _gemm_rm(False, True, a.shape[0], W.shape[0], W.shape[1], 1.0,
                 a, W, 0.0, s)
        s += b
        a = s if l == last else np.tanh(s, out=s)
    return a


def mlp_derivatives(w, sizes, X):
    """Values plus first and diagonal second input derivatives.

    Returns (Y (N, out), J (N, out, d_in), H (N, out, d_in)).
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    cdef int N = X.shape[0]
    cdef int d = X.shape[1]
    # pooled buffers are safe here: everything returned is copied out below
    _pool_reset()
    _, _, out = _forward_pass(w, sizes, X, d, d, True)
    n_out = sizes[len(sizes) - 1]  # no negative indexing under wraparound=False
    Y = out[0:N].copy()
    J = np.empty((N, n_out, d))
    H = np.empty((N, n_out, d))
    for k in range(d):
        J[:, :, k] = out[(1 + k) * N:(2 + k) * N]
        H[:, :, k] = out[(1 + d + k) * N:(2 + d + k) * N]
    return Y, J, H


# sector-net slabs: d = 2 carries (phi, z), n_h = 1 second derivative (z).
# rows [0:N] value, [N:2N] d/dphi, [2N:3N] d/dz, [3N:4N] d2/dz2


def pinn_loss_grad(w_all, sizes, interior, inlet_phi, iface_a, iface_b,
                   end_phi, theta_in, ntu, pe, loss_w, want_grad=True):
    """Fused loss (and optionally gradient) of the three sector nets.

    Same contract as the fallback implementation; see its docstring.
    """
    w_all = np.ascontiguousarray(w_all, dtype=np.float64)
    interior = np.ascontiguousarray(interior, dtype=np.float64)
    inlet_phi = np.ascontiguousarray(inlet_phi, dtype=np.float64)
    iface_a = np.ascontiguousarray(iface_a, dtype=np.float64)
    iface_b = np.ascontiguousarray(iface_b, dtype=np.float64)
    end_phi = np.ascontiguousarray(end_phi, dtype=np.float64)
    theta_in = np.asarray(theta_in, dtype=np.float64)
    ntu = np.asarray(ntu, dtype=np.float64)
    pe = np.asarray(pe, dtype=np.float64)
    w_pde, w_bc, w_if, w_neu = [float(v) for v in loss_w]

    cdef int pc = w_all.shape[0] // 3
    ws = [w_all[j * pc:(j + 1) * pc] for j in range(3)]
    cdef int n_int = interior.shape[1]
    cdef int n_in = inlet_phi.shape[1]
    cdef int n_if = iface_a.shape[1]
    cdef int n_end = end_phi.shape[1]
    cdef int n_tot = 3 * n_int
    cdef int n_bc = 3 * n_in
    cdef int n_ift = 3 * n_if
    cdef int n_neu = 3 * 2 * n_end

    _pool_reset()
    grad = np.zeros(3 * pc) if want_grad else None
    gviews = [grad[j * pc:(j + 1) * pc] for j in range(3)] if want_grad else None

    def bar_like(out):
        b = _pool_get(out.shape)
        b[:] = 0.0
        return b

    # interior: PDE residuals need value, d/dphi, d/dz, d2/dz2
    pde_sum = 0.0
    for j in range(3):
        stack0, caches, out = _forward_pass(ws[j], sizes, interior[j], 2, 1, True)
        T = out[0:n_int, 0]
        Tm = out[0:n_int, 1]
        Rc = out[n_int:2 * n_int, 1] - ntu[j] * (T - Tm) \
            - (1.0 / pe[j]) * out[3 * n_int:4 * n_int, 1]
        Rv = out[2 * n_int:3 * n_int, 0] - ntu[j] * (Tm - T)
        pde_sum += float(Rc @ Rc) + float(Rv @ Rv)
        if want_grad:
            bar = bar_like(out)
            cRc = (w_pde / n_tot) * Rc
            cRv = (w_pde / n_tot) * Rv
            bar[n_int:2 * n_int, 1] = cRc
            bar[0:n_int, 0] = -ntu[j] * cRc + ntu[j] * cRv
            bar[0:n_int, 1] = ntu[j] * cRc - ntu[j] * cRv
            bar[3 * n_int:4 * n_int, 1] = -(1.0 / pe[j]) * cRc
            bar[2 * n_int:3 * n_int, 0] = cRv
            _backward_pass(ws[j], sizes, stack0, caches, bar, 2, 1, gviews[j], True)
    L_pde = pde_sum / (2 * n_tot)

    # inlet: fluid value at z = 0
    bc_sum = 0.0
    for j in range(3):
        X = np.column_stack([inlet_phi[j], np.zeros(n_in)])
        stack0, caches, out = _forward_pass(ws[j], sizes, X, 0, 0, True)
        mis = out[0:n_in, 0] - theta_in[j]
        bc_sum += float(mis @ mis)
        if want_grad:
            bar = bar_like(out)
            bar[0:n_in, 0] = (2.0 * w_bc / n_bc) * mis
            _backward_pass(ws[j], sizes, stack0, caches, bar, 0, 0, gviews[j], True)
    L_bc = bc_sum / n_bc

    # interfaces: metal continuity between net k and net (k+2) % 3
    if_sum = 0.0
    for k in range(3):
        ja, jb = k, (k + 2) % 3
        sa0, ca, oa = _forward_pass(ws[ja], sizes, iface_a[k], 0, 0, True)
        dmis_a = oa[0:n_if, 1].copy()
        if want_grad:
            bar_a = bar_like(oa)
        sb0, cb, ob = _forward_pass(ws[jb], sizes, iface_b[k], 0, 0, True)
        dmis = dmis_a - ob[0:n_if, 1]
        if_sum += float(dmis @ dmis)
        if want_grad:
            co = (2.0 * w_if / n_ift) * dmis
            bar_a[0:n_if, 1] = co
            bar = bar_like(ob)
            bar[0:n_if, 1] = -co
            _backward_pass(ws[jb], sizes, sb0, cb, bar, 0, 0, gviews[jb], True)
            _backward_pass(ws[ja], sizes, sa0, ca, bar_a, 0, 0, gviews[ja], True)
    L_if = if_sum / n_ift

    # end derivative: metal d/dz at z in {0, 1}
    neu_sum = 0.0
    for j in range(3):
        phis = end_phi[j]
        X = np.vstack([np.column_stack([phis, np.zeros(n_end)]),
                       np.column_stack([phis, np.ones(n_end)])])
        stack0, caches, out = _forward_pass(ws[j], sizes, X, 2, 0, True)
        m = 2 * n_end
        dz_m = out[2 * m:3 * m, 1]
        neu_sum += float(dz_m @ dz_m)
        if want_grad:
            bar = bar_like(out)
            bar[2 * m:3 * m, 1] = (2.0 * w_neu / n_neu) * dz_m
            _backward_pass(ws[j], sizes, stack0, caches, bar, 2, 0, gviews[j], True)
    L_neu = neu_sum / n_neu

    terms = np.array([w_pde * L_pde, w_bc * L_bc, w_if * L_if, w_neu * L_neu])
    total = float(terms.sum())
    return total, terms, grad
