"""Numba kernels for the float32 hot paths.

Activations are channel-planar (N, C, H, W) and C-contiguous.  Inner loops
run along the W axis so they vectorize; per-row partial sums are float32
and cross-row accumulation is float64, which keeps reductions stable
without giving up vector width.  Loop order is fixed, so results are
deterministic within a build.

If numba is unavailable the callers in tensor.py fall back to a pure-numpy
im2col path (same semantics, slower).  Float64 inputs always take the
numpy path; these kernels are float32-only.
"""

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # noqa: D103
        def wrap(f):
            return f

        return wrap

    prange = range


def pad_spatial(x, p):
    """Zero-pad the last two axes of a planar array by p on each side."""
    n, c, h, w = x.shape
    out = np.empty((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, :p, :] = 0
    out[:, :, p + h :, :] = 0
    out[:, :, p : p + h, :p] = 0
    out[:, :, p : p + h, p + w :] = 0
    out[:, :, p : p + h, p : p + w] = x
    return out


@njit(parallel=True, fastmath=True, cache=True)
def conv3x3_fwd(xp, w, b, out):
    # xp: (N, Ci, H+2, W+2), w: (Co, Ci, 3, 3), b: (Co,), out: (N, Co, H, W)
    # all three vertical taps of a channel fuse into one pass over the row
    n_im, co_n, h, w_n = out.shape
    ci_n = xp.shape[1]
    for n in prange(n_im):
        for co in range(co_n):
            for y in range(h):
                orow = out[n, co, y]
                bias = b[co]
                for x in range(w_n):
                    orow[x] = bias
                for ci in range(ci_n):
                    x0 = xp[n, ci, y]
                    x1 = xp[n, ci, y + 1]
                    x2 = xp[n, ci, y + 2]
                    wv = w[co, ci]
                    w00 = wv[0, 0]; w01 = wv[0, 1]; w02 = wv[0, 2]
                    w10 = wv[1, 0]; w11 = wv[1, 1]; w12 = wv[1, 2]
                    w20 = wv[2, 0]; w21 = wv[2, 1]; w22 = wv[2, 2]
                    for x in range(w_n):
                        orow[x] += (
                            x0[x] * w00 + x0[x + 1] * w01 + x0[x + 2] * w02
                            + x1[x] * w10 + x1[x + 1] * w11 + x1[x + 2] * w12
                            + x2[x] * w20 + x2[x + 1] * w21 + x2[x + 2] * w22
                        )


@njit(parallel=True, fastmath=True, cache=True)
def conv3x3_grad_w(xp, g, gw):
    # gw[co, ci, ki, kj] = sum over (n, y, x) of g[n, co, y, x] * xp[n, ci, y+ki, x+kj]
    # one pass over the rows per (co, ci): all nine taps accumulate together
    n_im, co_n, h, w_n = g.shape
    ci_n = xp.shape[1]
    for co in prange(co_n):
        for ci in range(ci_n):
            a00 = a01 = a02 = a10 = a11 = a12 = a20 = a21 = a22 = 0.0
            for n in range(n_im):
                for y in range(h):
                    grow = g[n, co, y]
                    x0 = xp[n, ci, y]
                    x1 = xp[n, ci, y + 1]
                    x2 = xp[n, ci, y + 2]
                    s00 = np.float32(0.0); s01 = np.float32(0.0); s02 = np.float32(0.0)
                    s10 = np.float32(0.0); s11 = np.float32(0.0); s12 = np.float32(0.0)
                    s20 = np.float32(0.0); s21 = np.float32(0.0); s22 = np.float32(0.0)
                    for x in range(w_n):
                        gv = grow[x]
                        s00 += gv * x0[x]
                        s01 += gv * x0[x + 1]
                        s02 += gv * x0[x + 2]
                        s10 += gv * x1[x]
                        s11 += gv * x1[x + 1]
                        s12 += gv * x1[x + 2]
                        s20 += gv * x2[x]
                        s21 += gv * x2[x + 1]
                        s22 += gv * x2[x + 2]
                    a00 += s00; a01 += s01; a02 += s02
                    a10 += s10; a11 += s11; a12 += s12
                    a20 += s20; a21 += s21; a22 += s22
            gw[co, ci, 0, 0] = a00; gw[co, ci, 0, 1] = a01; gw[co, ci, 0, 2] = a02
            gw[co, ci, 1, 0] = a10; gw[co, ci, 1, 1] = a11; gw[co, ci, 1, 2] = a12
            gw[co, ci, 2, 0] = a20; gw[co, ci, 2, 1] = a21; gw[co, ci, 2, 2] = a22


@njit(parallel=True, fastmath=True, cache=True)
def conv1x1_fwd(x, w, b, out):
    # x: (N, Ci, H, W), w: (Co, Ci), b: (Co,), out: (N, Co, H, W)
    n_im, co_n, h, w_n = out.shape
    ci_n = x.shape[1]
    for n in prange(n_im):
        for co in range(co_n):
            for y in range(h):
                orow = out[n, co, y]
                bias = b[co]
                for xx in range(w_n):
                    orow[xx] = bias
                for ci in range(ci_n):
                    wv = w[co, ci]
                    xrow = x[n, ci, y]
                    for xx in range(w_n):
                        orow[xx] += xrow[xx] * wv


@njit(parallel=True, fastmath=True, cache=True)
def conv1x1_grad_w(x, g, gw):
    n_im, co_n, h, w_n = g.shape
    ci_n = x.shape[1]
    for co in prange(co_n):
        for ci in range(ci_n):
            acc = 0.0
            for n in range(n_im):
                for y in range(h):
                    grow = g[n, co, y]
                    xrow = x[n, ci, y]
                    s = np.float32(0.0)
                    for xx in range(w_n):
                        s += grow[xx] * xrow[xx]
                    acc += s
            gw[co, ci] = acc


@njit(parallel=True, fastmath=True, cache=True)
def relu_bwd(g, x, out):
    n = g.size
    gf = g.reshape(n)
    xf = x.reshape(n)
    of = out.reshape(n)
    for i in prange(n):
        of[i] = gf[i] if xf[i] > 0.0 else np.float32(0.0)


@njit(parallel=True, fastmath=True, cache=True)
def channel_sums(x, out_sum, out_sq):
    # Per-channel sum and sum of squares, float64 across rows.
    n_im, c_n, h, w_n = x.shape
    for c in prange(c_n):
        total = 0.0
        total_sq = 0.0
        for n in range(n_im):
            for y in range(h):
                row = x[n, c, y]
                s = np.float32(0.0)
                q = np.float32(0.0)
                for xx in range(w_n):
                    v = row[xx]
                    s += v
                    q += v * v
                total += s
                total_sq += q
        out_sum[c] = total
        out_sq[c] = total_sq


@njit(parallel=True, fastmath=True, cache=True)
def bn_apply(x, mean, inv, gamma, beta, xhat, out):
    # xhat = (x - mean) * inv;  out = xhat * gamma + beta   (one pass)
    n_im, c_n, h, w_n = x.shape
    for n in prange(n_im):
        for c in range(c_n):
            m = mean[c]
            iv = inv[c]
            gm = gamma[c]
            bt = beta[c]
            for y in range(h):
                xr = x[n, c, y]
                hr = xhat[n, c, y]
                orow = out[n, c, y]
                for xx in range(w_n):
                    v = (xr[xx] - m) * iv
                    hr[xx] = v
                    orow[xx] = v * gm + bt


@njit(parallel=True, fastmath=True, cache=True)
def bn_backward_dx(g, xhat, coef, mg, mgx, out):
    # out = coef * (g - mg - xhat * mgx), per channel constants
    n_im, c_n, h, w_n = g.shape
    for n in prange(n_im):
        for c in range(c_n):
            cf = coef[c]
            a = mg[c]
            b = mgx[c]
            for y in range(h):
                gr = g[n, c, y]
                hr = xhat[n, c, y]
                orow = out[n, c, y]
                for xx in range(w_n):
                    orow[xx] = cf * (gr[xx] - a - hr[xx] * b)


@njit(parallel=True, fastmath=True, cache=True)
def maxpool2_fwd(x, out, idx):
    # idx stores the row-major window argmax (0..3); first maximum wins
    n_im, c_n, h2, w2 = out.shape
    for n in prange(n_im):
        for c in range(c_n):
            for y in range(h2):
                r0 = x[n, c, 2 * y]
                r1 = x[n, c, 2 * y + 1]
                orow = out[n, c, y]
                irow = idx[n, c, y]
                for xx in range(w2):
                    v0 = r0[2 * xx]
                    v1 = r0[2 * xx + 1]
                    v2 = r1[2 * xx]
                    v3 = r1[2 * xx + 1]
                    best = v0
                    bi = np.uint8(0)
                    if v1 > best:
                        best = v1
                        bi = np.uint8(1)
                    if v2 > best:
                        best = v2
                        bi = np.uint8(2)
                    if v3 > best:
                        best = v3
                        bi = np.uint8(3)
                    orow[xx] = best
                    irow[xx] = bi


@njit(parallel=True, fastmath=True, cache=True)
def maxpool2_bwd(g, idx, out):
    n_im, c_n, h2, w2 = g.shape
    for n in prange(n_im):
        for c in range(c_n):
            for y in range(h2):
                gr = g[n, c, y]
                irow = idx[n, c, y]
                o0 = out[n, c, 2 * y]
                o1 = out[n, c, 2 * y + 1]
                for xx in range(w2):
                    k = irow[xx]
                    gv = gr[xx]
                    if k == 0:
                        o0[2 * xx] = gv
                    elif k == 1:
                        o0[2 * xx + 1] = gv
                    elif k == 2:
                        o1[2 * xx] = gv
                    else:
                        o1[2 * xx + 1] = gv


@njit(parallel=True, fastmath=True, cache=True)
def upsample2_fwd(x, out):
    # separable half-pixel bilinear: rows then columns, fused per output row
    n_im, c_n, h, w = x.shape
    for n in prange(n_im):
        for c in range(c_n):
            for oy in range(2 * h):
                if oy == 0:
                    ra = x[n, c, 0]
                    rb = x[n, c, 0]
                    wa = np.float32(1.0)
                elif oy == 2 * h - 1:
                    ra = x[n, c, h - 1]
                    rb = x[n, c, h - 1]
                    wa = np.float32(1.0)
                elif oy % 2 == 1:
                    ra = x[n, c, (oy - 1) // 2]
                    rb = x[n, c, (oy - 1) // 2 + 1]
                    wa = np.float32(0.75)
                else:
                    ra = x[n, c, oy // 2 - 1]
                    rb = x[n, c, oy // 2]
                    wa = np.float32(0.25)
                wb = np.float32(1.0) - wa
                orow = out[n, c, oy]
                orow[0] = ra[0] * wa + rb[0] * wb
                orow[2 * w - 1] = ra[w - 1] * wa + rb[w - 1] * wb
                for ox in range(1, 2 * w - 1):
                    if ox % 2 == 1:
                        xa = (ox - 1) // 2
                        va = ra[xa] * np.float32(0.75) + ra[xa + 1] * np.float32(0.25)
                        vb = rb[xa] * np.float32(0.75) + rb[xa + 1] * np.float32(0.25)
                    else:
                        xa = ox // 2 - 1
                        va = ra[xa] * np.float32(0.25) + ra[xa + 1] * np.float32(0.75)
                        vb = rb[xa] * np.float32(0.25) + rb[xa + 1] * np.float32(0.75)
                    orow[ox] = va * wa + vb * wb


@njit(parallel=True, fastmath=True, cache=True)
def upsample2_bwd(g, out):
    # transpose of upsample2_fwd; gathers per input pixel, columns then rows
    n_im, c_n, h, w = out.shape
    for n in prange(n_im):
        for c in range(c_n):
            tmp = np.empty((2 * h, w), np.float32)
            for oy in range(2 * h):
                grow = g[n, c, oy]
                trow = tmp[oy]
                for xx in range(w):
                    acc = np.float32(0.0)
                    if xx == 0:
                        acc += grow[0]
                    else:
                        acc += np.float32(0.25) * grow[2 * xx - 1] \
                            + np.float32(0.75) * grow[2 * xx]
                    if xx == w - 1:
                        acc += grow[2 * w - 1]
                    else:
                        acc += np.float32(0.75) * grow[2 * xx + 1] \
                            + np.float32(0.25) * grow[2 * xx + 2]
                    trow[xx] = acc
            for yy in range(h):
                orow = out[n, c, yy]
                if yy == 0:
                    ta = tmp[0]
                    for xx in range(w):
                        orow[xx] = ta[xx]
                else:
                    ta = tmp[2 * yy - 1]
                    tb = tmp[2 * yy]
                    for xx in range(w):
                        orow[xx] = np.float32(0.25) * ta[xx] + np.float32(0.75) * tb[xx]
                if yy == h - 1:
                    ta = tmp[2 * h - 1]
                    for xx in range(w):
                        orow[xx] += ta[xx]
                else:
                    ta = tmp[2 * yy + 1]
                    tb = tmp[2 * yy + 2]
                    for xx in range(w):
                        orow[xx] += np.float32(0.75) * ta[xx] + np.float32(0.25) * tb[xx]


@njit(parallel=True, fastmath=True, cache=True)
def channel_dot_sums(g, xhat, out_sum, out_dot):
    # Per-channel sum of g and sum of g * xhat (batchnorm backward terms).
    n_im, c_n, h, w_n = g.shape
    for c in prange(c_n):
        total = 0.0
        total_dot = 0.0
        for n in range(n_im):
            for y in range(h):
                grow = g[n, c, y]
                xrow = xhat[n, c, y]
                s = np.float32(0.0)
                d = np.float32(0.0)
                for xx in range(w_n):
                    s += grow[xx]
                    d += grow[xx] * xrow[xx]
                total += s
                total_dot += d
        out_sum[c] = total
        out_dot[c] = total_dot
