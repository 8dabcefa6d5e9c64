"""Independent reference implementations shared by the test modules.

These deliberately avoid the library's own code paths: matching is an
exhaustive bitmask enumeration instead of an assignment solver, peak
finding scans explicit windows, AP re-runs the sweep from its
definition.  They are the "second route" every oracle-checked result is
compared against.
"""

from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist


def match_oracle(pred, gt, gate):
    """(max cardinality, min total distance) over all gated matchings."""
    p = np.asarray(pred, float).reshape(-1, 2)
    g = np.asarray(gt, float).reshape(-1, 2)
    n, m = len(p), len(g)
    if n == 0 or m == 0:
        return 0, 0.0
    dist = cdist(p, g)

    @lru_cache(maxsize=None)
    def best(i, mask):
        if i == n:
            return (0, 0.0)
        top = best(i + 1, mask)
        for j in range(m):
            if not mask & (1 << j) and dist[i, j] <= gate:
                c, s = best(i + 1, mask | (1 << j))
                cand = (c + 1, s + dist[i, j])
                if cand[0] > top[0] or (cand[0] == top[0] and cand[1] < top[1]):
                    top = cand
        return top

    return best(0, 0)


def peak_oracle(m, params):
    """Brute-force window scan of the documented peak rule; returns a list
    of (x, y) in row-major order."""
    m = np.asarray(m, np.float64) + 0.0
    h, w = m.shape
    if params.mode == "absolute":
        above = m >= params.t_abs
    else:
        above = m > params.t_rel * m.max()
    d = params.d
    out = []
    for y, x in zip(*np.nonzero(above)):
        v = m[y, x]
        y0, y1 = max(0, y - d), min(h, y + d + 1)
        x0, x1 = max(0, x - d), min(w, x + d + 1)
        win = m[y0:y1, x0:x1]
        if (win > v).any():
            continue
        ok = True
        for ty, tx in zip(*np.nonzero(win == v)):
            if (y0 + ty, x0 + tx) < (y, x):
                ok = False
                break
        if ok:
            out.append((int(x), int(y)))
    return out


def ap_oracle(xy, conf, gt, gate):
    """Definition-level AP sweep on top of the exhaustive matcher."""
    gt = np.asarray(gt, float).reshape(-1, 2)
    if len(gt) == 0:
        return 0.0
    conf = np.asarray(conf, float)
    xy = np.asarray(xy, float).reshape(-1, 2)
    ap = 0.0
    r_prev = 0.0
    for t in sorted(set(conf.tolist()), reverse=True):
        sel = conf >= t
        tp, _ = match_oracle(xy[sel], gt, gate)
        npred = int(sel.sum())
        precision = tp / npred if npred else 0.0
        recall = tp / len(gt)
        ap += (recall - r_prev) * precision
        r_prev = recall
    return ap


def shiftadd_forward(weights):
    """Conv stack built from elementwise shift-and-add passes.

    Per-pixel accumulation order is a fixed (layer, oc, ic, ky, kx)
    sequence of elementwise operations, so outputs are bit-identical no
    matter which sub-window of a raster the input came from (receptive
    field: 2 px per 3x3 layer)."""

    def conv(x, w, b):
        co, ci = w.shape[:2]
        h, wd = x.shape[1:]
        xp = np.zeros((ci, h + 2, wd + 2), np.float32)
        xp[:, 1:-1, 1:-1] = x
        out = np.empty((co, h, wd), np.float32)
        for oc in range(co):
            acc = np.full((h, wd), b[oc], np.float32)
            for ic in range(ci):
                for ky in range(3):
                    for kx in range(3):
                        acc = acc + w[oc, ic, ky, kx] * xp[ic, ky : ky + h, kx : kx + wd]
            out[oc] = acc
        return out

    def fn(x5):
        a = np.maximum(conv(x5.astype(np.float32), weights[0][0], weights[0][1]), 0.0)
        a = np.maximum(conv(a, weights[1][0], weights[1][1]), 0.0)
        return conv(a, weights[2][0], weights[2][1])[0]

    return fn


def surrogate_weights(seed=0):
    rng = np.random.default_rng(seed)
    shapes = [(8, 5), (8, 8), (1, 8)]
    out = []
    for co, ci in shapes:
        out.append((rng.standard_normal((co, ci, 3, 3)).astype(np.float32) * 0.1,
                    rng.standard_normal(co).astype(np.float32) * 0.1))
    return out


def target_oracle(pts, h, w, sigma_px):
    """Per-point full-grid Gaussians reduced by an explicit maximum."""
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    maps = [np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2 * sigma_px ** 2))
            for px, py in np.asarray(pts, float).reshape(-1, 2)]
    if not maps:
        return np.zeros((h, w), np.float32)
    return np.maximum.reduce(maps).astype(np.float32)
