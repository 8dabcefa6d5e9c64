"""Dense tensors with reverse-mode automatic differentiation.

Exactly the operation set a confidence-map regression network needs:
conv2d ("same" padding, stride 1), 2x2 max pooling, 2x bilinear
upsampling, batch normalization, relu, sigmoid, channel concatenation,
broadcast multiply, and the two loss reductions (MSE, clamped BCE).

Layout: activations are channel-planar float32 arrays of shape
(N, C, H, W); conv weights are (Cout, Cin, k, k).  The planar layout
keeps per-channel rows contiguous, which is what both the numba kernels
and numpy reductions want.

Autodiff is a taped graph: each op links its output to its inputs and a
closure that routes the output gradient to them.  backward() seeds a
scalar loss with gradient 1 and walks the tape in reverse topological
order.  Gradients on leaf tensors accumulate across backward() calls;
intermediate gradients are reset at the start of each call.  Callers
(the optimizer/trainer) zero leaf gradients explicitly between batches.

Reductions (losses, batchnorm statistics) accumulate in float64 even
when tensors are float32.  Float64 tensors run through a pure-numpy
path, used by the finite-difference gradient checks.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from . import _kernels

_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording (inference mode) for the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A dense float tensor, optionally tracked by the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _result(data, parents, backward_fn):
    """Wrap an op result, recording the tape edge when grads are on."""
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g, owned=False):
    # first contribution assigns (stealing arrays the closure freshly
    # allocated, copying views of someone else's buffer); later ones add
    if t.grad is None:
        if owned and isinstance(g, np.ndarray) and g.dtype == t.data.dtype:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def backward(loss: Tensor):
    """Propagate d(loss)/d(tensor) to every requires_grad leaf.

    loss must be a scalar (size 1).  Leaf gradients accumulate across
    calls; zero them explicitly (optimizer.zero_grad) between batches.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    # intermediate grads restart every call; leaf grads accumulate across calls
    for node in topo:
        if node._parents:
            node.grad = None
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad = loss.grad + np.ones_like(loss.data)

    for node in reversed(topo):
        if node._parents and node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# convolution


def _use_kernels(*arrays):
    return _kernels.HAVE_NUMBA and all(a.dtype == np.float32 for a in arrays)


def _conv_forward_numpy(x, w, b):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    xp = _kernels.pad_spatial(x, p) if p else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, Ci, H, W, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, ci * k * k)
    out2 = cols @ w.reshape(co, ci * k * k).T
    out2 += b
    out = out2.reshape(n, h, wd, co).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Cross-correlation with "same" zero padding and stride 1.

    x: (N, Cin, H, W); w: (Cout, Cin, k, k) with odd k; b: (Cout,).
    Output spatial size equals input spatial size.
    """
    xd, wd_, bd = x.data, w.data, b.data
    if xd.ndim != 4 or wd_.ndim != 4 or bd.ndim != 1:
        raise ValueError("conv2d expects x (N,C,H,W), w (Co,Ci,k,k), b (Co,)")
    n, ci, h, wid = xd.shape
    co, ci_w, k, k2 = wd_.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {k}x{k2}")
    if ci_w != ci:
        raise ValueError(f"conv2d channel mismatch: input has {ci}, kernel expects {ci_w}")
    if bd.shape[0] != co:
        raise ValueError(f"conv2d bias length {bd.shape[0]} != output channels {co}")
    if h < 1 or wid < 1:
        raise ValueError("conv2d requires spatial dims >= 1")

    fast = _use_kernels(xd, wd_, bd) and k in (1, 3)
    cols = None
    if fast:
        xd = np.ascontiguousarray(xd)
        out = np.empty((n, co, h, wid), np.float32)
        if k == 3:
            xp = _kernels.pad_spatial(xd, 1)
            _kernels.conv3x3_fwd(xp, wd_, bd, out)
        else:
            xp = xd
            _kernels.conv1x1_fwd(xd, wd_.reshape(co, ci), bd, out)
    else:
        out, cols = _conv_forward_numpy(xd, wd_, bd)
        xp = None

    def bwd(g):
        g = np.ascontiguousarray(g)
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3), dtype=np.float64).astype(bd.dtype))
        if w.requires_grad:
            if fast:
                gw = np.empty((co, ci, k, k), np.float64)
                if k == 3:
                    _kernels.conv3x3_grad_w(xp, g, gw)
                else:
                    _kernels.conv1x1_grad_w(xp, g, gw.reshape(co, ci))
                _accum(w, gw.astype(np.float32))
            else:
                g2 = g.transpose(0, 2, 3, 1).reshape(n * h * wid, co)
                gw = (g2.T @ cols).reshape(co, ci, k, k)
                _accum(w, gw.astype(wd_.dtype))
        if x.requires_grad:
            # full correlation of g with spatially flipped, channel-swapped w
            wf = np.ascontiguousarray(wd_.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            zb = np.zeros(ci, dtype=wd_.dtype)
            if fast:
                gx = np.empty((n, ci, h, wid), np.float32)
                if k == 3:
                    _kernels.conv3x3_fwd(_kernels.pad_spatial(g, 1), wf, zb, gx)
                else:
                    _kernels.conv1x1_fwd(g, wf.reshape(ci, co), zb, gx)
            else:
                gx, _ = _conv_forward_numpy(g, wf, zb)
            _accum(x, gx, owned=True)

    return _result(out, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# pooling and upsampling


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2.  Gradient routes to the first (row-major)
    maximum of each window."""
    d = x.data
    if d.ndim != 4:
        raise ValueError("maxpool2 expects (N,C,H,W)")
    n, c, h, w = d.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 requires even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    if _use_kernels(d):
        d = np.ascontiguousarray(d)
        out = np.empty((n, c, h2, w2), np.float32)
        idx = np.empty((n, c, h2, w2), np.uint8)
        _kernels.maxpool2_fwd(d, out, idx)

        def bwd(g):
            gx = np.zeros((n, c, h, w), np.float32)
            _kernels.maxpool2_bwd(np.ascontiguousarray(g), idx, gx)
            _accum(x, gx, owned=True)

        return _result(out, (x,), bwd)

    win = d.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gw = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, np.ascontiguousarray(gx))

    return _result(np.ascontiguousarray(out), (x,), bwd)


def _up2_axis(a, axis):
    # 2x bilinear along one axis, half-pixel convention (align_corners=False):
    # output i samples input at i/2 - 0.25, clamped to the valid range.
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    out = np.empty((2 * n,) + a.shape[1:], dtype=a.dtype)
    out[0] = a[0]
    out[-1] = a[-1]
    if n > 1:
        out[1:-1:2] = 0.75 * a[:-1] + 0.25 * a[1:]
        out[2::2] = 0.25 * a[:-1] + 0.75 * a[1:]
    return np.moveaxis(out, 0, axis)


def _up2_axis_T(g, axis):
    g = np.moveaxis(g, axis, 0)
    n = g.shape[0] // 2
    gx = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
    gx[0] += g[0]
    gx[-1] += g[-1]
    if n > 1:
        odd = g[1:-1:2]
        even = g[2::2]
        gx[:-1] += 0.75 * odd + 0.25 * even
        gx[1:] += 0.25 * odd + 0.75 * even
    return np.moveaxis(gx, 0, axis)


def upsample2(x: Tensor) -> Tensor:
    """2x bilinear upsampling with the half-pixel (align_corners=False)
    sampling convention.  Constant maps stay constant."""
    d = x.data
    if d.ndim != 4:
        raise ValueError("upsample2 expects (N,C,H,W)")

    def bwd(g):
        if _use_kernels(g):
            n, c, h2, w2 = g.shape
            gx = np.empty((n, c, h2 // 2, w2 // 2), np.float32)
            _kernels.upsample2_bwd(np.ascontiguousarray(g), gx)
            _accum(x, gx, owned=True)
        else:
            _accum(x, np.ascontiguousarray(_up2_axis_T(_up2_axis_T(g, 3), 2)),
                   owned=True)

    if _use_kernels(d):
        n, c, h, w = d.shape
        out = np.empty((n, c, 2 * h, 2 * w), np.float32)
        _kernels.upsample2_fwd(np.ascontiguousarray(d), out)
        return _result(out, (x,), bwd)

    out = _up2_axis(_up2_axis(d, 2), 3)
    return _result(np.ascontiguousarray(out), (x,), bwd)


# ---------------------------------------------------------------------------
# batch normalization


def _asarray_param(p):
    return p.data if isinstance(p, Tensor) else p


def _channel_sums(d):
    if _use_kernels(d):
        s = np.empty(d.shape[1], np.float64)
        q = np.empty(d.shape[1], np.float64)
        _kernels.channel_sums(np.ascontiguousarray(d), s, q)
        return s, q
    s = d.sum(axis=(0, 2, 3), dtype=np.float64)
    q = (d.astype(np.float64) ** 2).sum(axis=(0, 2, 3))
    return s, q


def _channel_dot_sums(g, xh):
    if _use_kernels(g, xh):
        s = np.empty(g.shape[1], np.float64)
        dd = np.empty(g.shape[1], np.float64)
        _kernels.channel_dot_sums(np.ascontiguousarray(g), np.ascontiguousarray(xh), s, dd)
        return s, dd
    s = g.sum(axis=(0, 2, 3), dtype=np.float64)
    dd = (g.astype(np.float64) * xh.astype(np.float64)).sum(axis=(0, 2, 3))
    return s, dd


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
              *, training: bool, momentum: float = 0.99, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes by biased batch statistics and updates the
    running buffers in place: r <- momentum*r + (1-momentum)*batch.
    Inference mode applies the affine map implied by the running buffers.
    """
    d = x.data
    if d.ndim != 4:
        raise ValueError("batchnorm expects (N,C,H,W)")
    n, c, h, w = d.shape
    gd, bd = gamma.data, beta.data
    rm, rv = _asarray_param(running_mean), _asarray_param(running_var)
    for name, arr in (("gamma", gd), ("beta", bd), ("running_mean", rm), ("running_var", rv)):
        if arr.shape != (c,):
            raise ValueError(f"batchnorm {name} has shape {arr.shape}, expected ({c},)")
    m = n * h * w
    if m == 0:
        raise ValueError("batchnorm requires at least one element per channel")

    if training:
        s, q = _channel_sums(d)
        mean = s / m
        var = np.maximum(q / m - mean * mean, 0.0)
        inv = 1.0 / np.sqrt(var + eps)
        mean32 = mean.astype(d.dtype)
        inv32 = inv.astype(d.dtype)
        if _use_kernels(d):
            d = np.ascontiguousarray(d)
            xhat = np.empty_like(d)
            out = np.empty_like(d)
            _kernels.bn_apply(d, mean32, inv32, gd, bd, xhat, out)
        else:
            xhat = (d - mean32[None, :, None, None]) * inv32[None, :, None, None]
            out = xhat * gd[None, :, None, None] + bd[None, :, None, None]
        rm[:] = (momentum * rm.astype(np.float64) + (1.0 - momentum) * mean).astype(rm.dtype)
        rv[:] = (momentum * rv.astype(np.float64) + (1.0 - momentum) * var).astype(rv.dtype)

        def bwd(g):
            sg, sgx = _channel_dot_sums(g, xhat)
            if beta.requires_grad:
                _accum(beta, sg.astype(bd.dtype))
            if gamma.requires_grad:
                _accum(gamma, sgx.astype(gd.dtype))
            if x.requires_grad:
                coef = gd * inv32
                mg = (sg / m).astype(d.dtype)
                mgx = (sgx / m).astype(d.dtype)
                if _use_kernels(g, xhat):
                    gx = np.empty_like(xhat)
                    _kernels.bn_backward_dx(np.ascontiguousarray(g), xhat,
                                            coef, mg, mgx, gx)
                    _accum(x, gx, owned=True)
                else:
                    _accum(x, coef[None, :, None, None] * (
                        g - mg[None, :, None, None]
                        - xhat * mgx[None, :, None, None]), owned=True)

        return _result(out, (x, gamma, beta), bwd)

    inv = (1.0 / np.sqrt(rv.astype(np.float64) + eps)).astype(d.dtype)
    sc = gd * inv
    sh = bd - rm * sc
    out = d * sc[None, :, None, None] + sh[None, :, None, None]

    def bwd_inf(g):
        if beta.requires_grad or gamma.requires_grad:
            sg, sgx = _channel_dot_sums(g, d)
            if beta.requires_grad:
                _accum(beta, sg.astype(bd.dtype))
            if gamma.requires_grad:
                _accum(gamma, ((sgx - rm.astype(np.float64) * sg) * inv).astype(gd.dtype))
        if x.requires_grad:
            _accum(x, g * sc[None, :, None, None])

    return _result(out, (x, gamma, beta), bwd_inf)


# ---------------------------------------------------------------------------
# elementwise ops


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        if _use_kernels(g, x.data) and g.shape == x.data.shape:
            gx = np.empty_like(g)
            _kernels.relu_bwd(np.ascontiguousarray(g), np.ascontiguousarray(x.data), gx)
            _accum(x, gx, owned=True)
        else:
            _accum(x, g * (x.data > 0), owned=True)

    return _result(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def bwd(g):
        _accum(x, g * (s * (1 - s)), owned=True)

    return _result(s, (x,), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; N, H, W must match."""
    da, db = a.data, b.data
    if da.ndim != 4 or db.ndim != 4:
        raise ValueError("concat_channels expects (N,C,H,W) inputs")
    if da.shape[0] != db.shape[0] or da.shape[2:] != db.shape[2:]:
        raise ValueError(f"concat_channels N/H/W mismatch: {da.shape} vs {db.shape}")
    ca = da.shape[1]
    out = np.concatenate([da, db], axis=1)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g[:, :ca])
        if b.requires_grad:
            _accum(b, g[:, ca:])

    return _result(out, (a, b), bwd)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product.  Shapes must be equal, or both (N,*,H,W) with a
    1-channel side broadcast across the other's channels (attention gating)."""
    da, db = a.data, b.data
    if da.shape != db.shape:
        ok = (
            da.ndim == 4
            and db.ndim == 4
            and da.shape[0] == db.shape[0]
            and da.shape[2:] == db.shape[2:]
            and (da.shape[1] == 1 or db.shape[1] == 1)
        )
        if not ok:
            raise ValueError(f"multiply shapes not compatible: {da.shape} vs {db.shape}")
    out = da * db

    def bwd(g):
        if a.requires_grad:
            ga = g * db
            if da.shape != ga.shape:
                ga = ga.sum(axis=1, keepdims=True)
            _accum(a, ga, owned=True)
        if b.requires_grad:
            gb = g * da
            if db.shape != gb.shape:
                gb = gb.sum(axis=1, keepdims=True)
            _accum(b, gb, owned=True)

    return _result(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g)

    return _result(out, (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    out = x.data * x.data.dtype.type(c)

    def bwd(g):
        _accum(x, g * x.data.dtype.type(c))

    return _result(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    val = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    return _result(val, (x,), bwd)


# ---------------------------------------------------------------------------
# losses


def _as_tensor(t):
    return t if isinstance(t, Tensor) else Tensor(t)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    target = _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    m = diff.size
    val = np.asarray((diff.astype(np.float64) ** 2).mean(), dtype=pred.data.dtype)

    def bwd(g):
        c = g * 2.0 / m
        if pred.requires_grad:
            _accum(pred, (c * diff).astype(pred.data.dtype), owned=True)
        if target.requires_grad:
            _accum(target, (-c * diff).astype(target.data.dtype), owned=True)

    return _result(val, (pred, target), bwd)


def bce_loss(att: Tensor, mask, clamp: float = 1e-7) -> Tensor:
    """Binary cross-entropy of a probability map against a binary mask.

    Inputs are clamped to [clamp, 1-clamp] before the logs; the gradient
    is zero where the clamp is active.  The mask is treated as constant.
    """
    mask = _as_tensor(mask)
    md = mask.data
    if att.data.shape != md.shape:
        raise ValueError(f"bce_loss shape mismatch: {att.data.shape} vs {md.shape}")
    lo, hi = clamp, 1.0 - clamp
    a = np.clip(att.data, lo, hi)
    m = a.size
    terms = md.astype(np.float64) * np.log(a.astype(np.float64))
    terms += (1.0 - md.astype(np.float64)) * np.log1p(-a.astype(np.float64))
    val = np.asarray(-terms.mean(), dtype=att.data.dtype)

    def bwd(g):
        if att.requires_grad:
            inside = (att.data > lo) & (att.data < hi)
            da = (-md / a + (1.0 - md) / (1.0 - a)) / m
            _accum(att, (g * da * inside).astype(att.data.dtype), owned=True)

    return _result(val, (att, mask), bwd)
