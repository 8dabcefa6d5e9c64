"""Central finite-difference verification of every differentiable op.

Each case builds a scalar loss from float64 leaf arrays, runs the tape
backward for analytic gradients, then perturbs each leaf element by +-h
and compares.  Float64 keeps the difference quotient clean; test points
are nudged away from relu/maxpool/clamp kinks, where a two-sided
difference would straddle the non-smoothness rather than measure a
gradient.

The full-network check perturbs along random directions in parameter
space instead of element-by-element (the parameter count makes per-
element differencing infeasible), which still exercises every layer's
backward at once.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    seed: int
    rel_err: float
    tolerance: float

    @property
    def ok(self):
        return self.rel_err < self.tolerance


def rel_error(a, n):
    """Max elementwise |a-n| / max(1, |a|, |n|)."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, x, h=1e-3):
    """Central finite differences of scalar f() w.r.t. ndarray x (in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def _away_from_zero(a, margin=0.05):
    a = a.copy()
    small = np.abs(a) < margin
    a[small] += np.where(a[small] >= 0, margin, -margin) * 2
    return a


def _distinct_grid(rng, shape, step=0.1):
    vals = rng.permutation(np.arange(np.prod(shape), dtype=np.float64)) * step
    return vals.reshape(shape)


def op_cases(seed):
    """(name, arrays, build) triples; build(tensors) -> scalar loss Tensor."""
    rng = np.random.default_rng(seed)

    def scalarize(out, r):
        return T.sum_all(T.multiply(out, Tensor(r)))

    cases = []

    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3)) * 0.5
    b = rng.standard_normal(3) * 0.1
    r = rng.standard_normal((1, 3, 5, 5))
    cases.append(("conv2d_3x3", [x, w, b],
                  lambda ts, r=r: scalarize(T.conv2d(*ts), r)))

    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((2, 3, 1, 1)) * 0.5
    b = rng.standard_normal(2) * 0.1
    r = rng.standard_normal((2, 2, 4, 4))
    cases.append(("conv2d_1x1", [x, w, b],
                  lambda ts, r=r: scalarize(T.conv2d(*ts), r)))

    x = _distinct_grid(rng, (1, 2, 4, 4))
    r = rng.standard_normal((1, 2, 2, 2))
    cases.append(("maxpool2", [x], lambda ts, r=r: scalarize(T.maxpool2(ts[0]), r)))

    x = rng.standard_normal((1, 2, 3, 3))
    r = rng.standard_normal((1, 2, 6, 6))
    cases.append(("upsample2", [x], lambda ts, r=r: scalarize(T.upsample2(ts[0]), r)))

    x = rng.standard_normal((2, 4, 4, 3)).transpose(0, 3, 1, 2).copy()  # (2,3,4,4)
    gm = rng.uniform(0.5, 1.5, 3)
    bt = rng.standard_normal(3) * 0.3

    def build_bn(ts):
        xt, g, b = ts
        out = T.batchnorm(xt, g, b, np.zeros(3), np.ones(3), training=True)
        return scalarize(out, build_bn.r)

    build_bn.r = rng.standard_normal(x.shape)
    cases.append(("batchnorm_train", [x, gm, bt], build_bn))

    def build_bn_inf(ts):
        xt, g, b = ts
        out = T.batchnorm(xt, g, b, build_bn_inf.rm, build_bn_inf.rv, training=False)
        return scalarize(out, build_bn_inf.r)

    build_bn_inf.rm = rng.standard_normal(3) * 0.2
    build_bn_inf.rv = rng.uniform(0.5, 2.0, 3)
    build_bn_inf.r = rng.standard_normal(x.shape)
    cases.append(("batchnorm_infer", [x.copy(), gm.copy(), bt.copy()], build_bn_inf))

    x = _away_from_zero(rng.standard_normal((2, 3, 4, 4)))
    r = rng.standard_normal(x.shape)
    cases.append(("relu", [x], lambda ts, r=r: scalarize(T.relu(ts[0]), r)))

    x = rng.standard_normal((2, 3, 4, 4))
    r = rng.standard_normal(x.shape)
    cases.append(("sigmoid", [x], lambda ts, r=r: scalarize(T.sigmoid(ts[0]), r)))

    a = rng.standard_normal((1, 2, 3, 3))
    b = rng.standard_normal((1, 3, 3, 3))
    r = rng.standard_normal((1, 5, 3, 3))
    cases.append(("concat_channels", [a, b],
                  lambda ts, r=r: scalarize(T.concat_channels(*ts), r)))

    a = rng.standard_normal((2, 1, 4, 4))
    b = rng.standard_normal((2, 3, 4, 4))
    r = rng.standard_normal((2, 3, 4, 4))
    cases.append(("multiply_broadcast", [a, b],
                  lambda ts, r=r: scalarize(T.multiply(*ts), r)))

    p = rng.standard_normal((2, 1, 6, 6))
    t = rng.standard_normal((2, 1, 6, 6))
    cases.append(("mse_loss", [p], lambda ts, t=t: T.mse_loss(ts[0], t)))

    a = rng.uniform(0.05, 0.95, (2, 1, 6, 6))
    m = (rng.uniform(size=(2, 1, 6, 6)) > 0.5).astype(np.float64)
    cases.append(("bce_loss", [a], lambda ts, m=m: T.bce_loss(ts[0], m)))

    return cases


def check_ops(seed, h=1e-3, tolerance=1e-3):
    """Run every op case at one seed; returns a list of CheckResult."""
    results = []
    for name, arrays, build in op_cases(seed):
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        loss = build(tensors)
        T.backward(loss)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                    for t in tensors]

        worst = 0.0
        for i, arr in enumerate(arrays):
            work = [a.copy() for a in arrays]

            def f(work=work):
                ts = [Tensor(a) for a in work]
                with T.no_grad():
                    return float(build(ts).data)

            num = numeric_grad(f, work[i], h=h)
            worst = max(worst, rel_error(analytic[i], num))
        results.append(CheckResult(name, seed, worst, tolerance))
    return results


def check_network(seed, tolerance=1e-3, n_directions=3, shape=(2, 16, 16)):
    """Directional finite-difference check of the full network loss.

    Builds the default-width model in float64, forms the combined loss on
    random inputs, and compares v . grad against (L(p+hv)-L(p-hv))/2h for
    random unit directions v over all trainable parameters.  The step
    shrinks adaptively (from 1e-5 by factors of 4) until two successive
    estimates agree: the randomly initialized full-width network has both
    large curvature (so 1e-3 steps are truncation-dominated) and a dense
    field of relu kinks (a fixed step occasionally straddles one); the
    converged quotient measures the smooth piece the analytic gradient
    lives on, with float64 headroom down to h ~ 1e-9.
    """
    from .model import build_model, forward
    from .train import combined_loss

    rng = np.random.default_rng(seed)
    n, hgt, wid = shape
    params = build_model(seed=seed)
    trainables = [t for _, t in params.trainable()]
    for t in params.tensors.values():
        t.data = t.data.astype(np.float64)

    x = Tensor(rng.standard_normal((n, 5, hgt, wid)))
    target = rng.uniform(0.0, 1.0, (n, 1, hgt, wid))
    mask = (target > 0.2).astype(np.float64)

    def loss_value():
        with T.no_grad():
            out = forward(params, x, mode="train")
            return float(combined_loss(out.confidence, out.attention, target, mask, 0.01).data)

    out = forward(params, x, mode="train")
    loss = combined_loss(out.confidence, out.attention, target, mask, 0.01)
    T.backward(loss)
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
             for t in trainables]

    def quotient(vs, h):
        for t, v in zip(trainables, vs):
            t.data += h * v
        fp = loss_value()
        for t, v in zip(trainables, vs):
            t.data -= 2 * h * v
        fm = loss_value()
        for t, v in zip(trainables, vs):
            t.data += h * v
        return (fp - fm) / (2.0 * h)

    worst = 0.0
    for _ in range(n_directions):
        vs = [rng.standard_normal(t.data.shape) for t in trainables]
        norm = np.sqrt(sum(float((v ** 2).sum()) for v in vs))
        vs = [v / norm for v in vs]
        analytic = sum(float((v * g).sum()) for v, g in zip(vs, grads))
        h = 1e-5
        numeric = quotient(vs, h)
        for _ in range(6):
            h /= 4.0
            refined = quotient(vs, h)
            settled = abs(refined - numeric) <= 0.25 * tolerance * max(1.0, abs(refined))
            numeric = refined
            if settled:
                break
        worst = max(worst, rel_error(np.array([analytic]), np.array([numeric])))
    return CheckResult("network_loss", seed, worst, tolerance)


def run_suite(seeds=(0, 1, 2, 3, 4), include_network=True):
    results = []
    for s in seeds:
        results.extend(check_ops(s))
    if include_network:
        for s in seeds:
            results.append(check_network(s))
    return results
