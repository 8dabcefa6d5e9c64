"""Tour of the tensor core: taped ops, backward, and one Adam step.

Run: python3 demos/01_autodiff_basics.py
"""

import numpy as np

from canopy import tensor as T
from canopy.optim import Adam, make_param
from canopy.tensor import Tensor

rng = np.random.default_rng(0)

print("== forward ops on a tiny planar batch (N, C, H, W) ==")
x = Tensor(rng.standard_normal((1, 2, 6, 6)).astype(np.float32))
w = make_param(rng.standard_normal((4, 2, 3, 3)).astype(np.float32) * 0.3, name="w")
b = make_param(np.zeros(4, np.float32), name="b")

h = T.relu(T.conv2d(x, w, b))
print("conv+relu:", x.shape, "->", h.shape)
p = T.maxpool2(h)
print("maxpool2: ", h.shape, "->", p.shape)
u = T.upsample2(p)
print("upsample2:", p.shape, "->", u.shape, "(bilinear, half-pixel)")

print("\n== backward: d(sum of squared activations)/d(weights) ==")
loss = T.mse_loss(u, np.zeros(u.shape, np.float32))
T.backward(loss)
print(f"loss = {float(loss.data):.5f}")
print(f"w.grad: shape {w.grad.shape}, |mean| {abs(w.grad.mean()):.2e}")

print("\n== quick finite-difference sanity on one weight ==")
i = (0, 0, 1, 1)
eps = 1e-3
wd = w.data.astype(np.float64)
for sign in (+1, -1):
    w.data = wd.copy()
    w.data[i] += sign * eps
    with T.no_grad():
        out = T.upsample2(T.maxpool2(T.relu(T.conv2d(x, w, b))))
        val = float(T.mse_loss(out, np.zeros(out.shape, np.float32)).data)
    if sign > 0:
        plus = val
    else:
        minus = val
w.data = wd
numeric = (plus - minus) / (2 * eps)
print(f"analytic {w.grad[i]:+.6f} vs numeric {numeric:+.6f}")

print("\n== one Adam step on a least-squares toy ==")
target = rng.standard_normal(8).astype(np.float32)
theta = make_param(np.zeros(8, np.float32), name="theta")
opt = Adam({"theta": theta}, lr=0.1)
for step in range(30):
    loss = T.mse_loss(theta, target)
    opt.zero_grad()
    T.backward(loss)
    opt.step()
    if step % 10 == 0:
        print(f"step {step:2d}: loss {float(loss.data):.5f}")
print(f"final offset |theta - target| max: {np.abs(theta.data - target).max():.4f}")
