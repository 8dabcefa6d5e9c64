"""Adam optimizer with bias-corrected moments.

Hyperparameter defaults follow the training recipe used throughout this
package: lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-7.  The update is

    m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)

so a zero gradient leaves the parameter (and both moments) unchanged.
"""

import numpy as np

from .tensor import Tensor


class AdamState:
    """First/second moment buffers and step counter for one parameter."""

    __slots__ = ("m", "v")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-7):
        """params: mapping of name -> Tensor, or iterable of (name, Tensor)."""
        if isinstance(params, dict):
            items = list(params.items())
        else:
            items = list(params)
        self.params = [(n, p) for n, p in items if p.requires_grad]
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.state = {n: AdamState(p.data.shape, p.data.dtype) for n, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        """Apply one update using the gradients currently on the parameters.

        Parameters with grad None are treated as zero-gradient (skipped,
        which is equivalent since their moments would decay toward zero
        only through the bias correction of future steps -- moments are
        still advanced for consistency).
        """
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            st = self.state[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for parameter '{name}'")
            st.m *= self.beta1
            st.m += (1.0 - self.beta1) * g
            st.v *= self.beta2
            st.v += (1.0 - self.beta2) * np.square(g)
            mhat = st.m / c1
            vhat = st.v / c2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def adam_step(params, state: "Adam"):
    """Functional alias: one optimizer step over params already holding grads."""
    state.step()
    return params


def make_param(data, name=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)
