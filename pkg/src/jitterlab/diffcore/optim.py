"""Adam optimizer over named parameter tensors."""

import numpy as np

from .tensor import Tensor


class Adam:
    """Standard Adam with bias correction.

    Holds first/second moment accumulators per parameter; ``step()`` consumes
    the ``.grad`` fields (a missing grad counts as zero).  Updates are plain
    numpy elementwise math, so two runs from identical state and gradients
    produce bitwise-identical parameters.
    """

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: dict[str, Tensor] = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape "
                                 f"{p.data.shape} for {k!r}")
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data = p.data - (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


class SGD:
    """Plain gradient descent; preserves relative gradient magnitudes.

    Useful when one loss term must not dominate by direction persistence
    alone, as Adam's per-coordinate normalization discards scale.
    """

    def __init__(self, params: dict, lr: float):
        self.params: dict[str, Tensor] = dict(params)
        self.lr = lr
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape "
                                 f"{p.data.shape} for {k!r}")
            p.data = p.data - self.lr * g
