"""Named-parameter blocks built on the autodiff tensor.

A ``Graph`` owns trainable tensors (directly or through nested graphs) and
exposes them as a flat name -> Tensor mapping for optimizers, checkpoints,
and gradient queries.  Initialization is uniform(-sqrt(1/fan_in),
+sqrt(1/fan_in)) per layer, driven by a caller-supplied numpy Generator so
construction order fixes the parameter values.
"""

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Graph:
    """Base class for differentiable blocks with named parameters."""

    def named_parameters(self) -> dict:
        out = {}
        for attr, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out[attr] = val
            elif isinstance(val, Graph):
                for k, v in val.named_parameters().items():
                    out[f"{attr}.{k}"] = v
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Graph):
                        for k, v in item.named_parameters().items():
                            out[f"{attr}.{i}.{k}"] = v
        return out

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


class Affine(Graph):
    """Dense layer: x @ w + b."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = math.sqrt(1.0 / n_in)
        self.w = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, size=(n_out,)), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.w.data.shape[0]:
            raise ValueError(
                f"affine expects (N, {self.w.data.shape[0]}), got {x.data.shape}"
            )
        return T.matmul(x, self.w) + self.b


class Conv2d(Graph):
    """2D convolution layer, NCHW, zero padding."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int, padding: int,
                 rng: np.random.Generator):
        bound = math.sqrt(1.0 / (c_in * k * k))
        self.w = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)),
                        requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, size=(c_out,)), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


def gradients(loss: Tensor, wrt: dict) -> dict:
    """Run backward from a scalar loss and return gradients for named tensors.

    ``wrt`` maps names to tensors (parameters or inputs).  Requesting a
    tensor the loss does not depend on raises, since no gradient was recorded
    for it on the tape.
    """
    for t in wrt.values():
        t.grad = None
    loss.backward()
    out = {}
    for name, t in wrt.items():
        if t.grad is None:
            raise KeyError(f"no gradient recorded for {name!r}; not on the tape")
        out[name] = t.grad.copy()
    return out
