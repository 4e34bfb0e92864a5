"""Reverse-mode autodiff over dense numpy arrays.

Define-by-run: each op records a backward closure on its output, and
``Tensor.backward()`` replays them in reverse topological order.  Storage is
float32 by default; the ``precision("float64")`` context switches newly
created tensors to float64 for verification work such as gradient checks.
Gradients w.r.t. inputs are first-class: mark any input tensor with
``requires_grad=True`` and read ``.grad`` after backward.

A tensor graph is single-owner during forward/backward.  Constants (tensors
with ``requires_grad=False`` and no parents) may be shared freely.
"""

from contextlib import contextmanager

import numpy as np

from .. import accel


class NumericError(RuntimeError):
    """Raised when a non-finite value appears in a computation."""


_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = True


def current_dtype():
    return _DTYPE


@contextmanager
def precision(name: str):
    """Temporarily switch the storage dtype for newly created tensors."""
    global _DTYPE
    if name not in ("float32", "float64"):
        raise ValueError(f"precision must be float32 or float64, got {name!r}")
    prev = _DTYPE
    _DTYPE = np.float32 if name == "float32" else np.float64
    try:
        yield
    finally:
        _DTYPE = prev


@contextmanager
def no_grad():
    """Disable graph recording; forwards run on raw arrays only."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def finite_checks(enabled: bool):
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in tensor {name or '<input>'}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # operator sugar; scalars and ndarrays are lifted to constant tensors

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _make(data, parents, backward, name):
    """Wrap an op result, recording the tape edge when grads are enabled."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{name}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = name
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _acc(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd():
        _acc(a, _unbroadcast(out.grad, a.data.shape))
        _acc(b, _unbroadcast(out.grad, b.data.shape))

    out = _make(out_data, (a, b), bwd, "add")
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd():
        _acc(a, _unbroadcast(out.grad, a.data.shape))
        _acc(b, _unbroadcast(-out.grad, b.data.shape))

    out = _make(out_data, (a, b), bwd, "sub")
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd():
        _acc(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _acc(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out = _make(out_data, (a, b), bwd, "mul")
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def bwd():
        _acc(a, _unbroadcast(out.grad / b.data, a.data.shape))
        _acc(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out = _make(out_data, (a, b), bwd, "div")
    return out


def tsum(t: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = t.data.sum(axis=axis, keepdims=keepdims)

    def bwd():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(t, np.broadcast_to(g, t.data.shape).copy())

    out = _make(np.asarray(out_data), (t,), bwd, "sum")
    return out


def tmean(t: Tensor, axis=None, keepdims=False) -> Tensor:
    n = t.data.size if axis is None else t.data.shape[axis]
    return tsum(t, axis=axis, keepdims=keepdims) * (1.0 / n)


def tabs(t: Tensor) -> Tensor:
    out_data = np.abs(t.data)

    def bwd():
        _acc(t, out.grad * np.sign(t.data))

    out = _make(out_data, (t,), bwd, "abs")
    return out


def exp(t: Tensor) -> Tensor:
    out_data = np.exp(t.data)

    def bwd():
        _acc(t, out.grad * out.data)

    out = _make(out_data, (t,), bwd, "exp")
    return out


def log(t: Tensor) -> Tensor:
    out_data = np.log(t.data)

    def bwd():
        _acc(t, out.grad / t.data)

    out = _make(out_data, (t,), bwd, "log")
    return out


def sqrt(t: Tensor) -> Tensor:
    out_data = np.sqrt(t.data)

    def bwd():
        _acc(t, out.grad / (2.0 * out.data))

    out = _make(out_data, (t,), bwd, "sqrt")
    return out


def tanh(t: Tensor) -> Tensor:
    out_data = np.tanh(t.data)

    def bwd():
        _acc(t, out.grad * (1.0 - out.data * out.data))

    out = _make(out_data, (t,), bwd, "tanh")
    return out


def sigmoid(t: Tensor) -> Tensor:
    z = t.data
    out_data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def bwd():
        _acc(t, out.grad * out.data * (1.0 - out.data))

    out = _make(out_data.astype(z.dtype), (t,), bwd, "sigmoid")
    return out


def leaky_relu(t: Tensor, slope: float = 0.1) -> Tensor:
    mask = t.data > 0
    out_data = np.where(mask, t.data, slope * t.data)

    def bwd():
        _acc(t, out.grad * np.where(mask, 1.0, slope).astype(t.data.dtype))

    out = _make(out_data.astype(t.data.dtype), (t,), bwd, "leaky_relu")
    return out


def relu(t: Tensor) -> Tensor:
    return leaky_relu(t, slope=0.0)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(t.data, lo, hi)

    def bwd():
        inside = (t.data >= lo) & (t.data <= hi)
        _acc(t, out.grad * inside.astype(t.data.dtype))

    out = _make(out_data, (t,), bwd, "clip")
    return out


# ---------------------------------------------------------------------------
# shape and linear-algebra ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def bwd():
        _acc(a, out.grad @ b.data.T)
        _acc(b, a.data.T @ out.grad)

    out = _make(out_data, (a, b), bwd, "matmul")
    return out


def transpose(t: Tensor) -> Tensor:
    if t.data.ndim != 2:
        raise ValueError("transpose expects a 2D tensor")
    out_data = t.data.T.copy()

    def bwd():
        _acc(t, out.grad.T)

    out = _make(out_data, (t,), bwd, "transpose")
    return out


def reshape(t: Tensor, shape) -> Tensor:
    out_data = t.data.reshape(shape)

    def bwd():
        _acc(t, out.grad.reshape(t.data.shape))

    out = _make(out_data, (t,), bwd, "reshape")
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd():
        offset = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(offset, offset + size)
            _acc(t, out.grad[tuple(sl)])
            offset += size

    out = _make(out_data, tuple(tensors), bwd, "concat")
    return out


def slice_rows(t: Tensor, start: int, stop: int) -> Tensor:
    out_data = t.data[start:stop].copy()

    def bwd():
        g = np.zeros_like(t.data)
        g[start:stop] = out.grad
        _acc(t, g)

    out = _make(out_data, (t,), bwd, "slice_rows")
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two 1D tensors."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError("dot expects 1D tensors")
    return tsum(mul(a, b))


def l1_norm(t: Tensor) -> Tensor:
    return tsum(tabs(t))


def l2_norm(t: Tensor) -> Tensor:
    return sqrt(tsum(mul(t, t)))


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, NCHW layout, zero padding, stride 1 or 2."""
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects x (N,C,H,W) and w (Cout,Cin,kh,kw)")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.data.shape[1]}, kernel wants {w.data.shape[1]}"
        )
    out_data = accel.conv2d_forward(x.data, w.data, b.data, stride, padding)

    def bwd():
        gx, gw, gb = accel.conv2d_backward(x.data, w.data, stride, padding, out.grad)
        _acc(x, gx)
        _acc(w, gw)
        _acc(b, gb)

    out = _make(out_data, (x, w, b), bwd, "conv2d")
    return out


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling over an (N, C, H, W) tensor."""
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ValueError(f"pool size {k} does not divide spatial dims {h}x{w}")
    r = x.data.reshape(n, c, h // k, k, w // k, k)
    out_data = r.mean(axis=(3, 5))

    def bwd():
        g = out.grad[:, :, :, None, :, None] / (k * k)
        _acc(x, np.broadcast_to(g, (n, c, h // k, k, w // k, k)).reshape(x.data.shape).copy())

    out = _make(out_data, (x,), bwd, "avg_pool2d")
    return out
