"""Hot numeric kernels with two interchangeable backends.

The 2D convolution forward/backward passes dominate training time, so they
are provided both as numba ``@njit`` kernels and as pure-numpy (im2col over
BLAS matmul) implementations.  The active backend is chosen once at import
time from the environment variable ``JITTERLAB_ACCEL``:

    auto    pick the backend that wins benchmarks/bench_kernels.py at this
            package's model shapes (currently numpy: BLAS dominates the
            small-spatial, many-channel layers; numba only wins the first
            32x32 block)
    numba   force the numba kernels, fail loudly if numba is missing
    numpy   force the pure-numpy path

Both backends are deterministic run-to-run.  They agree to float32 rounding
(relative ~1e-6), not bitwise, because their summation orders differ.
"""

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


def _resolve_backend() -> str:
    mode = os.environ.get("JITTERLAB_ACCEL", "auto").strip().lower()
    if mode not in ("auto", "numba", "numpy"):
        raise ValueError(f"JITTERLAB_ACCEL must be auto|numba|numpy, got {mode!r}")
    if mode == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("JITTERLAB_ACCEL=numba but numba is not importable")
    if mode == "auto":
        return "numpy"
    return mode


_BACKEND = _resolve_backend()


def current_backend() -> str:
    """Name of the backend selected at import time ('numba' or 'numpy')."""
    return _BACKEND


def _out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"convolution output would be empty for input {h}x{w}")
    return ho, wo


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


# ---------------------------------------------------------------------------
# numpy backend (im2col / col2im)
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    # (N, C, Ho, Wo, kh, kw) view, then a contiguous (N*Ho*Wo, C*kh*kw) copy
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(xp.shape[0] * ho * wo, -1)
    return np.ascontiguousarray(cols)


def conv2d_forward_numpy(x, w, b, stride, padding):
    n, _, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    ho, wo = _out_hw(h, wd, kh, kw, stride, padding)
    cols = _im2col(_pad(x, padding), kh, kw, stride, ho, wo)
    out = cols @ w.reshape(cout, cin * kh * kw).T
    out += b
    return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2).copy()


def conv2d_backward_numpy(x, w, stride, padding, gout):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = gout.shape[2], gout.shape[3]
    xp = _pad(x, padding)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    g2 = gout.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)

    gw = (g2.T @ cols).reshape(cout, cin, kh, kw)
    gb = gout.sum(axis=(0, 2, 3))

    gxp = np.zeros_like(xp)
    # scatter back one kernel offset at a time; each add is fully vectorized
    gblocks = g2 @ w.reshape(cout, -1)  # (N*Ho*Wo, C*kh*kw)
    gblocks = gblocks.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                gblocks[:, :, :, :, i, j]
            )
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return gxp, gw, gb


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _conv2d_fwd_nb(xp, w, b, stride, out):
        # kernel weight hoisted to a scalar; the inner x loop runs over
        # contiguous output rows so LLVM can vectorize it
        n, cout, ho, wo = out.shape
        cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
        for ni in range(n):
            for co in range(cout):
                for y in range(ho):
                    for x in range(wo):
                        out[ni, co, y, x] = b[co]
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[co, ci, i, j]
                            for y in range(ho):
                                yy = y * stride + i
                                for x in range(wo):
                                    out[ni, co, y, x] += (
                                        wv * xp[ni, ci, yy, x * stride + j]
                                    )

    @njit(cache=True)
    def _conv2d_bwd_nb(xp, w, stride, gout, gxp, gw, gb):
        n, cout, ho, wo = gout.shape
        cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
        for ni in range(n):
            for co in range(cout):
                for y in range(ho):
                    for x in range(wo):
                        gb[co] += gout[ni, co, y, x]
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[co, ci, i, j]
                            acc = 0.0
                            for y in range(ho):
                                yy = y * stride + i
                                for x in range(wo):
                                    g = gout[ni, co, y, x]
                                    acc += g * xp[ni, ci, yy, x * stride + j]
                                    gxp[ni, ci, yy, x * stride + j] += g * wv
                            gw[co, ci, i, j] += acc

    def conv2d_forward_numba(x, w, b, stride, padding):
        n, _, h, wd = x.shape
        cout, _, kh, kw = w.shape
        ho, wo = _out_hw(h, wd, kh, kw, stride, padding)
        xp = np.ascontiguousarray(_pad(x, padding))
        out = np.empty((n, cout, ho, wo), dtype=x.dtype)
        _conv2d_fwd_nb(xp, np.ascontiguousarray(w), np.ascontiguousarray(b), stride, out)
        return out

    def conv2d_backward_numba(x, w, stride, padding, gout):
        xp = np.ascontiguousarray(_pad(x, padding))
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        gb = np.zeros(w.shape[0], dtype=w.dtype)
        _conv2d_bwd_nb(
            xp, np.ascontiguousarray(w), stride, np.ascontiguousarray(gout), gxp, gw, gb
        )
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        return np.ascontiguousarray(gxp), gw, gb

else:  # pragma: no cover
    conv2d_forward_numba = None
    conv2d_backward_numba = None


if _BACKEND == "numba":
    conv2d_forward = conv2d_forward_numba
    conv2d_backward = conv2d_backward_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward = conv2d_backward_numpy
