"""Convolution hot paths: numba-jitted kernels with a pure-numpy fallback.

The backend is chosen once at import time:

* ``ARIM_BACKEND=numpy``  forces the pure-numpy implementation;
* ``ARIM_BACKEND=numba``  requires numba and fails loudly if it is missing;
* unset: numba when importable, numpy otherwise.

``ARIM_THREADS`` caps the numba thread count.  Both backends implement the
same contract: stride-1 cross-correlation with circular padding along the
width axis and zero padding along the height axis, both "same"-sized.
Layouts are (H, W, C) inputs and (k, k, C_in, C_out) kernels, float64.

benchmarks/bench_kernels.py compares the two backends on realistic shapes.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_grad_kernels",
    "numpy_conv2d_forward",
    "numpy_conv2d_grad_kernels",
    "numba_conv2d_forward",
    "numba_conv2d_grad_kernels",
]


def _padded(inp: np.ndarray, p: int) -> np.ndarray:
    # zero rows top/bottom, circular columns left/right (p may exceed the width)
    out = np.pad(inp, ((p, p), (0, 0), (0, 0)))
    if p:
        w = inp.shape[1]
        cols = np.arange(-p, w + p) % w
        out = out[:, cols]
    return out


def numpy_conv2d_forward(inp: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    k = kernels.shape[0]
    p = k // 2
    win = np.lib.stride_tricks.sliding_window_view(_padded(inp, p), (k, k), axis=(0, 1))
    # win: (H, W, C, k, k); kernels: (k, k, C, O)
    out = np.tensordot(win, kernels, axes=([3, 4, 2], [0, 1, 2]))
    out += bias
    return out


def numpy_conv2d_grad_kernels(inp: np.ndarray, grad_out: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    win = np.lib.stride_tricks.sliding_window_view(_padded(inp, p), (k, k), axis=(0, 1))
    # sum over (H, W): (H,W,C,k,k) x (H,W,O) -> (C,k,k,O) -> (k,k,C,O)
    gk = np.tensordot(win, grad_out, axes=([0, 1], [0, 1]))
    return np.ascontiguousarray(gk.transpose(1, 2, 0, 3))


_HAVE_NUMBA = False
_requested = os.environ.get("ARIM_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ConfigError(f"ARIM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested != "numpy":
    try:
        import numba
        from numba import njit, prange

        _threads = os.environ.get("ARIM_THREADS", "").strip()
        if _threads:
            numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
        _HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise ConfigError("ARIM_BACKEND=numba but numba is not importable")

if _HAVE_NUMBA:

    @njit(cache=True, parallel=True, fastmath=True)
    def numba_conv2d_forward(inp, kernels, bias):  # pragma: no cover - jitted
        H, W, C = inp.shape
        k = kernels.shape[0]
        O = kernels.shape[3]
        p = k // 2
        out = np.empty((H, W, O))
        wide = W >= k  # single +-W wrap is enough on the hot path
        for idx in prange(H * W):
            i = idx // W
            j = idx % W
            for o in range(O):
                out[i, j, o] = bias[o]
            for di in range(k):
                r = i + di - p
                if r < 0 or r >= H:
                    continue
                for dj in range(k):
                    if wide:
                        s = j + dj - p
                        if s < 0:
                            s += W
                        elif s >= W:
                            s -= W
                    else:
                        s = (j + dj - p) % W
                    for c in range(C):
                        v = inp[r, s, c]
                        for o in range(O):
                            out[i, j, o] += v * kernels[di, dj, c, o]
        return out

    @njit(cache=True, parallel=True, fastmath=True)
    def numba_conv2d_grad_kernels(inp, grad_out, k):  # pragma: no cover - jitted
        H, W, C = inp.shape
        O = grad_out.shape[2]
        p = k // 2
        gk = np.zeros((k, k, C, O))
        wide = W >= k
        for tap in prange(k * k):
            di = tap // k
            dj = tap % k
            for i in range(H):
                r = i + di - p
                if r < 0 or r >= H:
                    continue
                for j in range(W):
                    if wide:
                        s = j + dj - p
                        if s < 0:
                            s += W
                        elif s >= W:
                            s -= W
                    else:
                        s = (j + dj - p) % W
                    for c in range(C):
                        v = inp[r, s, c]
                        for o in range(O):
                            gk[di, dj, c, o] += v * grad_out[i, j, o]
        return gk

    def _numba_forward(inp, kernels, bias):
        return numba_conv2d_forward(
            np.ascontiguousarray(inp), np.ascontiguousarray(kernels), np.ascontiguousarray(bias)
        )

    def _numba_grad_kernels(inp, grad_out, k):
        return numba_conv2d_grad_kernels(
            np.ascontiguousarray(inp), np.ascontiguousarray(grad_out), k
        )

else:
    numba_conv2d_forward = None
    numba_conv2d_grad_kernels = None

if _HAVE_NUMBA:
    BACKEND = "numba"
    conv2d_forward = _numba_forward
    conv2d_grad_kernels = _numba_grad_kernels
else:
    BACKEND = "numpy"

    def conv2d_forward(inp, kernels, bias):
        return numpy_conv2d_forward(inp, kernels, bias)

    def conv2d_grad_kernels(inp, grad_out, k):
        return numpy_conv2d_grad_kernels(inp, grad_out, k)
