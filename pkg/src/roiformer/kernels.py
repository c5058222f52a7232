"""Hot numeric kernels: batched 1-D cross-correlation, forward and backward.

Inputs are already padded by the caller; everything here works on
``x: (N, C_in, L_pad)`` against ``w: (C_out, C_in, K)`` with a positive
stride, producing ``(N, C_out, L_out)`` where ``L_out = (L_pad - K)//stride + 1``.

Two implementations of each kernel exist (``*_np`` and ``*_nb``); the module
level names ``conv1d_forward`` / ``conv1d_backward`` point at the variant
chosen by :mod:`roiformer.backend`.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import backend


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (N, C_in, L_out, K) view, no copy
    return sliding_window_view(x, k, axis=2)[:, :, ::stride, :]


def conv1d_forward_np(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    win = _windows(x, w.shape[2], stride)
    return np.einsum("nilk,oik->nol", win, w, optimize=True)


def conv1d_backward_np(dout: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int):
    """Gradients w.r.t. the padded input and the kernels."""
    n_out = dout.shape[2]
    k = w.shape[2]
    win = _windows(x, k, stride)
    dw = np.einsum("nos,nisk->oik", dout, win, optimize=True)
    dx = np.zeros_like(x)
    # scatter-add one kernel tap at a time; K is small
    for tap in range(k):
        contrib = np.einsum("nos,oi->nis", dout, w[:, :, tap], optimize=True)
        dx[:, :, tap : tap + stride * n_out : stride] += contrib
    return dx, dw


if backend.NUMBA_AVAILABLE:
    from numba import njit

    # the output position loop sits innermost over contiguous rows so LLVM
    # can vectorize it; stride 1 (the model's only case) avoids the strided
    # indexing that would block that
    @njit(cache=True)
    def conv1d_forward_nb(x, w, stride):  # pragma: no cover - jit
        n, c_in, l_pad = x.shape
        c_out, _, k = w.shape
        l_out = (l_pad - k) // stride + 1
        out = np.zeros((n, c_out, l_out))
        for b in range(n):
            for o in range(c_out):
                out_row = out[b, o]
                for i in range(c_in):
                    x_row = x[b, i]
                    for t in range(k):
                        wv = w[o, i, t]
                        if stride == 1:
                            for s in range(l_out):
                                out_row[s] += wv * x_row[s + t]
                        else:
                            for s in range(l_out):
                                out_row[s] += wv * x_row[s * stride + t]
        return out

    @njit(cache=True)
    def conv1d_backward_nb(dout, x, w, stride):  # pragma: no cover - jit
        n, c_in, l_pad = x.shape
        c_out, _, k = w.shape
        l_out = dout.shape[2]
        dx = np.zeros_like(x)
        dw = np.zeros_like(w)
        for b in range(n):
            for o in range(c_out):
                g_row = dout[b, o]
                for i in range(c_in):
                    x_row = x[b, i]
                    dx_row = dx[b, i]
                    for t in range(k):
                        wv = w[o, i, t]
                        acc = 0.0
                        if stride == 1:
                            for s in range(l_out):
                                dx_row[s + t] += g_row[s] * wv
                                acc += g_row[s] * x_row[s + t]
                        else:
                            for s in range(l_out):
                                dx_row[s * stride + t] += g_row[s] * wv
                                acc += g_row[s] * x_row[s * stride + t]
                        dw[o, i, t] += acc
        return dx, dw

else:  # pragma: no cover - depends on environment
    conv1d_forward_nb = None
    conv1d_backward_nb = None


if backend.USE_NUMBA:
    conv1d_forward = conv1d_forward_nb
    conv1d_backward = conv1d_backward_nb
else:  # pragma: no cover - exercised via ROIFORMER_NO_NUMBA runs
    conv1d_forward = conv1d_forward_np
    conv1d_backward = conv1d_backward_np
