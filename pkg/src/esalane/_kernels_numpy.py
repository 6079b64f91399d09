"""Pure-numpy convolution kernels (fallback backend).

Forward uses a strided window view contracted with BLAS; the input gradient
is reconstructed with 9 (kh*kw) vectorized scatter-adds instead of a full
col2im buffer.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _window_view(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, b, stride, pad):
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _window_view(xp, kh, kw, stride)
    # (N,Ho,Wo,Cout) <- (N,Cin,Ho,Wo,kh,kw) x (Cout,Cin,kh,kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    out += b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward_input(g, w, height, width, stride, pad):
    n = g.shape[0]
    cout, cin, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    gxp = np.zeros((n, cin, height + 2 * pad, width + 2 * pad))
    # t[n,ho,wo,cin,i,j] = sum_o g[n,o,ho,wo] * w[o,cin,i,j]
    t = np.tensordot(g, w, axes=([1], [0]))
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += (
                t[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, :, pad:pad + height, pad:pad + width])


def conv2d_backward_weight(g, x, kh, kw, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _window_view(xp, kh, kw, stride)
    # (Cout,Cin,kh,kw) <- (N,Cout,Ho,Wo) x (N,Cin,Ho,Wo,kh,kw)
    gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = g.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gw), gb
