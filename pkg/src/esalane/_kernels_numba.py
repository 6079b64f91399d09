"""Numba-compiled convolution kernels (default backend).

Each parallel loop owns a disjoint output slice (per n*c or per output
channel), so results are bit-deterministic run to run.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

NAME = "numba"


@njit(cache=True, parallel=True)
def conv2d_forward(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.empty((n, cout, ho, wo))
    for idx in prange(n * cout):
        ni = idx // cout
        o = idx % cout
        for oh in range(ho):
            ih0 = oh * stride - pad
            for ow in range(wo):
                iw0 = ow * stride - pad
                acc = b[o]
                for c in range(cin):
                    for i in range(kh):
                        ih = ih0 + i
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(kw):
                            iw = iw0 + j
                            if 0 <= iw < wd:
                                acc += x[ni, c, ih, iw] * w[o, c, i, j]
                out[ni, o, oh, ow] = acc
    return out


@njit(cache=True, parallel=True)
def conv2d_backward_input(g, w, height, width, stride, pad):
    n, cout, ho, wo = g.shape
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gx = np.zeros((n, cin, height, width))
    for idx in prange(n * cin):
        ni = idx // cin
        c = idx % cin
        for o in range(cout):
            for oh in range(ho):
                ih0 = oh * stride - pad
                for ow in range(wo):
                    iw0 = ow * stride - pad
                    gg = g[ni, o, oh, ow]
                    for i in range(kh):
                        ih = ih0 + i
                        if ih < 0 or ih >= height:
                            continue
                        for j in range(kw):
                            iw = iw0 + j
                            if 0 <= iw < width:
                                gx[ni, c, ih, iw] += gg * w[o, c, i, j]
    return gx


@njit(cache=True, parallel=True)
def conv2d_backward_weight(g, x, kh, kw, stride, pad):
    n, cout, ho, wo = g.shape
    cin, h, wd = x.shape[1], x.shape[2], x.shape[3]
    gw = np.zeros((cout, cin, kh, kw))
    gb = np.zeros(cout)
    for o in prange(cout):
        for ni in range(n):
            for oh in range(ho):
                ih0 = oh * stride - pad
                for ow in range(wo):
                    iw0 = ow * stride - pad
                    gg = g[ni, o, oh, ow]
                    gb[o] += gg
                    for c in range(cin):
                        for i in range(kh):
                            ih = ih0 + i
                            if ih < 0 or ih >= h:
                                continue
                            for j in range(kw):
                                iw = iw0 + j
                                if 0 <= iw < wd:
                                    gw[o, c, i, j] += gg * x[ni, c, ih, iw]
    return gw, gb
