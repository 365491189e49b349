"""Compiled hot loops for convolution.

The forward kernel accumulates each output element in (c_in, kh, kw) order,
left to right, exactly like a naive nested-loop convolution; the innermost
loop runs over output columns so independent accumulator chains vectorize.
Do not reorder the arithmetic: tests compare against a reference loop
bit-for-bit.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def conv2d_forward_kernel(xp, w, b, out, stride):
    n = xp.shape[0]
    co, ci, kh, kw = w.shape
    oh = out.shape[2]
    ow = out.shape[3]
    for ni in prange(n):
        for c in range(co):
            for y in range(oh):
                yb = y * stride
                for xx in range(ow):
                    out[ni, c, y, xx] = 0.0
                for i in range(ci):
                    for p in range(kh):
                        for q in range(kw):
                            wv = w[c, i, p, q]
                            if stride == 1:
                                for xx in range(ow):
                                    out[ni, c, y, xx] += wv * xp[ni, i, yb + p, xx + q]
                            else:
                                for xx in range(ow):
                                    out[ni, c, y, xx] += wv * xp[ni, i, yb + p, xx * stride + q]
                for xx in range(ow):
                    out[ni, c, y, xx] += b[c]


@njit(parallel=True, cache=True)
def conv2d_input_grad_kernel(dxp, w, og, stride):
    n = og.shape[0]
    co, ci, kh, kw = w.shape
    oh = og.shape[2]
    ow = og.shape[3]
    for ni in prange(n):
        for c in range(co):
            for y in range(oh):
                yb = y * stride
                for i in range(ci):
                    for p in range(kh):
                        for q in range(kw):
                            wv = w[c, i, p, q]
                            if stride == 1:
                                for xx in range(ow):
                                    dxp[ni, i, yb + p, xx + q] += wv * og[ni, c, y, xx]
                            else:
                                for xx in range(ow):
                                    dxp[ni, i, yb + p, xx * stride + q] += wv * og[ni, c, y, xx]
