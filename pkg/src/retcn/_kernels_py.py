"""Pure-numpy depthwise temporal convolution kernels (fallback backend).

Same contract as the compiled ``_kernels`` extension: ``x`` is (N, C, T, V),
``w`` is (C, K) with K odd, ``b`` is (C,); zero padding keeps T fixed.
"""
import numpy as np


def depthwise_forward(x, w, b):
    n, c, t, v = x.shape
    k = w.shape[1]
    pad = (k - 1) // 2
    xp = np.zeros((n, c, t + 2 * pad, v), dtype=x.dtype)
    xp[:, :, pad:pad + t] = x
    out = np.empty_like(x)
    out[...] = b[None, :, None, None]
    for j in range(k):
        out += w[None, :, j, None, None] * xp[:, :, j:j + t]
    return out


def depthwise_backward(x, w, d_out):
    n, c, t, v = x.shape
    k = w.shape[1]
    pad = (k - 1) // 2
    xp = np.zeros((n, c, t + 2 * pad, v), dtype=x.dtype)
    xp[:, :, pad:pad + t] = x
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for j in range(k):
        dw[:, j] = np.einsum("nctv,nctv->c", d_out, xp[:, :, j:j + t])
        dxp[:, :, j:j + t] += w[None, :, j, None, None] * d_out
    db = d_out.sum(axis=(0, 2, 3))
    return dxp[:, :, pad:pad + t].copy(), dw, db.astype(w.dtype, copy=False)
