# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled depthwise temporal convolution kernels.

For each (sample, channel) the (T, V) plane is contiguous, so a temporal
shift by ``s`` frames is a shift by ``s * V`` in the flat index. Each tap is
then one contiguous multiply-add over the overlapping range, accumulated in
float64. Mirrors ``_kernels_py`` exactly in contract.
"""
import numpy as np

ctypedef fused real:
    float
    double


def depthwise_forward(real[:, :, :, ::1] x, real[:, ::1] w, real[::1] b):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], T = x.shape[2], V = x.shape[3]
    cdef Py_ssize_t K = w.shape[1], pad = (K - 1) // 2, L = T * V
    cdef Py_ssize_t n, c, i, j, shift, lo, hi
    cdef double wj
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((N, C, T, V), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef double[::1] acc = np.empty(L, dtype=np.float64)
    cdef real* xr
    cdef real* orow
    with nogil:
        for n in range(N):
            for c in range(C):
                xr = &x[n, c, 0, 0]
                orow = &out[n, c, 0, 0]
                for i in range(L):
                    acc[i] = b[c]
                for j in range(K):
                    wj = w[c, j]
                    shift = (j - pad) * V  # out[i] reads x[i + shift]
                    lo = -shift if shift < 0 else 0
                    hi = L - shift if shift > 0 else L
                    for i in range(lo, hi):
                        acc[i] += wj * xr[i + shift]
                for i in range(L):
                    orow[i] = <real>acc[i]
    return out_arr


def depthwise_backward(real[:, :, :, ::1] x, real[:, ::1] w, real[:, :, :, ::1] d_out):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], T = x.shape[2], V = x.shape[3]
    cdef Py_ssize_t K = w.shape[1], pad = (K - 1) // 2, L = T * V
    cdef Py_ssize_t n, c, i, j, shift, lo, hi
    cdef double wj, s, g
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((N, C, T, V), dtype=dtype)
    dw_arr = np.empty((C, K), dtype=dtype)
    db_arr = np.empty(C, dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef real[:, ::1] dw = dw_arr
    cdef real[::1] db = db_arr
    cdef double[::1] dw_acc = np.zeros(K, dtype=np.float64)
    cdef double[::1] acc = np.empty(L, dtype=np.float64)
    cdef real* xr
    cdef real* gr
    cdef real* dxr
    with nogil:
        for c in range(C):
            for j in range(K):
                dw_acc[j] = 0.0
            g = 0.0
            for n in range(N):
                xr = &x[n, c, 0, 0]
                gr = &d_out[n, c, 0, 0]
                dxr = &dx[n, c, 0, 0]
                for i in range(L):
                    acc[i] = 0.0
                    g += gr[i]
                for j in range(K):
                    wj = w[c, j]
                    shift = (j - pad) * V  # out[i] used x[i + shift]
                    lo = -shift if shift < 0 else 0
                    hi = L - shift if shift > 0 else L
                    s = 0.0
                    for i in range(lo, hi):
                        acc[i + shift] += wj * gr[i]
                        s += <double>gr[i] * xr[i + shift]
                    dw_acc[j] += s
                for i in range(L):
                    dxr[i] = <real>acc[i]
            for j in range(K):
                dw[c, j] = <real>dw_acc[j]
            db[c] = <real>g
    return dx_arr, dw_arr, db_arr
