# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: depthwise convolution and separable resize.

Single-threaded by design (determinism; the sanctioned parallelism in
this codebase is a data-parallel map over images).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def dwconv_fwd(real[:, :, ::1] x, real[:, :, ::1] k):
    """Per-channel same-padded 2-D correlation; zero padding."""
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t kh = k.shape[1], kw = k.shape[2]
    cdef Py_ssize_t rh = kh // 2, rw = kw // 2
    cdef Py_ssize_t c, h, w, i, j, hh, ww
    cdef real acc
    cdef real k00, k01, k02, k10, k11, k12, k20, k21, k22
    out_np = np.empty((C, H, W), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] out = out_np
    cdef bint fast3 = (kh == 3 and kw == 3 and H >= 3 and W >= 3)
    for c in range(C):
        if fast3:
            k00 = k[c, 0, 0]; k01 = k[c, 0, 1]; k02 = k[c, 0, 2]
            k10 = k[c, 1, 0]; k11 = k[c, 1, 1]; k12 = k[c, 1, 2]
            k20 = k[c, 2, 0]; k21 = k[c, 2, 1]; k22 = k[c, 2, 2]
            for h in range(1, H - 1):
                for w in range(1, W - 1):
                    out[c, h, w] = (
                        k00 * x[c, h - 1, w - 1] + k01 * x[c, h - 1, w] + k02 * x[c, h - 1, w + 1]
                        + k10 * x[c, h, w - 1] + k11 * x[c, h, w] + k12 * x[c, h, w + 1]
                        + k20 * x[c, h + 1, w - 1] + k21 * x[c, h + 1, w] + k22 * x[c, h + 1, w + 1])
            _dw_border(x, k, out, c, rh, rw)
        else:
            for h in range(H):
                for w in range(W):
                    acc = 0
                    for i in range(kh):
                        hh = h + i - rh
                        if 0 <= hh < H:
                            for j in range(kw):
                                ww = w + j - rw
                                if 0 <= ww < W:
                                    acc += k[c, i, j] * x[c, hh, ww]
                    out[c, h, w] = acc
    return out_np


cdef void _dw_border(real[:, :, ::1] x, real[:, :, ::1] k,
                     real[:, :, ::1] out, Py_ssize_t c,
                     Py_ssize_t rh, Py_ssize_t rw) noexcept:
    cdef Py_ssize_t H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t kh = k.shape[1], kw = k.shape[2]
    cdef Py_ssize_t h, w, i, j, hh, ww
    cdef real acc
    for h in range(H):
        if 0 < h < H - 1:
            # interior rows: only the two edge columns remain
            for w in (0, W - 1):
                acc = 0
                for i in range(kh):
                    hh = h + i - rh
                    if 0 <= hh < H:
                        for j in range(kw):
                            ww = w + j - rw
                            if 0 <= ww < W:
                                acc += k[c, i, j] * x[c, hh, ww]
                out[c, h, w] = acc
        else:
            for w in range(W):
                acc = 0
                for i in range(kh):
                    hh = h + i - rh
                    if 0 <= hh < H:
                        for j in range(kw):
                            ww = w + j - rw
                            if 0 <= ww < W:
                                acc += k[c, i, j] * x[c, hh, ww]
                out[c, h, w] = acc


def dwconv_kgrad(real[:, :, ::1] x, real[:, :, ::1] g, Py_ssize_t kh, Py_ssize_t kw):
    """Kernel gradient: out[c,i,j] = sum_{h,w} xpad[c,h+i,w+j] * g[c,h,w]."""
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t rh = kh // 2, rw = kw // 2
    cdef Py_ssize_t c, h, w, i, j, hh, ww
    cdef double acc
    out_np = np.empty((C, kh, kw), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] out = out_np
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                acc = 0
                for h in range(H):
                    hh = h + i - rh
                    if 0 <= hh < H:
                        for w in range(W):
                            ww = w + j - rw
                            if 0 <= ww < W:
                                acc += x[c, hh, ww] * g[c, h, w]
                out[c, i, j] = <real> acc
    return out_np


def resize_gather_h(real[:, :, ::1] x, cnp.int64_t[:, ::1] idx, real[:, ::1] wts):
    """Separable resize pass along axis 1 of (C, H, W)."""
    cdef Py_ssize_t C = x.shape[0], W = x.shape[2]
    cdef Py_ssize_t OH = idx.shape[0], T = idx.shape[1]
    cdef Py_ssize_t c, o, t, w
    cdef real acc
    out_np = np.empty((C, OH, W), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] out = out_np
    for c in range(C):
        for o in range(OH):
            for w in range(W):
                out[c, o, w] = 0
            for t in range(T):
                for w in range(W):
                    out[c, o, w] += wts[o, t] * x[c, idx[o, t], w]
    return out_np


def resize_gather_w(real[:, :, ::1] x, cnp.int64_t[:, ::1] idx, real[:, ::1] wts):
    """Separable resize pass along axis 2 of (C, H, W)."""
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1]
    cdef Py_ssize_t OW = idx.shape[0], T = idx.shape[1]
    cdef Py_ssize_t c, h, o, t
    cdef real acc
    out_np = np.empty((C, H, OW), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] out = out_np
    for c in range(C):
        for h in range(H):
            for o in range(OW):
                acc = 0
                for t in range(T):
                    acc += wts[o, t] * x[c, h, idx[o, t]]
                out[c, h, o] = acc
    return out_np


def resize_scatter_h(real[:, :, ::1] g, cnp.int64_t[:, ::1] idx, real[:, ::1] wts,
                     Py_ssize_t in_h):
    """Adjoint of resize_gather_h."""
    cdef Py_ssize_t C = g.shape[0], OH = g.shape[1], W = g.shape[2]
    cdef Py_ssize_t T = idx.shape[1]
    cdef Py_ssize_t c, o, t, w, src
    out_np = np.zeros((C, in_h, W), dtype=np.asarray(g).dtype)
    cdef real[:, :, ::1] out = out_np
    for c in range(C):
        for o in range(OH):
            for t in range(T):
                src = idx[o, t]
                for w in range(W):
                    out[c, src, w] += wts[o, t] * g[c, o, w]
    return out_np


def resize_scatter_w(real[:, :, ::1] g, cnp.int64_t[:, ::1] idx, real[:, ::1] wts,
                     Py_ssize_t in_w):
    """Adjoint of resize_gather_w."""
    cdef Py_ssize_t C = g.shape[0], H = g.shape[1], OW = g.shape[2]
    cdef Py_ssize_t T = idx.shape[1]
    cdef Py_ssize_t c, h, o, t
    out_np = np.zeros((C, H, in_w), dtype=np.asarray(g).dtype)
    cdef real[:, :, ::1] out = out_np
    for c in range(C):
        for h in range(H):
            for o in range(OW):
                for t in range(T):
                    out[c, h, idx[o, t]] += wts[o, t] * g[c, h, o]
    return out_np
