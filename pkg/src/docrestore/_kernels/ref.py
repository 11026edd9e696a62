"""Pure numpy reference kernels.

These are the fallback implementations of the hot inner loops; the
compiled extension in ``_core`` matches them bit-for-bit in float64 and
to rounding in float32.  Channel chunking keeps peak temporary memory
bounded on large inputs.
"""

import numpy as np

# cap on the padded-copy temporary used by the conv fallback
_CHUNK_BYTES = 64 * 1024 * 1024


def _channel_chunk(h, w, itemsize):
    per_channel = (h + 2) * (w + 2) * itemsize
    return max(1, _CHUNK_BYTES // max(per_channel, 1))


def dwconv_fwd(x, k):
    """Per-channel same-padded 2-D correlation.

    x: (C, H, W), k: (C, kh, kw) with odd kh, kw.  Zero padding.
    """
    c, h, w = x.shape
    kh, kw = k.shape[1], k.shape[2]
    rh, rw = kh // 2, kw // 2
    out = np.empty_like(x)
    step = _channel_chunk(h, w, x.itemsize)
    for c0 in range(0, c, step):
        c1 = min(c0 + step, c)
        xp = np.pad(x[c0:c1], ((0, 0), (rh, rh), (rw, rw)))
        acc = np.zeros((c1 - c0, h, w), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                acc += k[c0:c1, i, j][:, None, None] * xp[:, i:i + h, j:j + w]
        out[c0:c1] = acc
    return out


def dwconv_kgrad(x, g, kh, kw):
    """Kernel gradient of dwconv_fwd.

    out[c,i,j] = sum_{h,w} xpad[c, h+i, w+j] * g[c, h, w]
    """
    c, h, w = x.shape
    rh, rw = kh // 2, kw // 2
    out = np.empty((c, kh, kw), dtype=x.dtype)
    step = _channel_chunk(h, w, x.itemsize)
    for c0 in range(0, c, step):
        c1 = min(c0 + step, c)
        xp = np.pad(x[c0:c1], ((0, 0), (rh, rh), (rw, rw)))
        gs = g[c0:c1]
        for i in range(kh):
            for j in range(kw):
                out[c0:c1, i, j] = np.einsum(
                    "chw,chw->c", xp[:, i:i + h, j:j + w], gs)
    return out


def resize_gather_h(x, idx, wts):
    """Separable resize pass along axis 1 of (C, H, W).

    idx: (out_h, taps) int64 source rows, wts: (out_h, taps) weights.
    """
    taps = idx.shape[1]
    out = wts[None, :, 0, None] * x[:, idx[:, 0], :]
    for t in range(1, taps):
        out += wts[None, :, t, None] * x[:, idx[:, t], :]
    return out


def resize_gather_w(x, idx, wts):
    """Separable resize pass along axis 2 of (C, H, W)."""
    taps = idx.shape[1]
    out = wts[None, None, :, 0] * x[:, :, idx[:, 0]]
    for t in range(1, taps):
        out += wts[None, None, :, t] * x[:, :, idx[:, t]]
    return out


def resize_scatter_h(g, idx, wts, in_h):
    """Adjoint of resize_gather_h: scatter (C, out_h, W) back onto in_h rows."""
    c, _, w = g.shape
    out = np.zeros((in_h, c, w), dtype=g.dtype)
    gt = np.ascontiguousarray(g.transpose(1, 0, 2))
    for t in range(idx.shape[1]):
        np.add.at(out, idx[:, t], wts[:, t][:, None, None] * gt)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def resize_scatter_w(g, idx, wts, in_w):
    """Adjoint of resize_gather_w."""
    c, h, _ = g.shape
    out = np.zeros((in_w, c, h), dtype=g.dtype)
    gt = np.ascontiguousarray(g.transpose(2, 0, 1))
    for t in range(idx.shape[1]):
        np.add.at(out, idx[:, t], wts[:, t][:, None, None] * gt)
    return np.ascontiguousarray(out.transpose(1, 2, 0))
