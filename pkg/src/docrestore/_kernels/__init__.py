"""Kernel backend selection.

Imports the compiled extension when available, otherwise falls back to
the pure numpy reference implementations.  ``DOCRESTORE_PURE=1`` forces
the fallback.  All entry points accept C-contiguous float32/float64
arrays; wrappers coerce layout so callers don't have to.
"""

import os

import numpy as np

from . import ref

if os.environ.get("DOCRESTORE_PURE") == "1":
    _core = None
else:
    try:
        from . import _core
    except ImportError:
        _core = None

HAVE_EXT = _core is not None
BACKEND = "compiled" if HAVE_EXT else "numpy"


def _c3(a):
    return np.ascontiguousarray(a)


def dwconv_fwd(x, k):
    if HAVE_EXT:
        return _core.dwconv_fwd(_c3(x), _c3(k.astype(x.dtype, copy=False)))
    return ref.dwconv_fwd(x, k)


def dwconv_kgrad(x, g, kh, kw):
    if HAVE_EXT:
        return _core.dwconv_kgrad(_c3(x), _c3(g.astype(x.dtype, copy=False)), kh, kw)
    return ref.dwconv_kgrad(x, g, kh, kw)


def resize_gather_h(x, idx, wts):
    if HAVE_EXT:
        return _core.resize_gather_h(_c3(x), idx, wts.astype(x.dtype, copy=False))
    return ref.resize_gather_h(x, idx, wts.astype(x.dtype, copy=False))


def resize_gather_w(x, idx, wts):
    if HAVE_EXT:
        return _core.resize_gather_w(_c3(x), idx, wts.astype(x.dtype, copy=False))
    return ref.resize_gather_w(x, idx, wts.astype(x.dtype, copy=False))


def resize_scatter_h(g, idx, wts, in_h):
    if HAVE_EXT:
        return _core.resize_scatter_h(_c3(g), idx, wts.astype(g.dtype, copy=False), in_h)
    return ref.resize_scatter_h(g, idx, wts.astype(g.dtype, copy=False), in_h)


def resize_scatter_w(g, idx, wts, in_w):
    if HAVE_EXT:
        return _core.resize_scatter_w(_c3(g), idx, wts.astype(g.dtype, copy=False), in_w)
    return ref.resize_scatter_w(g, idx, wts.astype(g.dtype, copy=False), in_w)
