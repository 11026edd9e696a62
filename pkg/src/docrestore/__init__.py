"""Restoration toolkit for multi-degraded colored document images."""

import os

# Honor the thread-count override before numpy initializes its BLAS pools.
_threads = os.environ.get("DOCRESTORE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from . import ops  # noqa: E402  (attaches Tensor operator sugar)
from .tensor import (Tape, Tensor, backward, finite_diff_grad,  # noqa: E402
                     no_grad)

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "finite_diff_grad", "no_grad", "ops"]
