"""Dense tensors with a reverse-mode gradient tape.

A :class:`Tensor` wraps a row-major numpy array (float32 by default,
float64 for gradient verification).  Differentiable operations executed
while a :class:`Tape` is active append records in execution order;
:func:`backward` replays them in exact reverse order and accumulates
gradients into the participating leaf tensors.

Tensors are treated as immutable once created.  Every operation checks
its output for NaN/Inf and raises :class:`NonFiniteError` on violation.
"""

from __future__ import annotations

import contextlib
import os
import threading

import numpy as np

DEFAULT_DTYPE = np.float32

# Finite checks cost two reductions per op; disable for raw speed runs.
FINITE_CHECKS = os.environ.get("DOCRESTORE_SKIP_FINITE_CHECKS") != "1"


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """An operation produced (or received) NaN or Inf."""


class GraphError(RuntimeError):
    """Backward was asked to traverse a graph it cannot."""


def check_finite(arr, what="tensor"):
    """Raise NonFiniteError if `arr` contains NaN or Inf."""
    if not FINITE_CHECKS or arr.size == 0:
        return
    # min/max propagate NaN and catch +/-Inf without allocating a mask
    lo = arr.min()
    hi = arr.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """Dense N-dimensional array, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        check_finite(arr, "tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    @classmethod
    def _from_op(cls, data, requires_grad):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t._leaf = False
        check_finite(data, "op output")
        return t

    # -- basic properties --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._leaf

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.shape else float(self.data)

    def numpy(self):
        """Copy of the underlying buffer."""
        return np.array(self.data)

    def detach(self):
        """Same buffer, severed from any tape history."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return (f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")

    # Arithmetic operators are attached by docrestore.ops at import time.


class _Record:
    """One executed differentiable operation."""

    __slots__ = ("inputs", "out", "vjp", "name")

    def __init__(self, inputs, out, vjp, name):
        self.inputs = inputs
        self.out = out
        self.vjp = vjp
        self.name = name


class Tape:
    """Ordered log of differentiable operations.

    Usable as a context manager; while entered, ops involving any
    requires_grad tensor are recorded.  A tape must stay confined to one
    thread.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self, "tape contexts exited out of order"
        return False

    def __len__(self):
        return len(self.records)


_state = threading.local()


def _stack():
    try:
        return _state.stack
    except AttributeError:
        _state.stack = []
        return _state.stack


def active_tape():
    """Innermost tape, or None when not recording (or inside no_grad)."""
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording for the enclosed block."""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


def record(inputs, out, vjp, name=""):
    """Append an operation record to the active tape, if any."""
    tape = active_tape()
    if tape is not None:
        tape.records.append(_Record(inputs, out, vjp, name))


def recording(*tensors):
    """True if the active tape should capture an op on these inputs."""
    if active_tape() is None:
        return False
    return any(t.requires_grad for t in tensors)


def backward(loss, tape, wrt=None, create_graph=False):
    """Accumulate d(loss)/d(leaf) for every requires_grad leaf on `tape`.

    loss must be a scalar tensor produced on `tape`.  When `wrt` is given,
    the gradients of those tensors are returned as a list (zero tensors
    where the loss does not depend on them) and leaf `.grad` buffers are
    left untouched.  With `create_graph=True` the gradient computation
    itself is recorded, so returned gradients support further
    differentiation.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    records = list(tape.records)
    produced = any(r.out is loss for r in records)
    if not produced:
        raise GraphError("loss was not produced on this tape (detached graph)")

    grads = {id(loss): Tensor(np.ones((), dtype=loss.dtype).reshape(loss.shape))}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for rec in reversed(records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            input_grads = rec.vjp(g)
            for t, ig in zip(rec.inputs, input_grads):
                if ig is None or not t.requires_grad:
                    continue
                if ig.shape != t.shape:
                    raise GraphError(
                        f"vjp of {rec.name or 'op'} returned shape {ig.shape} "
                        f"for input of shape {t.shape}")
                prev = grads.get(id(t))
                if prev is None:
                    grads[id(t)] = ig
                else:
                    # accumulation must stay on-graph for create_graph
                    grads[id(t)] = Tensor._from_op(
                        prev.data + ig.data, prev.requires_grad or ig.requires_grad)
                    if create_graph and (prev.requires_grad or ig.requires_grad):
                        _record_add(prev, ig, grads[id(t)])

    if wrt is not None:
        # gradient-computation mode: hand back requested grads, leave leaves alone
        out = []
        for t in wrt:
            g = grads.get(id(t))
            if g is None:
                g = Tensor(np.zeros(t.shape, dtype=t.dtype))
            out.append(g)
        return out

    # accumulation mode: deposit into requires_grad leaves
    seen = set()
    for rec in records:
        for t in rec.inputs:
            if t._leaf and t.requires_grad and id(t) in grads and id(t) not in seen:
                seen.add(id(t))
                addend = grads[id(t)].data.astype(t.dtype, copy=False)
                t.grad = addend.copy() if t.grad is None else t.grad + addend
    return None


def _record_add(a, b, out):
    def vjp(g):
        return g, g
    record((a, b), out, vjp, "grad-accumulate")


def finite_diff_grad(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at tensor x.

    f is evaluated without recording.  Returns an ndarray of x's shape.
    Use float64 tensors and h around 1e-5 for verification-grade accuracy;
    float32 needs a coarser step (around 5e-3) to beat roundoff.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = x.data
    out = np.zeros_like(base)
    flat = out.reshape(-1)
    with no_grad():
        for i in range(base.size):
            xp = base.copy().reshape(-1)
            xm = base.copy().reshape(-1)
            xp[i] += h
            xm[i] -= h
            fp = f(Tensor(xp.reshape(base.shape), dtype=base.dtype))
            fm = f(Tensor(xm.reshape(base.shape), dtype=base.dtype))
            fp = fp.item() if isinstance(fp, Tensor) else float(fp)
            fm = fm.item() if isinstance(fm, Tensor) else float(fm)
            flat[i] = (fp - fm) / (2.0 * h)
    return out
