"""Minimal parameter container for network building blocks.

Tensors with requires_grad and child Modules assigned as attributes are
registered automatically, giving dotted parameter paths for checkpoints
and functional updates (the optimizer replaces parameter tensors rather
than mutating them in place).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
            object.__setattr__(self, name, value)
        elif isinstance(value, Module):
            self._children[name] = value
            object.__setattr__(self, name, value)
        else:
            object.__setattr__(self, name, value)

    # -- traversal ----------------------------------------------------------

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def zero_grads(self):
        for p in self.parameters():
            p.grad = None

    # -- functional parameter updates ----------------------------------------

    def get_param(self, path):
        mod, leaf = self._resolve(path)
        return mod._params[leaf]

    def set_param(self, path, tensor):
        mod, leaf = self._resolve(path)
        old = mod._params[leaf]
        if old.shape != tensor.shape:
            raise ValueError(f"shape mismatch for {path}: "
                             f"{old.shape} vs {tensor.shape}")
        if not tensor.requires_grad:
            tensor = Tensor(tensor.data, requires_grad=True)
        mod._params[leaf] = tensor
        object.__setattr__(mod, leaf, tensor)

    def _resolve(self, path):
        parts = path.split(".")
        mod = self
        for part in parts[:-1]:
            mod = mod._children[part]
        if parts[-1] not in mod._params:
            raise KeyError(f"no parameter named {path}")
        return mod, parts[-1]

    # -- bulk state ----------------------------------------------------------

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict:
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            if missing or extra:
                raise KeyError(f"state mismatch: missing {sorted(missing)[:4]}, "
                               f"unexpected {sorted(extra)[:4]}")
        for name, arr in state.items():
            if name in own:
                self.set_param(name, Tensor(np.asarray(arr, dtype=own[name].dtype),
                                            requires_grad=True))

    def to_dtype(self, dtype):
        for name, p in list(self.named_parameters()):
            self.set_param(name, Tensor(p.data.astype(dtype), requires_grad=True))
        return self


class ModuleList(Module):
    """Ordered container; children are addressable by index."""

    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        name = str(len(self._items))
        self._items.append(module)
        self._children[name] = module
        object.__setattr__(self, name, module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def param(rng, shape, std=1.0, dtype=np.float32):
    """Gaussian-initialized trainable tensor."""
    return Tensor((rng.standard_normal(shape) * std).astype(dtype),
                  requires_grad=True)


def zeros_param(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype=np.float32):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
