"""Transformer building blocks for the restoration networks.

STM mixes tokens across channels (a per-head C x C attention map, cheap
at any resolution).  ASTM mixes spatial tokens on an adaptively pooled
fixed-size grid, so its attention map costs the same regardless of input
resolution; the result is upsampled back and added residually.  GDFN is
the gated depthwise-conv feed-forward unit.  A DualBlock chains
STM -> ASTM (when configured) -> GDFN, each with its own residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .module import Module, ModuleList, ones_param, param, zeros_param
from .tensor import ShapeError, Tensor

# learnable attention scale is floored to keep 1/sqrt(d_k) real
_DK_FLOOR = 1e-6


def _dk_param(heads, init, dtype):
    """Learnable per-head attention scale d_k."""
    return Tensor(np.full((heads, 1, 1), init, dtype=dtype), requires_grad=True)


@dataclass
class STMConfig:
    heads: int
    channels: int

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by "
                             f"heads {self.heads}")


@dataclass
class ASTMConfig:
    heads: int
    pool_h: int
    pool_w: int
    channels: int

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by "
                             f"heads {self.heads}")


@dataclass
class DualBlockConfig:
    stm: STMConfig
    astm: Optional[ASTMConfig] = None
    ffn_expansion: float = 2.66
    dk_init: float = 1.0

    def __post_init__(self):
        if self.ffn_expansion <= 1.0:
            raise ValueError("ffn_expansion must exceed 1")


class PointwiseConv(Module):
    """1x1 conv: per-pixel linear map across channels."""

    def __init__(self, rng, c_in, c_out, bias=True, dtype=np.float32):
        super().__init__()
        std = float(np.sqrt(1.0 / c_in))
        self.weight = param(rng, (c_out, c_in), std, dtype)
        self.bias = zeros_param((c_out,), dtype) if bias else None

    def forward(self, x):
        return ops.conv2d_pointwise(x, self.weight, self.bias)

    def zero_(self):
        self.set_param("weight", zeros_param(self.weight.shape, self.weight.dtype))
        if self.bias is not None:
            self.set_param("bias", zeros_param(self.bias.shape, self.bias.dtype))


class DepthwiseConv(Module):
    """Per-channel k x k conv, same padding, no bias."""

    def __init__(self, rng, channels, ksize=3, dtype=np.float32):
        super().__init__()
        std = float(np.sqrt(1.0 / (ksize * ksize)))
        self.kernels = param(rng, (channels, ksize, ksize), std, dtype)

    def forward(self, x):
        return ops.conv2d_depthwise(x, self.kernels)


class SeparableConv(Module):
    """Pointwise projection followed by a depthwise 3x3."""

    def __init__(self, rng, c_in, c_out, bias=True, dtype=np.float32):
        super().__init__()
        self.pw = PointwiseConv(rng, c_in, c_out, bias=bias, dtype=dtype)
        self.dw = DepthwiseConv(rng, c_out, dtype=dtype)

    def forward(self, x):
        return self.dw.forward(self.pw.forward(x))


class LayerNorm2d(Module):
    """Normalization across channels at each spatial position."""

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = ones_param((channels,), dtype)
        self.beta = zeros_param((channels,), dtype)
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, eps=self.eps, axis=0)


def _heads_split(qkv, heads, tokens_last):
    """(3C,H,W) -> three (heads, C/heads, H*W) views (or token-major)."""
    c3, h, w = qkv.shape
    c = c3 // 3
    ch = c // heads
    stacked = ops.reshape(qkv, (3, heads, ch, h * w))
    parts = ops.split(stacked, 3, axis=0)
    out = []
    for p in parts:
        p = ops.reshape(p, (heads, ch, h * w))
        if tokens_last:
            p = ops.transpose(p, (0, 2, 1))  # (heads, tokens, ch)
        out.append(p)
    return out


class STM(Module):
    """Channel (spectrum) attention with a learnable per-head scale."""

    def __init__(self, rng, cfg: STMConfig, dk_init=1.0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.qkv = SeparableConv(rng, c, 3 * c, dtype=dtype)
        self.proj = PointwiseConv(rng, c, c, dtype=dtype)
        self.norm = LayerNorm2d(c, dtype=dtype)
        self.dk = _dk_param(cfg.heads, dk_init, dtype)
        self.last_attn_shape = None
        self.last_attn_nbytes = None

    def forward(self, x):
        c, h, w = x.shape
        q, k, v = _heads_split(self.qkv.forward(x), self.cfg.heads, tokens_last=False)
        scale = ops.power(ops.maximum_scalar(self.dk, _DK_FLOOR), -0.5)
        logits = ops.mul(ops.matmul(q, ops.swap_last2(k)), scale)
        attn = ops.softmax(logits, axis=-1)  # (heads, C/h, C/h)
        self.last_attn_shape = tuple(attn.shape)
        self.last_attn_nbytes = attn.data.nbytes
        mixed = ops.reshape(ops.matmul(attn, v), (c, h, w))
        return ops.add(self.norm.forward(self.proj.forward(mixed)), x)


class ASTM(Module):
    """Spatial attention on an adaptively pooled fixed-size grid."""

    def __init__(self, rng, cfg: ASTMConfig, dk_init=1.0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.qkv = SeparableConv(rng, c, 3 * c, dtype=dtype)
        self.proj = PointwiseConv(rng, c, c, dtype=dtype)
        self.norm = LayerNorm2d(c, dtype=dtype)
        self.dk = _dk_param(cfg.heads, dk_init, dtype)
        self.last_attn_shape = None
        self.last_attn_nbytes = None

    def forward(self, x):
        c, h, w = x.shape
        ph, pw = self.cfg.pool_h, self.cfg.pool_w
        if h < ph or w < pw:
            raise ShapeError(f"input ({h},{w}) smaller than pool ({ph},{pw})")
        pooled = ops.adaptive_avg_pool(x, ph, pw)
        q, k, v = _heads_split(self.qkv.forward(pooled), self.cfg.heads,
                               tokens_last=True)
        scale = ops.power(ops.maximum_scalar(self.dk, _DK_FLOOR), -0.5)
        logits = ops.mul(ops.matmul(q, ops.swap_last2(k)), scale)
        attn = ops.softmax(logits, axis=-1)  # (heads, ph*pw, ph*pw): fixed size
        self.last_attn_shape = tuple(attn.shape)
        self.last_attn_nbytes = attn.data.nbytes
        mixed = ops.transpose(ops.matmul(attn, v), (0, 2, 1))
        mixed = ops.reshape(mixed, (c, ph, pw))
        up = ops.resize_bilinear(self.proj.forward(mixed), h, w)
        return ops.add(self.norm.forward(up), x)


class GDFN(Module):
    """Gated depthwise-conv feed-forward unit."""

    def __init__(self, rng, channels, expansion=2.66, dtype=np.float32):
        super().__init__()
        hidden = int(channels * expansion)
        self.hidden = hidden
        self.expand = PointwiseConv(rng, channels, 2 * hidden, dtype=dtype)
        self.dw = DepthwiseConv(rng, 2 * hidden, dtype=dtype)
        self.proj = PointwiseConv(rng, hidden, channels, dtype=dtype)

    def forward(self, x):
        both = self.dw.forward(self.expand.forward(x))
        gate, value = ops.split(both, 2, axis=0)
        return ops.add(self.proj.forward(ops.mul(ops.gelu(gate), value)), x)


class DualBlock(Module):
    """STM -> ASTM (optional) -> GDFN, each residual; shape preserving."""

    def __init__(self, rng, cfg: DualBlockConfig, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.stm = STM(rng, cfg.stm, cfg.dk_init, dtype=dtype)
        self.astm = ASTM(rng, cfg.astm, cfg.dk_init, dtype=dtype) if cfg.astm else None
        self.ffn = GDFN(rng, cfg.stm.channels, cfg.ffn_expansion, dtype=dtype)

    def forward(self, x):
        x = self.stm.forward(x)
        if self.astm is not None:
            x = self.astm.forward(x)
        return self.ffn.forward(x)

    def zero_residual_branches(self):
        """Zero each residual branch's output projection: block becomes identity."""
        self.stm.proj.zero_()
        if self.astm is not None:
            self.astm.proj.zero_()
        self.ffn.proj.zero_()


class Downsample(Module):
    """Pixel-unshuffle then pointwise projection: (C,H,W) -> (c_out,H/2,W/2)."""

    def __init__(self, rng, c_in, c_out=None, dtype=np.float32):
        super().__init__()
        self.c_out = c_out if c_out is not None else 2 * c_in
        self.proj = PointwiseConv(rng, 4 * c_in, self.c_out, dtype=dtype)

    def forward(self, x):
        _, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"downsample needs even extents, got ({h},{w})")
        return self.proj.forward(ops.pixel_unshuffle(x, 2))


class Upsample(Module):
    """Pointwise projection then pixel-shuffle: (C,H,W) -> (c_out,2H,2W)."""

    def __init__(self, rng, c_in, c_out=None, dtype=np.float32):
        super().__init__()
        self.c_out = c_out if c_out is not None else c_in // 2
        self.proj = PointwiseConv(rng, c_in, 4 * self.c_out, dtype=dtype)

    def forward(self, x):
        return ops.pixel_shuffle(self.proj.forward(x), 2)


def make_level(rng, n_blocks, channels, heads, pool=None, ffn_expansion=2.66,
               dk_init=1.0, dtype=np.float32):
    """A stack of DualBlocks for one encoder/decoder level."""
    stm = STMConfig(heads=heads, channels=channels)
    astm = None
    if pool is not None:
        astm = ASTMConfig(heads=heads, pool_h=pool[0], pool_w=pool[1],
                          channels=channels)
    cfg = DualBlockConfig(stm=stm, astm=astm, ffn_expansion=ffn_expansion,
                          dk_init=dk_init)
    return ModuleList([DualBlock(rng, cfg, dtype=dtype) for _ in range(n_blocks)])


def run_level(level, x):
    for block in level:
        x = block.forward(x)
    return x
