"""The two restoration networks, their composite, and the WGAN critic.

PerceptionNet is a 4-level U-Net of channel-attention blocks that predicts
per-type degradation prior maps and exposes its decoder features as a
four-scale pyramid (full, 1/2, 1/4, 1/8 resolution).  RestorationNet is a
4-level U-Net of DualBlocks whose decoder fuses that pyramid at every
scale and predicts a residual added onto the input image.  Critic scores
256x256 crops with an unbounded scalar (no normalization layers, as
required for gradient-penalty training).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import ops
from .blocks import (ASTMConfig, DepthwiseConv, Downsample, PointwiseConv,
                     SeparableConv, Upsample, make_level, run_level)
from .module import Module, ModuleList
from .tensor import ShapeError, Tensor, no_grad

SCALE_FACTOR = 8  # inputs are padded to a multiple of this


@dataclass
class PerceptionConfig:
    channels: Tuple[int, ...] = (18, 36, 54, 72)
    blocks: Tuple[int, ...] = (1, 1, 1, 2)
    heads: Tuple[int, ...] = (1, 1, 1, 2)
    num_types: int = 3
    ffn_expansion: float = 2.66
    dk_init: float = 1.0

    def __post_init__(self):
        if not (len(self.channels) == len(self.blocks) == len(self.heads) == 4):
            raise ValueError("perception net is a fixed 4-level design")


@dataclass
class RestorerConfig:
    channels: Tuple[int, ...] = (36, 72, 108, 144)
    blocks: Tuple[int, ...] = (2, 2, 2, 3)
    heads: Tuple[int, ...] = (1, 2, 2, 3)
    # pooled-attention grid per level 2..4; level 1 runs without ASTM
    astm_pools: Tuple[Tuple[int, int], ...] = ((32, 32), (16, 16), (8, 8))
    fuse_channels: Tuple[int, ...] = (18, 36, 54, 72)
    ffn_expansion: float = 2.66
    dk_init: float = 1.0

    def __post_init__(self):
        if not (len(self.channels) == len(self.blocks) == len(self.heads) == 4):
            raise ValueError("restorer net is a fixed 4-level design")
        if len(self.astm_pools) != 3:
            raise ValueError("pooled attention sizes cover levels 2..4 only")


@dataclass
class CriticConfig:
    widths: Tuple[int, ...] = (64, 128, 256, 512)
    input_size: int = 256
    leaky_slope: float = 0.2


class FeaturePyramid:
    """Perception decoder features keyed by downscale factor (1, 2, 4, 8)."""

    FACTORS = (1, 2, 4, 8)

    def __init__(self, levels: Dict[int, Tensor]):
        if set(levels) != set(self.FACTORS):
            raise ShapeError(f"pyramid needs scales {self.FACTORS}, got {sorted(levels)}")
        self.levels = levels

    def __getitem__(self, factor):
        return self.levels[factor]

    def check_extents(self, h, w):
        for f in self.FACTORS:
            got = self.levels[f].shape[1:]
            if got != (h // f, w // f):
                raise ShapeError(f"pyramid scale 1/{f} has extents {got}, "
                                 f"expected {(h // f, w // f)}")


def _check_divisible(h, w):
    if h % SCALE_FACTOR or w % SCALE_FACTOR:
        raise ShapeError(f"extents ({h},{w}) must be divisible by {SCALE_FACTOR}; "
                         f"use the composite's padding entry point")


class PerceptionNet(Module):
    """Degradation perception: prior maps plus the multi-scale feature pyramid."""

    def __init__(self, rng, cfg: Optional[PerceptionConfig] = None, dtype=np.float32):
        super().__init__()
        cfg = cfg or PerceptionConfig()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.channels
        kw = dict(ffn_expansion=cfg.ffn_expansion, dk_init=cfg.dk_init, dtype=dtype)
        self.embed = SeparableConv(rng, 3, c1, dtype=dtype)
        self.enc1 = make_level(rng, cfg.blocks[0], c1, cfg.heads[0], **kw)
        self.down1 = Downsample(rng, c1, c2, dtype=dtype)
        self.enc2 = make_level(rng, cfg.blocks[1], c2, cfg.heads[1], **kw)
        self.down2 = Downsample(rng, c2, c3, dtype=dtype)
        self.enc3 = make_level(rng, cfg.blocks[2], c3, cfg.heads[2], **kw)
        self.down3 = Downsample(rng, c3, c4, dtype=dtype)
        self.latent = make_level(rng, cfg.blocks[3], c4, cfg.heads[3], **kw)
        self.up3 = Upsample(rng, c4, c3, dtype=dtype)
        self.reduce3 = PointwiseConv(rng, 2 * c3, c3, dtype=dtype)
        self.dec3 = make_level(rng, cfg.blocks[2], c3, cfg.heads[2], **kw)
        self.up2 = Upsample(rng, c3, c2, dtype=dtype)
        self.reduce2 = PointwiseConv(rng, 2 * c2, c2, dtype=dtype)
        self.dec2 = make_level(rng, cfg.blocks[1], c2, cfg.heads[1], **kw)
        self.up1 = Upsample(rng, c2, c1, dtype=dtype)
        self.reduce1 = PointwiseConv(rng, 2 * c1, c1, dtype=dtype)
        self.dec1 = make_level(rng, cfg.blocks[0], c1, cfg.heads[0], **kw)
        self.head = PointwiseConv(rng, c1, cfg.num_types, dtype=dtype)

    def forward(self, img):
        _, h, w = img.shape
        _check_divisible(h, w)
        e1 = run_level(self.enc1, self.embed.forward(img))
        e2 = run_level(self.enc2, self.down1.forward(e1))
        e3 = run_level(self.enc3, self.down2.forward(e2))
        lat = run_level(self.latent, self.down3.forward(e3))
        d3 = run_level(self.dec3, self.reduce3.forward(
            ops.concat([self.up3.forward(lat), e3], axis=0)))
        d2 = run_level(self.dec2, self.reduce2.forward(
            ops.concat([self.up2.forward(d3), e2], axis=0)))
        d1 = run_level(self.dec1, self.reduce1.forward(
            ops.concat([self.up1.forward(d2), e1], axis=0)))
        priors = ops.sigmoid(self.head.forward(d1))
        return priors, FeaturePyramid({1: d1, 2: d2, 4: d3, 8: lat})


class FeatureFusion(Module):
    """Concatenate encoder skip, previous decoder output, and the pyramid
    feature at one scale, then project to the level width."""

    def __init__(self, rng, enc_c, dec_c, rep_c, out_c, dtype=np.float32):
        super().__init__()
        self.proj = PointwiseConv(rng, enc_c + dec_c + rep_c, out_c, dtype=dtype)

    def forward(self, enc_feat, dec_feat, rep_feat):
        if not (enc_feat.shape[1:] == dec_feat.shape[1:] == rep_feat.shape[1:]):
            raise ShapeError(
                f"fusion inputs disagree spatially: {enc_feat.shape} / "
                f"{dec_feat.shape} / {rep_feat.shape}")
        return self.proj.forward(ops.concat([enc_feat, dec_feat, rep_feat], axis=0))


class RestorationNet(Module):
    """Restoration U-Net guided by the perception pyramid."""

    def __init__(self, rng, cfg: Optional[RestorerConfig] = None, dtype=np.float32):
        super().__init__()
        cfg = cfg or RestorerConfig()
        self.cfg = cfg
        d1, d2, d3, d4 = cfg.channels
        f1, f2, f4, f8 = cfg.fuse_channels
        p2, p3, p4 = cfg.astm_pools
        kw = dict(ffn_expansion=cfg.ffn_expansion, dk_init=cfg.dk_init, dtype=dtype)
        self.embed = SeparableConv(rng, 3, d1, dtype=dtype)
        self.enc1 = make_level(rng, cfg.blocks[0], d1, cfg.heads[0], pool=None, **kw)
        self.down1 = Downsample(rng, d1, d2, dtype=dtype)
        self.enc2 = make_level(rng, cfg.blocks[1], d2, cfg.heads[1], pool=p2, **kw)
        self.down2 = Downsample(rng, d2, d3, dtype=dtype)
        self.enc3 = make_level(rng, cfg.blocks[2], d3, cfg.heads[2], pool=p3, **kw)
        self.down3 = Downsample(rng, d3, d4, dtype=dtype)
        self.latent = make_level(rng, cfg.blocks[3], d4, cfg.heads[3], pool=p4, **kw)
        self.latent_fuse = PointwiseConv(rng, d4 + f8, d4, dtype=dtype)
        self.up3 = Upsample(rng, d4, d3, dtype=dtype)
        self.fuse3 = FeatureFusion(rng, d3, d3, f4, d3, dtype=dtype)
        self.dec3 = make_level(rng, cfg.blocks[2], d3, cfg.heads[2], pool=p3, **kw)
        self.up2 = Upsample(rng, d3, d2, dtype=dtype)
        self.fuse2 = FeatureFusion(rng, d2, d2, f2, d2, dtype=dtype)
        self.dec2 = make_level(rng, cfg.blocks[1], d2, cfg.heads[1], pool=p2, **kw)
        self.up1 = Upsample(rng, d2, d1, dtype=dtype)
        self.fuse1 = FeatureFusion(rng, d1, d1, f1, d1, dtype=dtype)
        self.dec1 = make_level(rng, cfg.blocks[0], d1, cfg.heads[0], pool=None, **kw)
        self.head_dw = DepthwiseConv(rng, d1, dtype=dtype)
        self.head_pw = PointwiseConv(rng, d1, 3, dtype=dtype)

    def forward(self, img, rep: FeaturePyramid):
        _, h, w = img.shape
        _check_divisible(h, w)
        rep.check_extents(h, w)
        e1 = run_level(self.enc1, self.embed.forward(img))
        e2 = run_level(self.enc2, self.down1.forward(e1))
        e3 = run_level(self.enc3, self.down2.forward(e2))
        lat = run_level(self.latent, self.down3.forward(e3))
        lat = self.latent_fuse.forward(ops.concat([lat, rep[8]], axis=0))
        x3 = run_level(self.dec3, self.fuse3.forward(e3, self.up3.forward(lat), rep[4]))
        x2 = run_level(self.dec2, self.fuse2.forward(e2, self.up2.forward(x3), rep[2]))
        x1 = run_level(self.dec1, self.fuse1.forward(e1, self.up1.forward(x2), rep[1]))
        residual = self.head_pw.forward(self.head_dw.forward(x1))
        return ops.clamp(ops.add(img, residual), 0.0, 1.0)

    def zero_output_head(self):
        """Make the net the identity map (zero predicted residual)."""
        self.head_pw.zero_()


class DocRestorer(Module):
    """Perceive-then-restore composite over both networks."""

    def __init__(self, rng, perception_cfg=None, restorer_cfg=None, dtype=np.float32):
        super().__init__()
        p_cfg = perception_cfg or PerceptionConfig()
        r_cfg = restorer_cfg or RestorerConfig(fuse_channels=p_cfg.channels)
        if tuple(r_cfg.fuse_channels) != tuple(p_cfg.channels):
            raise ValueError("restorer fuse_channels must mirror perception channels")
        self.perception = PerceptionNet(rng, p_cfg, dtype=dtype)
        self.restorer = RestorationNet(rng, r_cfg, dtype=dtype)

    def forward(self, img):
        """img: (3,H,W) tensor with extents divisible by 8."""
        priors, rep = self.perception.forward(img)
        return self.restorer.forward(img, rep), priors

    def enhance(self, img_hwc):
        """Gradient-free enhancement of an (H,W,3) array in [0,1].

        Arbitrary extents: reflect-pads up to a multiple of 8, crops back.
        Returns (enhanced_hwc, priors_hwt).
        """
        h, w = img_hwc.shape[:2]
        ph = (-h) % SCALE_FACTOR
        pw = (-w) % SCALE_FACTOR
        chw = np.ascontiguousarray(img_hwc.transpose(2, 0, 1).astype(np.float32))
        if ph or pw:
            chw = np.pad(chw, ((0, 0), (0, ph), (0, pw)), mode="reflect")
        with no_grad():
            out, priors = self.forward(Tensor(chw))
        enhanced = out.data[:, :h, :w].transpose(1, 2, 0)
        prior_maps = priors.data[:, :h, :w].transpose(1, 2, 0)
        return np.ascontiguousarray(enhanced), np.ascontiguousarray(prior_maps)


class Critic(Module):
    """WGAN critic: conv stages with 2x pooling, unbounded scalar output."""

    def __init__(self, rng, cfg: Optional[CriticConfig] = None, dtype=np.float32):
        super().__init__()
        cfg = cfg or CriticConfig()
        if cfg.input_size % (2 ** len(cfg.widths)):
            raise ValueError("input_size must survive one halving per stage")
        self.cfg = cfg
        prev = 3
        stages = []
        for wdt in cfg.widths:
            stages.append(SeparableConv(rng, prev, wdt, dtype=dtype))
            prev = wdt
        self.stages = ModuleList(stages)
        self.head = PointwiseConv(rng, prev, 1, dtype=dtype)

    def forward(self, img):
        c, h, w = img.shape
        s = self.cfg.input_size
        if (c, h, w) != (3, s, s):
            raise ShapeError(f"critic expects (3,{s},{s}), got {(c, h, w)}")
        x = img
        for stage in self.stages:
            x = ops.leaky_relu(stage.forward(x), self.cfg.leaky_slope)
            x = ops.adaptive_avg_pool(x, x.shape[1] // 2, x.shape[2] // 2)
        return ops.tmean(self.head.forward(x))


# ---------------------------------------------------------------------------
# checkpoint format: versioned text manifest + flat binary payload

_CKPT_MAGIC = "DOCRESTORE-CKPT"
_CKPT_VERSION = 1


def save_checkpoint(path, module: Module, meta: Optional[Dict[str, str]] = None):
    """Write named parameters as a text manifest plus flat binary payload.

    Written atomically (temp file + rename) so interrupted runs never leave
    a truncated checkpoint behind.
    """
    entries = []
    payload = io.BytesIO()
    offset = 0
    for name, p in module.named_parameters():
        raw = np.ascontiguousarray(p.data)
        data = raw.astype("<" + raw.dtype.str[1:]).tobytes()
        entries.append((name, raw.dtype.name,
                        ",".join(map(str, raw.shape)) or "scalar",
                        offset, len(data)))
        payload.write(data)
        offset += len(data)
    lines = [f"{_CKPT_MAGIC} v{_CKPT_VERSION}"]
    for k, v in (meta or {}).items():
        if any(ch.isspace() for ch in str(k)):
            raise ValueError("meta keys must not contain whitespace")
        lines.append(f"meta {k} {v}")
    lines.append(f"tensors {len(entries)}")
    for name, dt, shape, off, nbytes in entries:
        lines.append(f"{name} {dt} {shape} {off} {nbytes}")
    lines.append("DATA")
    header = ("\n".join(lines) + "\n").encode()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint back into ({name: ndarray}, {meta key: value})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.index(b"\n")
    first = blob[:nl].decode()
    if not first.startswith(_CKPT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    version = first.split("v")[-1]
    if int(version) != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    meta = {}
    pos = nl + 1
    entries = []
    n_tensors = None
    while True:
        nl = blob.index(b"\n", pos)
        line = blob[pos:nl].decode()
        pos = nl + 1
        if line == "DATA":
            break
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
        elif line.startswith("tensors "):
            n_tensors = int(line.split()[1])
        else:
            name, dt, shape, off, nbytes = line.rsplit(" ", 4)
            shp = () if shape == "scalar" else tuple(int(s) for s in shape.split(","))
            entries.append((name, dt, shp, int(off), int(nbytes)))
    if n_tensors is not None and len(entries) != n_tensors:
        raise ValueError(f"manifest declares {n_tensors} tensors, found {len(entries)}")
    state = {}
    for name, dt, shp, off, nbytes in entries:
        arr = np.frombuffer(blob, dtype="<" + np.dtype(dt).str[1:],
                            count=nbytes // np.dtype(dt).itemsize,
                            offset=pos + off)
        state[name] = arr.astype(dt).reshape(shp)
    return state, meta
