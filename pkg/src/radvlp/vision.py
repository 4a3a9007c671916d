"""Convolutional image encoder with a local feature grid output.

A four-stage residual stack with output stride 16: each stage halves the
spatial resolution, so a 64x64 input yields a 4x4 grid and a 512x512 input
a 32x32 grid. In dilation mode the final stage keeps stride 1 with dilated
convolutions, halving the effective stride to 8 for higher-resolution maps.
Channel normalization is per-cell (layer norm over the channel axis), so
forward passes are deterministic and batch-independent.

The global image embedding pools projected cells: project first, mean-pool
the pre-normalization outputs, then L2-normalize the mean. With a nonlinear
projection head this is not the same vector as projecting the pooled
feature, and the order matters downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .corpus.types import ImageRecord


@dataclass
class ImageEncoderConfig:
    widths: tuple[int, ...] = (8, 16, 32, 64)
    dilation: bool = False
    proj_dim: int = 128

    @property
    def stride(self) -> int:
        base = 2 ** len(self.widths)
        return base // 2 if self.dilation else base

    @property
    def out_channels(self) -> int:
        return self.widths[-1]


@dataclass
class LocalFeatureGrid:
    features: np.ndarray  # (h, w, d)
    stride: int


@dataclass
class ProjectedGrid:
    cells: np.ndarray  # (h, w, proj_dim), each cell unit norm


@dataclass
class GlobalEmbedding:
    v: np.ndarray  # (proj_dim,), unit norm


def _relu(x):
    return np.maximum(x, 0.0)


class ConvNormAct(nn.Module):
    def __init__(self, c_in, c_out, rng, stride=1, dilation=1, act=True):
        super().__init__()
        self.conv = self.add_child("conv", nn.Conv2d(c_in, c_out, rng, 3, stride, dilation))
        self.ln = self.add_child("ln", nn.LayerNorm(c_out))
        self.act = act

    def forward(self, x):
        h, c_conv = self.conv.forward(x)
        y, c_ln = self.ln.forward(h)
        if self.act:
            out = _relu(y)
            return out, (c_conv, c_ln, y)
        return y, (c_conv, c_ln, None)

    def backward(self, dout, cache):
        c_conv, c_ln, pre = cache
        if self.act:
            dout = dout * (pre > 0)
        dh = self.ln.backward(dout, c_ln)
        return self.conv.backward(dh, c_conv)


class ResidualBlock(nn.Module):
    def __init__(self, c, rng, dilation=1):
        super().__init__()
        self.a = self.add_child("a", ConvNormAct(c, c, rng, 1, dilation, act=True))
        self.b = self.add_child("b", ConvNormAct(c, c, rng, 1, dilation, act=False))

    def forward(self, x):
        h, ca = self.a.forward(x)
        y, cb = self.b.forward(h)
        pre = x + y
        return _relu(pre), (ca, cb, pre)

    def backward(self, dout, cache):
        ca, cb, pre = cache
        dpre = dout * (pre > 0)
        dh = self.b.backward(dpre, cb)
        return dpre + self.a.backward(dh, ca)


class ImageEncoder(nn.Module):
    def __init__(self, cfg: ImageEncoderConfig, rng):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        self.stem = self.add_child("stem", ConvNormAct(1, w[0], rng, 1, 1))
        self.downs = []
        self.resblocks = []
        c_prev = w[0]
        for i, c in enumerate(w):
            last = i == len(w) - 1
            if cfg.dilation and last:
                stride, dil = 1, 2
            else:
                stride, dil = 2, 1
            self.downs.append(
                self.add_child(f"down{i}", ConvNormAct(c_prev, c, rng, stride, dil))
            )
            self.resblocks.append(self.add_child(f"res{i}", ResidualBlock(c, rng, dil)))
            c_prev = c

    def forward_batch(self, x):
        """x: (B, H, W, 1) float64 in [0, 1]; returns (B, h, w, C) grid."""
        side = x.shape[1]
        if x.shape[2] != side:
            raise ValueError("input images must be square")
        if side % self.cfg.stride != 0:
            raise ValueError(
                f"input side {side} not divisible by effective stride {self.cfg.stride}"
            )
        h, c_stem = self.stem.forward(x)
        caches = [c_stem]
        for down, res in zip(self.downs, self.resblocks):
            h, c_d = down.forward(h)
            h, c_r = res.forward(h)
            caches.append((c_d, c_r))
        return h, caches

    def backward_batch(self, dout, caches):
        dh = dout
        for down, res, (c_d, c_r) in zip(
            reversed(self.downs), reversed(self.resblocks), reversed(caches[1:])
        ):
            dh = res.backward(dh, c_r)
            dh = down.backward(dh, c_d)
        return self.stem.backward(dh, caches[0])


def encode_image(model: ImageEncoder, img: ImageRecord) -> LocalFeatureGrid:
    """Encode one image into its local feature grid (eval mode)."""
    x = np.asarray(img.pixels, dtype=nn.DTYPE)[None, :, :, None]
    grid, _ = model.forward_batch(x)
    return LocalFeatureGrid(features=grid[0], stride=model.cfg.stride)


def project_grid(head: nn.Mlp, grid: LocalFeatureGrid) -> ProjectedGrid:
    """Apply the projection head per cell and normalize each cell."""
    z, _ = head.forward(grid.features)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    return ProjectedGrid(cells=z / norms)


def pool_global(head: nn.Mlp, grid: LocalFeatureGrid) -> GlobalEmbedding:
    """Global embedding: mean of projected (pre-normalization) cells, normalized."""
    h, w, _ = grid.features.shape
    if h == 0 or w == 0:
        raise ValueError("cannot pool an empty grid")
    z, _ = head.forward(grid.features.reshape(h * w, -1))
    mean = z.mean(axis=0)
    return GlobalEmbedding(v=mean / np.linalg.norm(mean))
