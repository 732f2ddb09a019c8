"""Desk-scale stand-in for the text-conditioned diffusion backbone.

A frozen patchify encoder maps the image to a latent at 1/4 resolution,
the latent is divided by per-channel dataset standard deviations, and four
(conv, cross-attention) stages emit the pyramid finest-first.  The pyramid
is returned coarsest-first, alongside each stage's cross-attention maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import params as P
from .autodiff import (
    Tensor,
    add,
    conv2d,
    div,
    linear,
    matmul,
    mul,
    pool,
    relu,
    reshape,
    softmax,
    transpose,
)
from .errors import ShapeError
from .imafr import FeaturePyramid

DEFAULT_CHANNELS = (128, 96, 64, 32)


@dataclass
class LatentStats:
    std: np.ndarray  # (C_lat,)
    count: int = 1
    eps_floor: float = 1e-6

    def __post_init__(self):
        self.std = np.asarray(self.std)
        if self.std.ndim != 1:
            raise ShapeError("latent std must be rank 1")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if np.any(self.std < np.asarray(self.eps_floor, dtype=self.std.dtype)):
            raise ValueError("std values must be >= eps_floor")

    @classmethod
    def identity(cls, channels: int, dtype="float32") -> "LatentStats":
        return cls(np.ones(channels, dtype=dtype))


def compute_latent_std(latents: Sequence[np.ndarray], eps_floor: float = 1e-6) -> LatentStats:
    """Population std per channel over all samples and pixels.

    Per-channel sums are taken over the sorted values, so the result is
    independent of dataset order.
    """
    if len(latents) == 0:
        raise ValueError("compute_latent_std needs at least one latent")
    arrays = [np.asarray(z.data if isinstance(z, Tensor) else z) for z in latents]
    shape = arrays[0].shape
    if len(shape) != 3 or any(a.shape != shape for a in arrays):
        raise ShapeError("latents must share one (C, H, W) shape")
    dtype = arrays[0].dtype
    c = shape[0]
    values = np.sort(np.stack(arrays).astype(np.float64).transpose(1, 0, 2, 3).reshape(c, -1), axis=1)
    mu = values.mean(axis=1, keepdims=True)
    std = np.sqrt(np.sort((values - mu) ** 2, axis=1).mean(axis=1))
    std = np.maximum(std, eps_floor)
    return LatentStats(std.astype(dtype), count=len(arrays), eps_floor=eps_floor)


def normalize_latent(z: Tensor, stats: LatentStats) -> Tensor:
    c = z.shape[1] if z.ndim == 4 else z.shape[0]
    if stats.std.shape != (c,):
        raise ShapeError(f"stats hold {stats.std.shape[0]} channels, latent has {c}")
    shape = (1, c, 1, 1) if z.ndim == 4 else (c,) + (1,) * (z.ndim - 1)
    return div(z, Tensor(stats.std.reshape(shape), dtype=z.dtype))


@dataclass
class CrossAttentionParams:
    wq: Tensor  # (C, C)
    wk: Tensor  # (C, D)
    wv: Tensor  # (C, D)

    @classmethod
    def init(cls, channels: int, dim: int, rng, dtype="float32"):
        return cls(
            wq=P.glorot_normal(rng, (channels, channels), channels, channels, dtype),
            wk=P.glorot_normal(rng, (channels, dim), dim, channels, dtype),
            wv=P.param(rng.standard_normal((channels, dim)) * 0.1 / np.sqrt(dim), dtype),
        )


def cross_attention(feat: Tensor, emb: Tensor, proj: CrossAttentionParams) -> tuple[Tensor, Tensor]:
    """Single-head attention from pixels (queries) to embedding rows (keys).

    ``emb`` is (K, D), shared by the batch, or (N, K, D).  Returns the
    residual output (N, C, H, W) and the attention maps (N, K, H, W).
    """
    n, c, h, w = feat.shape
    if proj.wq.shape != (c, c):
        raise ShapeError(f"query projection expects {proj.wq.shape[0]} channels, got {c}")
    if emb.shape[-1] != proj.wk.shape[1]:
        raise ShapeError(f"key projection expects D={proj.wk.shape[1]}, got {emb.shape[-1]}")
    if emb.ndim == 3 and emb.shape[0] != n:
        raise ShapeError(f"per-image embeddings for {emb.shape[0]} images, batch is {n}")
    k = emb.shape[-2]
    q = linear(transpose(reshape(feat, (n, c, h * w)), (0, 2, 1)), proj.wq)  # (N, HW, C)
    keys = linear(emb, proj.wk)  # (.., K, C)
    values = linear(emb, proj.wv)
    scores = mul(matmul(q, transpose(keys, (*range(keys.ndim - 2), keys.ndim - 1, keys.ndim - 2))), 1.0 / np.sqrt(c))
    weights = softmax(scores, axis=-1)  # (N, HW, K)
    attended = matmul(weights, values)  # (N, HW, C)
    out = add(feat, reshape(transpose(attended, (0, 2, 1)), (n, c, h, w)))
    maps = reshape(transpose(weights, (0, 2, 1)), (n, k, h, w))
    return out, maps


@dataclass
class StageParams:
    weight: Tensor  # (C_out, C_in, 3, 3)
    bias: Tensor
    attn: CrossAttentionParams


@dataclass
class StubParams:
    patch_weight: Tensor = field(metadata={"frozen": True})  # (C_lat, 3, 3, 3), never trained
    stages: list[StageParams] = field(default_factory=list)  # finest first

    @property
    def latent_channels(self) -> int:
        return self.patch_weight.shape[0]

    @property
    def channels(self) -> list[int]:
        """Per-level channels, coarsest first."""
        return [s.weight.shape[0] for s in reversed(self.stages)]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        channels: Sequence[int] = DEFAULT_CHANNELS,
        embed_dim: int = 768,
        latent_channels: int = 4,
        in_channels: int = 3,
        dtype="float32",
    ) -> "StubParams":
        patch = Tensor(rng.standard_normal((latent_channels, in_channels, 3, 3)) / np.sqrt(in_channels * 9), dtype=dtype)
        stages = []
        c_in = latent_channels
        for c_out in reversed(list(channels)):
            stages.append(
                StageParams(
                    P.he_normal(rng, (c_out, c_in, 3, 3), c_in * 9, dtype),
                    P.zeros((c_out,), dtype),
                    CrossAttentionParams.init(c_out, embed_dim, rng, dtype),
                )
            )
            c_in = c_out
        return cls(patch, stages)


def encode_latent(x: Tensor, p: StubParams) -> Tensor:
    """Frozen encoder: 4x4 average pooling then a fixed 3x3 conv."""
    if x.ndim != 4:
        raise ShapeError(f"image must be (N, 3, H, W), got {x.shape}")
    h, w = x.shape[2:]
    if h % 32 or w % 32:
        raise ShapeError(f"image extents must be divisible by 32, got {h}x{w}")
    return conv2d(pool(x, "avg", (4, 4)), p.patch_weight, padding=1)


def extract_pyramid(
    x: Tensor, emb: Tensor, stats: LatentStats, p: StubParams
) -> tuple[FeaturePyramid, list[Tensor]]:
    """Image and text embeddings to a 4-level pyramid plus attention maps.

    ``emb`` is a (K, D) set shared by the batch or (N, K, D) per image.
    Both returned lists are ordered coarsest first.
    """
    h = normalize_latent(encode_latent(x, p), stats)
    feats, maps = [], []
    for i, stage in enumerate(p.stages):
        if i > 0:
            h = pool(h, "avg", (2, 2))
        h = relu(conv2d(h, stage.weight, stage.bias, padding=1))
        h, attn = cross_attention(h, emb, stage.attn)
        feats.append(h)
        maps.append(attn)
    return FeaturePyramid(feats[::-1]), maps[::-1]
