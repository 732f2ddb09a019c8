"""CBAM-style attention gates and the 1x1 Conv block.

``multi_attention`` applies spatial attention, channel attention and two
Conv blocks in that order; it is the unit the pyramid refinement chains.
Gates are pure multiplicative (no residual path).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import params as P
from .autodiff import (
    Tensor,
    add,
    concat_channels,
    conv2d,
    group_norm,
    linear,
    mul,
    pool,
    relu,
    reshape,
    sigmoid,
)
from .errors import ShapeError


@dataclass
class ConvBlockParams:
    weight: Tensor  # (C_out, C_in, 1, 1)
    gn_gamma: Tensor
    gn_beta: Tensor
    groups: int = 8

    def __post_init__(self):
        c_out = self.weight.shape[0]
        if c_out % self.groups:
            raise ShapeError(f"groups {self.groups} must divide C_out {c_out}")

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator, groups: int = 8, dtype="float32"):
        return cls(
            weight=P.he_normal(rng, (c_out, c_in, 1, 1), c_in, dtype),
            gn_gamma=P.ones((c_out,), dtype),
            gn_beta=P.zeros((c_out,), dtype),
            groups=P.largest_divisor_at_most(c_out, groups),
        )


@dataclass
class AttentionParams:
    """Spatial kernel plus an optional shared channel bottleneck MLP.

    The MLP fields are ``None`` for a spatial-only gate.
    """

    spatial_kernel: Tensor  # (1, 2, k, k)
    mlp_w1: Optional[Tensor] = None  # (C/r, C)
    mlp_b1: Optional[Tensor] = None
    mlp_w2: Optional[Tensor] = None  # (C, C/r)
    mlp_b2: Optional[Tensor] = None

    def __post_init__(self):
        k = self.spatial_kernel.shape
        if len(k) != 4 or k[:2] != (1, 2) or k[2] != k[3] or k[2] % 2 == 0:
            raise ShapeError(f"spatial kernel must be (1, 2, k, k) with odd k, got {k}")

    @property
    def kernel_size(self) -> int:
        return self.spatial_kernel.shape[-1]

    @classmethod
    def init(
        cls,
        channels: int,
        rng: np.random.Generator,
        kernel: int = 7,
        reduction: int = 8,
        channel: bool = True,
        dtype="float32",
    ):
        sk = P.he_normal(rng, (1, 2, kernel, kernel), 2 * kernel * kernel, dtype)
        if not channel:
            return cls(sk)
        hidden = max(1, channels // reduction)
        return cls(
            sk,
            mlp_w1=P.he_normal(rng, (hidden, channels), channels, dtype),
            mlp_b1=P.zeros((hidden,), dtype),
            mlp_w2=P.glorot_normal(rng, (channels, hidden), hidden, channels, dtype),
            mlp_b2=P.zeros((channels,), dtype),
        )


def spatial_gate(x: Tensor, p: AttentionParams) -> Tensor:
    pooled = concat_channels([pool(x, "avg", "global", "channel"), pool(x, "max", "global", "channel")])
    return sigmoid(conv2d(pooled, p.spatial_kernel, padding=(p.kernel_size - 1) // 2))


def spatial_attention(x: Tensor, p: AttentionParams) -> Tensor:
    return mul(spatial_gate(x, p), x)


def channel_gate(x: Tensor, p: AttentionParams) -> Tensor:
    if p.mlp_w1 is None:
        raise ShapeError("these attention params carry no channel MLP")
    n, c = x.shape[:2]
    if p.mlp_w1.shape[1] != c:
        raise ShapeError(f"channel MLP expects {p.mlp_w1.shape[1]} channels, got {c}")

    def mlp(v: Tensor) -> Tensor:
        return linear(relu(linear(v, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2)

    avg = reshape(pool(x, "avg", "global", "spatial"), (n, c))
    mx = reshape(pool(x, "max", "global", "spatial"), (n, c))
    return reshape(sigmoid(add(mlp(avg), mlp(mx))), (n, c, 1, 1))


def channel_attention(x: Tensor, p: AttentionParams) -> Tensor:
    return mul(channel_gate(x, p), x)


def conv_block(x: Tensor, p: ConvBlockParams) -> Tensor:
    """relu(group_norm(conv1x1(x)))."""
    if x.ndim != 4 or x.shape[1] != p.c_in:
        raise ShapeError(f"conv block expects {p.c_in} input channels, got shape {x.shape}")
    return relu(group_norm(conv2d(x, p.weight), p.groups, p.gn_gamma, p.gn_beta))


@dataclass
class MultiAttentionParams:
    attention: AttentionParams
    cb1: ConvBlockParams
    cb2: ConvBlockParams

    @classmethod
    def init(cls, channels: int, rng, out_channels: Optional[int] = None, kernel=7, reduction=8, groups=8, dtype="float32"):
        out = channels if out_channels is None else out_channels
        return cls(
            AttentionParams.init(channels, rng, kernel, reduction, dtype=dtype),
            ConvBlockParams.init(channels, out, rng, groups, dtype),
            ConvBlockParams.init(out, out, rng, groups, dtype),
        )


def multi_attention(x: Tensor, ap: AttentionParams, cb1: ConvBlockParams, cb2: ConvBlockParams) -> Tensor:
    if cb2.c_in != cb1.c_out:
        raise ShapeError("second Conv block input must match first block output")
    return conv_block(conv_block(channel_attention(spatial_attention(x, ap), ap), cb1), cb2)
