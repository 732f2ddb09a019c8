"""Depth decoder with adaptive metric bins, its regression fallback and the
scale-invariant log loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import params as P
from .autodiff import (
    Tensor,
    add,
    concat_channels,
    conv2d,
    cumsum,
    div,
    exp,
    linear,
    log,
    masked_select,
    mean,
    mul,
    pool,
    reshape,
    resize_bilinear,
    sigmoid,
    softmax,
    sqrt,
    square,
    sub,
    sum_,
)
from .blocks import ConvBlockParams, conv_block
from .errors import ShapeError
from .imafr import FeaturePyramid

PRESETS = {"indoor": 10.0, "outdoor": 80.0}


@dataclass
class BinPartition:
    centers: Tensor  # (N, B)
    widths: Tensor  # (N, B), rows sum to 1
    d_min: float
    d_max: float

    @property
    def num_bins(self) -> int:
        return self.centers.shape[1]


@dataclass
class DepthPrediction:
    depth: Tensor  # (N, 1, H, W)
    probs: Optional[Tensor] = None  # (N, B, h, w); None for the regression head
    bins: Optional[BinPartition] = None


def predict_bins(logits: Tensor, d_min: float, d_max: float) -> BinPartition:
    """Softmax widths over [d_min, d_max]; centers sit mid-interval.

    ``c_k = d_min + (d_max - d_min) * (sum_{j<k} w_j + w_k / 2)``
    """
    if not d_min < d_max:
        raise ValueError(f"need d_min < d_max, got {d_min}, {d_max}")
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"bin logits must be (N, B) with B >= 2, got {logits.shape}")
    widths = softmax(logits, axis=1)
    # work with unnormalized exponentials and divide once at the end: equal
    # logits then give integer partial sums and the centers round exactly as
    # d_min + span * (k + 0.5) / B does
    e = exp(sub(logits, Tensor(logits.data.max(axis=1, keepdims=True), dtype=logits.dtype)))
    z = sum_(e, axis=1, keepdims=True)
    mid = sub(cumsum(e, axis=1), mul(e, 0.5))
    centers = add(div(mul(mid, d_max - d_min), z), d_min)
    return BinPartition(centers, widths, d_min, d_max)


def depth_from_bins(probs: Tensor, bins: BinPartition) -> Tensor:
    """Per-pixel expectation of the bin centers: (N, B, H, W) -> (N, 1, H, W)."""
    if probs.ndim != 4 or probs.shape[:2] != bins.centers.shape:
        raise ShapeError(f"probs {probs.shape} do not match bin centers {bins.centers.shape}")
    n, b = bins.centers.shape
    return sum_(mul(probs, reshape(bins.centers, (n, b, 1, 1))), axis=1, keepdims=True)


@dataclass
class DecoderParams:
    levels: list[ConvBlockParams]  # coarsest first
    pixel_weight: Optional[Tensor] = None  # (B, C_dec, 1, 1)
    pixel_bias: Optional[Tensor] = None
    bin_weight: Optional[Tensor] = None  # (B, C_dec)
    bin_bias: Optional[Tensor] = None
    reg_weight: Optional[Tensor] = None  # (1, C_dec, 1, 1)
    reg_bias: Optional[Tensor] = None
    d_min: float = field(default=1e-3, metadata={"frozen": True})
    d_max: float = field(default=10.0, metadata={"frozen": True})

    @property
    def bins_enabled(self) -> bool:
        return self.pixel_weight is not None

    @classmethod
    def init(
        cls,
        level_channels: Sequence[int],
        attn_channels: int,
        rng: np.random.Generator,
        bins_enabled: bool = True,
        num_bins: int = 64,
        hidden: int = 32,
        d_min: float = 1e-3,
        d_max: float = 10.0,
        groups: int = 8,
        dtype="float32",
    ) -> "DecoderParams":
        """``attn_channels`` is the number of attention maps per level (K)."""
        if num_bins < 2:
            raise ValueError("need at least 2 bins")
        if not d_min < d_max:
            raise ValueError("need d_min < d_max")
        levels = [ConvBlockParams.init(c + attn_channels, hidden, rng, groups, dtype) for c in level_channels]
        p = cls(levels, d_min=d_min, d_max=d_max)
        if bins_enabled:
            p.pixel_weight = P.he_normal(rng, (num_bins, hidden, 1, 1), hidden, dtype)
            p.pixel_bias = P.zeros((num_bins,), dtype)
            p.bin_weight = P.param(rng.standard_normal((num_bins, hidden)) * 0.01, dtype)
            p.bin_bias = P.zeros((num_bins,), dtype)
        else:
            p.reg_weight = P.he_normal(rng, (1, hidden, 1, 1), hidden, dtype)
            p.reg_bias = P.zeros((1,), dtype)
        return p


def fuse_levels(F_e: FeaturePyramid, attn: Sequence[Tensor], p: DecoderParams) -> Tensor:
    """Concat each level with its attention maps, Conv block, upsample, sum."""
    if len(attn) != len(F_e) or len(p.levels) != len(F_e):
        raise ShapeError(f"{len(F_e)} pyramid levels, {len(attn)} attention maps, {len(p.levels)} level blocks")
    h, w = F_e[-1].shape[2:]
    fused = None
    for f, a, block in zip(F_e, attn, p.levels):
        if a.shape[0] != f.shape[0] or a.shape[2:] != f.shape[2:]:
            raise ShapeError(f"attention maps {a.shape} do not align with features {f.shape}")
        y = resize_bilinear(conv_block(concat_channels([f, a]), block), h, w)
        fused = y if fused is None else add(fused, y)
    return fused


def decode(
    F_e: FeaturePyramid,
    attn: Sequence[Tensor],
    p: DecoderParams,
    out_size: Optional[tuple[int, int]] = None,
) -> DepthPrediction:
    """Predict metric depth at ``out_size`` (defaults to the finest level size)."""
    fused = fuse_levels(F_e, attn, p)
    n, c, h, w = fused.shape
    out_h, out_w = out_size if out_size is not None else (h, w)
    if p.bins_enabled:
        probs = softmax(conv2d(fused, p.pixel_weight, p.pixel_bias), axis=1)
        pooled = reshape(pool(fused, "avg", "global", "spatial"), (n, c))
        bins = predict_bins(linear(pooled, p.bin_weight, p.bin_bias), p.d_min, p.d_max)
        depth = depth_from_bins(probs, bins)
        return DepthPrediction(resize_bilinear(depth, out_h, out_w), probs, bins)
    s = sigmoid(conv2d(fused, p.reg_weight, p.reg_bias))
    depth = add(mul(s, p.d_max - p.d_min), p.d_min)
    return DepthPrediction(resize_bilinear(depth, out_h, out_w))


def silog_loss(pred: Tensor, gt, mask, lam: float = 0.85, alpha: float = 10.0) -> Tensor:
    """``alpha * sqrt(mean(g^2) - lam * mean(g)^2)`` with ``g = log pred - log gt``
    over masked pixels only."""
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    if gt.shape != pred.shape or mask.shape != pred.shape:
        raise ShapeError(f"pred {pred.shape}, gt {gt.shape}, mask {mask.shape} must match")
    if not mask.any():
        raise ValueError("silog_loss needs at least one valid pixel")
    gt_valid = gt[mask]
    if np.any(gt_valid <= 0):
        raise ValueError("ground truth must be positive under the mask")
    g = sub(log(masked_select(pred, mask)), Tensor(np.log(gt_valid), dtype=pred.dtype))
    var = sub(mean(square(g)), mul(square(mean(g)), lam))
    return mul(sqrt(var), alpha)
