"""Inverse multi-attentive refinement of a feature pyramid.

Pyramid levels are ordered coarsest first: ``levels[0]`` is f1 and
``levels[-1]`` is the finest map f4.  With the default ``"inverse"``
direction the chain is seeded by spatial attention on the finest level and
walks toward coarser ones::

    fe4 = SpatialAttention(f4)
    fe_i = Conv(Concat(resize(MultiAttention(fe_{i+1}), f_i), f_i))   i = 3, 2, 1

``"top_down"`` mirrors the chain (seed at the coarsest map, walk toward
finer ones) for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concat_channels, resize_bilinear
from .blocks import (
    AttentionParams,
    ConvBlockParams,
    MultiAttentionParams,
    conv_block,
    multi_attention,
    spatial_attention,
)
from .errors import ShapeError

DIRECTIONS = ("inverse", "top_down")


@dataclass
class FeaturePyramid:
    levels: list[Tensor]

    def __post_init__(self):
        self.levels = list(self.levels)
        validate_pyramid(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def __iter__(self):
        return iter(self.levels)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [t.shape for t in self.levels]

    @property
    def channels(self) -> list[int]:
        return [t.shape[1] for t in self.levels]


def validate_pyramid(levels: Sequence[Tensor]) -> None:
    if len(levels) < 1:
        raise ShapeError("a pyramid needs at least one level")
    n = levels[0].shape[0]
    for t in levels:
        if t.ndim != 4 or t.shape[0] != n:
            raise ShapeError(f"pyramid levels must be (N, C, H, W) with equal N, got {t.shape}")
    for coarse, fine in zip(levels, levels[1:]):
        (hc, wc), (hf, wf) = coarse.shape[2:], fine.shape[2:]
        if hf < hc or wf < wc or hf % hc or wf % wc:
            raise ShapeError(
                f"levels must grow in resolution by integer ratios: {coarse.shape} then {fine.shape}"
            )


@dataclass
class ChainStep:
    """Parameters for refining one level from its already-refined neighbour."""

    multi: MultiAttentionParams
    fuse: ConvBlockParams


@dataclass
class ImafrParams:
    base: AttentionParams
    steps: list[ChainStep]
    direction: str = field(default="inverse", metadata={"frozen": True})

    @classmethod
    def init(
        cls,
        channels: Sequence[int],
        rng: np.random.Generator,
        direction: str = "inverse",
        kernel: int = 7,
        reduction: int = 8,
        groups: int = 8,
        dtype="float32",
    ) -> "ImafrParams":
        """Build parameters for a pyramid with per-level ``channels`` (coarsest first)."""
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        order = _chain_order(len(channels), direction)
        seed = order[0]
        base = AttentionParams.init(channels[seed], rng, kernel, reduction, channel=False, dtype=dtype)
        steps = []
        for prev, cur in zip(order, order[1:]):
            c_prev, c_cur = channels[prev], channels[cur]
            steps.append(
                ChainStep(
                    MultiAttentionParams.init(c_prev, rng, kernel=kernel, reduction=reduction, groups=groups, dtype=dtype),
                    ConvBlockParams.init(c_prev + c_cur, c_cur, rng, groups, dtype),
                )
            )
        return cls(base, steps, direction)


def _chain_order(num_levels: int, direction: str) -> list[int]:
    idx = list(range(num_levels))
    return idx[::-1] if direction == "inverse" else idx


def imafr_forward(F: FeaturePyramid, p: ImafrParams) -> FeaturePyramid:
    order = _chain_order(len(F), p.direction)
    if len(p.steps) != len(order) - 1:
        raise ShapeError(f"params built for {len(p.steps) + 1} levels, pyramid has {len(F)}")
    refined: list[Tensor | None] = [None] * len(F)
    refined[order[0]] = spatial_attention(F[order[0]], p.base)
    for step, prev, cur in zip(p.steps, order, order[1:]):
        f = F[cur]
        if step.fuse.c_in != refined[prev].shape[1] + f.shape[1] or step.fuse.c_out != f.shape[1]:
            raise ShapeError(f"fuse block {step.fuse.c_in}->{step.fuse.c_out} does not fit level {cur}")
        attended = multi_attention(refined[prev], step.multi.attention, step.multi.cb1, step.multi.cb2)
        attended = resize_bilinear(attended, f.shape[2], f.shape[3])
        refined[cur] = conv_block(concat_channels([attended, f]), step.fuse)
    return FeaturePyramid(refined)


def imafr_bypass(F: FeaturePyramid) -> FeaturePyramid:
    return F
