"""The assembled pipeline: text adapter, backbone stub, refinement, decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..autodiff import Tensor
from ..backbone import LatentStats, StubParams, compute_latent_std, encode_latent, extract_pyramid
from ..depth_head import DecoderParams, DepthPrediction, decode
from ..imafr import ImafrParams, imafr_bypass, imafr_forward
from ..text import AdapterParams, adapt, aggregate
from .config import RunConfig
from .data import BoxWorld


@dataclass
class EVPModel:
    adapter: AdapterParams
    backbone: StubParams
    imafr: Optional[ImafrParams]
    decoder: DecoderParams
    stats: LatentStats = field(metadata={"frozen": True})
    # Dataset-level embedding for the d / vd strategies, fixed after training starts.
    shared_text: Optional[np.ndarray] = field(default=None, metadata={"frozen": True})


def embeddings_per_set(cfg: RunConfig) -> int:
    return 1 if cfg.reg_strategy in ("v", "vd") else cfg.data.embed_k


def build_model(cfg: RunConfig, dtype="float32") -> EVPModel:
    rng = np.random.default_rng([cfg.seed, cfg.backbone.seed])
    channels = list(cfg.backbone.channels)
    backbone = StubParams.init(
        rng, channels, cfg.data.embed_dim, cfg.backbone.latent_channels, dtype=dtype
    )
    adapter = AdapterParams.init(cfg.data.embed_dim, rng, dtype=dtype)
    imafr = None
    if cfg.imafr.enabled:
        imafr = ImafrParams.init(
            channels, rng, cfg.imafr.direction, cfg.imafr.kernel, cfg.imafr.reduction, dtype=dtype
        )
    decoder = DecoderParams.init(
        channels,
        embeddings_per_set(cfg),
        rng,
        bins_enabled=cfg.head.bins_enabled,
        num_bins=cfg.head.num_bins,
        hidden=cfg.head.hidden,
        d_min=cfg.d_min,
        d_max=cfg.d_max,
        dtype=dtype,
    )
    stats = LatentStats.identity(cfg.backbone.latent_channels, dtype)
    return EVPModel(adapter, backbone, imafr, decoder, stats)


def dataset_latent_std(model: EVPModel, data: BoxWorld, batch: int = 32) -> LatentStats:
    latents = []
    for start in range(0, len(data), batch):
        z = encode_latent(Tensor(data.images[start : start + batch]), model.backbone).data
        latents.extend(z)
    return compute_latent_std(latents)


def text_for(cfg: RunConfig, model: EVPModel, data: BoxWorld) -> np.ndarray:
    """Embedding array consumed by ``forward``: (K', D) shared or (N, K', D)."""
    if cfg.reg_strategy in ("d", "vd"):
        if model.shared_text is None:
            model.shared_text = aggregate(data.embeddings, cfg.reg_strategy)[0].values.copy()
        return model.shared_text
    return np.stack([s.values for s in aggregate(data.embeddings, cfg.reg_strategy)])


def forward(model: EVPModel, images: np.ndarray, text: np.ndarray) -> DepthPrediction:
    x = Tensor(images)
    emb = adapt(Tensor(text, dtype=x.dtype), model.adapter)
    F, maps = extract_pyramid(x, emb, model.stats, model.backbone)
    F_e = imafr_forward(F, model.imafr) if model.imafr is not None else imafr_bypass(F)
    return decode(F_e, maps, model.decoder, out_size=images.shape[2:])
