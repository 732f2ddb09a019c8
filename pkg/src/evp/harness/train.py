"""Training loop, checkpoint I/O and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import evpt
from ..autodiff import backward
from ..backbone import LatentStats
from ..depth_head import silog_loss
from ..errors import ConfigError, NumericalError
from ..metrics import MetricsReport, depth_metrics
from ..params import named_parameters
from .config import RunConfig
from .data import BoxWorld, gen_boxworld
from .model import EVPModel, build_model, dataset_latent_std, forward, text_for
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
LOG_FILE = "train_log.tsv"
STATS_FILE = "latent_std.evpt"
TEXT_FILE = "text_embedding.evpt"


@dataclass
class TrainResult:
    config: RunConfig
    model: EVPModel
    losses: list[float] = field(default_factory=list)
    checkpoint: Optional[Path] = None

    def log_text(self) -> str:
        return "".join(f"{i}\t{loss!r}\n" for i, loss in enumerate(self.losses, start=1))


def train(cfg: RunConfig, out_dir=None, data: Optional[BoxWorld] = None) -> TrainResult:
    """Run ``cfg.steps`` Adam steps on BoxWorld and optionally write a checkpoint.

    Raises ``NumericalError`` naming the step if any forward value, loss or
    gradient goes non-finite.
    """
    data = data if data is not None else gen_boxworld(cfg, "train")
    if data.preset != cfg.preset:
        raise ConfigError(f"dataset preset {data.preset!r} differs from config preset {cfg.preset!r}")
    model = build_model(cfg)
    if cfg.std:
        model.stats = dataset_latent_std(model, data)
    text = text_for(cfg, model, data)
    shared = text.ndim == 2

    names, tensors = zip(*named_parameters(model))
    state = AdamState.zeros_like([t.data for t in tensors])
    order = np.random.default_rng([cfg.seed, 7919])
    result = TrainResult(cfg, model)
    o = cfg.optim
    for step in range(1, cfg.steps + 1):
        idx = np.sort(order.choice(len(data), cfg.batch_size, replace=False))
        batch_text = text if shared else text[idx]
        try:
            pred = forward(model, data.images[idx], batch_text)
            loss = silog_loss(pred.depth, data.depth[idx], data.mask[idx], cfg.loss.lam, cfg.loss.alpha)
            grads = backward(loss)
        except NumericalError as exc:
            raise NumericalError(f"step {step}: {exc}") from exc
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"step {step}: loss is {value}")
        g = [grads.get(t, np.zeros_like(t.data)) for t in tensors]
        if not all(np.isfinite(x).all() for x in g):
            raise NumericalError(f"step {step}: non-finite gradient")
        new, state = adam_step([t.data for t in tensors], g, state, o.lr, o.beta1, o.beta2, o.eps)
        for t, arr in zip(tensors, new):
            t.data = arr
            t.grad = None
        result.losses.append(value)
        if step == 1 or step % 50 == 0:
            log.info("step %d loss %.5f", step, value)

    if out_dir is not None:
        result.checkpoint = save_checkpoint(out_dir, cfg, model, result.log_text())
    return result


def save_checkpoint(out_dir, cfg: RunConfig, model: EVPModel, log_text: str = "") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(cfg.to_json(), encoding="utf-8")
    for name, t in named_parameters(model, include_frozen=True):
        evpt.save(out / f"{name}.evpt", t.data)
    evpt.save(out / STATS_FILE, model.stats.std)
    if model.shared_text is not None:
        evpt.save(out / TEXT_FILE, model.shared_text)
    if log_text:
        (out / LOG_FILE).write_text(log_text, encoding="utf-8")
    return out


def load_checkpoint(ckpt_dir) -> tuple[RunConfig, EVPModel]:
    ckpt = Path(ckpt_dir)
    if not (ckpt / CONFIG_FILE).is_file():
        raise ConfigError(f"{ckpt} holds no {CONFIG_FILE}")
    cfg = RunConfig.from_json((ckpt / CONFIG_FILE).read_text(encoding="utf-8"))
    model = build_model(cfg)
    for name, t in named_parameters(model, include_frozen=True):
        arr = evpt.load(ckpt / f"{name}.evpt")
        if arr.shape != t.shape:
            raise ConfigError(f"checkpoint tensor {name} has shape {arr.shape}, expected {t.shape}")
        t.data = arr
    model.stats = LatentStats(evpt.load(ckpt / STATS_FILE))
    if (ckpt / TEXT_FILE).is_file():
        model.shared_text = evpt.load(ckpt / TEXT_FILE)
    return cfg, model


def predict_dataset(cfg: RunConfig, model: EVPModel, data: BoxWorld, batch: int = 8) -> np.ndarray:
    text = text_for(cfg, model, data)
    out = []
    for start in range(0, len(data), batch):
        sl = slice(start, start + batch)
        t = text if text.ndim == 2 else text[sl]
        out.append(forward(model, data.images[sl], t).depth.data)
    return np.concatenate(out)


def evaluate(
    checkpoint,
    data: BoxWorld,
    predictor: str = "model",
    report_path=None,
) -> MetricsReport:
    """Score ``data`` and optionally write a report.

    ``checkpoint`` is a directory or a ``(RunConfig, EVPModel)`` pair.
    ``predictor`` selects the trained model, the ground truth itself, or a
    constant at the median valid ground-truth depth.
    """
    if isinstance(checkpoint, (str, Path)):
        cfg, model = load_checkpoint(checkpoint)
    else:
        cfg, model = checkpoint
    if data.preset != cfg.preset or data.d_max != cfg.d_max:
        raise ConfigError(f"checkpoint preset {cfg.preset!r} does not match dataset preset {data.preset!r}")
    if predictor == "model":
        pred = predict_dataset(cfg, model, data)
    elif predictor == "ground_truth":
        pred = data.depth.copy()
    elif predictor == "median":
        pred = np.full(data.depth.shape, np.median(data.depth[data.mask]))
    else:
        raise ValueError(f"unknown predictor {predictor!r}")
    report = depth_metrics(pred, data.depth, data.mask, d_min=data.d_min, d_max=data.d_max)
    if report_path is not None:
        write_report(report, report_path)
    return report


def write_report(report: MetricsReport, path) -> None:
    """Text report at ``path``; the JSON variant goes next to it as ``.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        path.write_text(report.to_json(), encoding="utf-8")
        path.with_suffix(".txt").write_text(report.to_text(), encoding="utf-8")
    else:
        path.write_text(report.to_text(), encoding="utf-8")
        path.with_suffix(".json").write_text(report.to_json(), encoding="utf-8")
