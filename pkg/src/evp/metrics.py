"""Depth-estimation error metrics and dataset-level overall IoU."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

REPORT_KEYS = ("rel", "sq_rel", "rmse", "rmse_log", "log10", "delta1", "delta2", "delta3", "iou")


@dataclass
class MetricsReport:
    rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    iou: Optional[float] = None
    pixel_count: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    def to_text(self) -> str:
        lines = [f"{k}={_fmt(getattr(self, k))}" for k in REPORT_KEYS]
        lines.append(f"pixel_count={self.pixel_count}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = self.as_dict()
        payload["pixel_count"] = self.pixel_count
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values = {}
        for line in text.splitlines():
            if not line:
                continue
            key, _, raw = line.partition("=")
            if key == "pixel_count":
                values[key] = int(raw)
            else:
                values[key] = None if raw == "none" else float(raw)
        return cls(**values)


def _fmt(v) -> str:
    return "none" if v is None else repr(float(v))


def _valid(pred, gt, mask) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape}, gt {gt.shape}, mask {mask.shape} must match")
    if not mask.any():
        raise ValueError("mask selects no pixels")
    p, g = pred[mask], gt[mask]
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValueError("depths must be positive under the mask")
    return p, g


def depth_metrics(
    pred,
    gt,
    mask=None,
    d_min: Optional[float] = None,
    d_max: Optional[float] = None,
) -> MetricsReport:
    """Standard depth errors over masked pixels.

    When ``d_min``/``d_max`` are given the prediction is clamped to that range
    first.  The threshold accuracies use a strict ``<``; the test is written
    as ``pred < t * gt and gt < t * pred`` which equals
    ``max(pred/gt, gt/pred) < t`` without a division round-off at the boundary.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if d_min is not None or d_max is not None:
        pred = np.clip(pred, d_min, d_max)
    p, g = _valid(pred, gt, mask)
    err = p - g
    deltas = []
    for n in (1, 2, 3):
        t = 1.25**n
        deltas.append(float(np.mean((p < t * g) & (g < t * p))))
    return MetricsReport(
        rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err**2 / g)),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
        pixel_count=int(p.size),
    )


def overall_iou(pred_masks: Sequence, gt_masks: Sequence) -> float:
    """Cumulative intersection over cumulative union across the dataset."""
    if len(pred_masks) != len(gt_masks):
        raise ShapeError(f"{len(pred_masks)} predictions for {len(gt_masks)} ground-truth masks")
    inter = union = 0
    for pm, gm in zip(pred_masks, gt_masks):
        pm, gm = np.asarray(pm, dtype=bool), np.asarray(gm, dtype=bool)
        if pm.shape != gm.shape:
            raise ShapeError(f"mask shapes differ: {pm.shape} vs {gm.shape}")
        inter += int(np.count_nonzero(pm & gm))
        union += int(np.count_nonzero(pm | gm))
    if union == 0:
        raise ValueError("union is empty across the whole dataset")
    return inter / union
