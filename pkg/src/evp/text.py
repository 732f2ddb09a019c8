"""Image-text alignment: embedding sets, the residual text adapter and the
four regularization strategies.

Strategies:

``i``   per-image K x D sets, unchanged
``v``   per image, one 1 x D vector (mean over the K vectors)
``d``   one K x D set, element-wise mean over the dataset
``vd``  one 1 x D vector, mean over vectors and images
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import evpt
from . import params as P
from .autodiff import Tensor, add, linear, mul, relu
from .errors import FormatError, IngestionError, ShapeError

STRATEGIES = ("i", "v", "d", "vd")
DATASET_ID = "dataset"


@dataclass
class EmbeddingSet:
    vectors: Tensor  # (K, D)
    source_id: str = DATASET_ID

    def __post_init__(self):
        if not isinstance(self.vectors, Tensor):
            self.vectors = Tensor(self.vectors)
        if self.vectors.ndim != 2:
            raise ShapeError(f"embedding set must be rank 2 (K, D), got {self.vectors.shape}")

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.vectors.data


def robust_mean(stack: np.ndarray, axis: int = 0) -> np.ndarray:
    """Order-independent mean along ``axis``.

    Values are sorted along the axis, shifted by their minimum and summed
    with a pairwise tree, so the result depends only on the multiset of
    values: any permutation gives identical bits, and N identical values
    average to exactly that value.
    """
    s = np.sort(np.moveaxis(stack, axis, 0), axis=0)
    ref = s[0]
    dev = s - ref
    n = dev.shape[0]
    while dev.shape[0] > 1:
        if dev.shape[0] % 2:
            dev = np.concatenate([dev[:-2], dev[-2:-1] + dev[-1:]], axis=0)
        dev = dev[0::2] + dev[1::2]
    return ref + dev[0] / n


def aggregate(sets: Sequence[EmbeddingSet], strategy: str) -> list[EmbeddingSet]:
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if not sets:
        raise ShapeError("cannot aggregate an empty list of embedding sets")
    k, d = sets[0].k, sets[0].d
    for s in sets:
        if (s.k, s.d) != (k, d):
            raise ShapeError(f"mixed embedding shapes: {(k, d)} vs {(s.k, s.d)}")
    if strategy == "i":
        return list(sets)
    if strategy == "v":
        return [EmbeddingSet(Tensor(robust_mean(s.values, 0)[None, :]), s.source_id) for s in sets]
    if strategy == "d":
        stack = np.stack([s.values for s in sets])
        return [EmbeddingSet(Tensor(robust_mean(stack, 0)), DATASET_ID)]
    return aggregate(aggregate(sets, "v"), "d")


@dataclass
class AdapterParams:
    w1: Tensor  # (D_h, D)
    b1: Tensor
    w2: Tensor  # (D, D_h)
    b2: Tensor
    gain: Tensor  # (1,)

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, hidden: int | None = None, gain: float = 1.0, dtype="float32"):
        hidden = dim if hidden is None else hidden
        return cls(
            w1=P.he_normal(rng, (hidden, dim), dim, dtype),
            b1=P.zeros((hidden,), dtype),
            w2=P.param(rng.standard_normal((dim, hidden)) * 0.1 / np.sqrt(hidden), dtype),
            b2=P.zeros((dim,), dtype),
            gain=P.param(np.full((1,), gain), dtype),
        )


def adapt(vectors: Tensor, p: AdapterParams) -> Tensor:
    """Residual two-layer MLP over the last axis of any-rank ``vectors``."""
    if vectors.shape[-1] != p.w1.shape[1]:
        raise ShapeError(f"adapter expects D={p.w1.shape[1]}, got {vectors.shape[-1]}")
    hidden = relu(linear(vectors, p.w1, p.b1))
    return add(vectors, mul(p.gain, linear(hidden, p.w2, p.b2)))


def text_adapter(c: EmbeddingSet, p: AdapterParams) -> EmbeddingSet:
    return EmbeddingSet(adapt(c.vectors, p), c.source_id)


def _canonical(descriptor: Any) -> str:
    if dataclasses.is_dataclass(descriptor) and not isinstance(descriptor, type):
        descriptor = dataclasses.asdict(descriptor)
    if isinstance(descriptor, Mapping):
        return json.dumps(descriptor, sort_keys=True, default=str)
    return repr(descriptor)


def descriptor_seed(descriptor: Any, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}|{_canonical(descriptor)}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def synth_embeddings(descriptor: Any, k: int = 40, d: int = 768, seed: int = 0, dtype="float32") -> EmbeddingSet:
    """Deterministic Gaussian pseudo-embedding keyed by a hash of ``descriptor``."""
    if k < 1 or d < 1:
        raise ShapeError("K and D must be >= 1")
    rng = np.random.default_rng(descriptor_seed(descriptor, seed))
    source = str(getattr(descriptor, "image_id", "") or _canonical(descriptor)[:64])
    return EmbeddingSet(Tensor(rng.standard_normal((k, d)), dtype=dtype), source)


MANIFEST_NAME = "manifest.tsv"


def save_embeddings(sets: Sequence[EmbeddingSet], directory) -> Path:
    """Write one EVPT file per set plus a ``manifest.tsv``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(sets):
        if "\t" in s.source_id or "\n" in s.source_id:
            raise IngestionError(f"image id {s.source_id!r} contains a tab or newline")
        name = f"{i:06d}.evpt"
        evpt.save(directory / name, s.values)
        lines.append(f"{s.source_id}\t{name}\n")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("".join(lines), encoding="utf-8", newline="")
    return manifest


def load_embeddings(manifest_path) -> list[EmbeddingSet]:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    text = manifest_path.read_text(encoding="utf-8")
    sets: list[EmbeddingSet] = []
    dim = None
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise IngestionError(f"{manifest_path}:{lineno}: expected 'id<TAB>path', got {line!r}")
        image_id, rel = parts
        path = root / rel
        if not path.is_file():
            raise IngestionError(f"{manifest_path}:{lineno}: missing file {rel}")
        try:
            arr = evpt.load(path)
        except FormatError as exc:
            raise IngestionError(f"{manifest_path}:{lineno}: {exc}") from exc
        if arr.ndim != 2:
            raise IngestionError(f"{manifest_path}:{lineno}: rank {arr.ndim} embedding, expected 2")
        if dim is not None and arr.shape[1] != dim:
            raise IngestionError(f"{manifest_path}:{lineno}: D={arr.shape[1]} differs from D={dim}")
        dim = arr.shape[1]
        sets.append(EmbeddingSet(Tensor(arr), image_id))
    if not sets:
        raise IngestionError(f"{manifest_path}: no entries")
    return sets
