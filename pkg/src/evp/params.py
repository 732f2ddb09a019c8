"""Parameter containers: initialization and named traversal.

Parameter sets are plain dataclasses whose fields are tensors, nested
parameter dataclasses, lists of those, or plain config values.  Names are
dotted field paths (``steps.0.fuse.weight``) and double as checkpoint file
stems.
"""

from __future__ import annotations

import dataclasses
from typing import Iterator

import numpy as np

from .autodiff import Tensor


def param(array, dtype) -> Tensor:
    return Tensor(np.asarray(array), requires_grad=True, dtype=dtype)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    return param(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), dtype)


def glorot_normal(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> Tensor:
    return param(rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out)), dtype)


def zeros(shape, dtype) -> Tensor:
    return param(np.zeros(shape), dtype)


def ones(shape, dtype) -> Tensor:
    return param(np.ones(shape), dtype)


def named_parameters(obj, prefix: str = "", include_frozen: bool = False) -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every trainable tensor in ``obj``.

    Fields marked ``frozen`` in their dataclass metadata are skipped unless
    ``include_frozen`` is set (checkpoints need them, optimizers do not).
    """
    if isinstance(obj, Tensor):
        if obj.requires_grad or include_frozen:
            yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            if f.metadata.get("frozen") and not include_frozen:
                continue
            yield from named_parameters(getattr(obj, f.name), _join(prefix, f.name), include_frozen)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, _join(prefix, str(i)), include_frozen)
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from named_parameters(obj[key], _join(prefix, str(key)), include_frozen)


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def largest_divisor_at_most(n: int, cap: int) -> int:
    """Largest divisor of ``n`` that does not exceed ``cap``."""
    for d in range(min(n, max(cap, 1)), 0, -1):
        if n % d == 0:
            return d
    return 1
