"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, mul, sum_


@dataclass
class GradcheckResult:
    name: str
    errors: list[float] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``."""
    diff = np.linalg.norm((analytic - numeric).ravel())
    scale = max(np.linalg.norm(analytic.ravel()), np.linalg.norm(numeric.ravel()), floor)
    return float(diff / scale)


def numerical_gradient(f: Callable[[], float], array: np.ndarray, eps: float, coords=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``array``, perturbed in place.

    ``coords`` restricts the probe to those flat indices; the result then
    holds one entry per coordinate.
    """
    flat = array.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2 * eps))
    return np.array(out)


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    seed: int = 0,
    max_coords: int | None = None,
) -> list[float]:
    """Compare analytic and finite-difference gradients of a random projection.

    ``fn(*inputs)`` may return any shape; it is reduced to a scalar with a
    fixed random weighting. With ``max_coords`` only that many randomly
    chosen entries of each input are probed. Returns one relative error per
    input tensor.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradient checks need float64 inputs")
    out = fn(*inputs)
    weights = rng.standard_normal(out.shape)

    def project(o: Tensor) -> Tensor:
        return sum_(mul(o, Tensor(weights)))

    for t in inputs:
        t.grad = None
    grads = backward(project(out))

    def scalar() -> float:
        return float(np.sum(fn(*inputs).data * weights))

    errors = []
    for t in inputs:
        analytic = grads.get(t, np.zeros_like(t.data)).reshape(-1)
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = np.sort(rng.choice(t.size, max_coords, replace=False))
            analytic = analytic[coords]
        numeric = numerical_gradient(scalar, t.data, eps, coords)
        errors.append(relative_error(analytic, numeric))
    return errors
