"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckResult:
    error: float
    argument: int
    index: tuple[int, ...]
    analytic: float
    numeric: float


def numeric_gradient(fn: Callable[..., Tensor], *points: Tensor, eps: float = 1e-4) -> list[np.ndarray]:
    """Central-difference gradient of scalar ``fn`` with respect to each point (float64)."""
    pts = [Tensor(p.data.astype(np.float64)) for p in points]
    grads = []
    with no_grad():
        for p in pts:
            g = np.empty(p.data.size)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(fn(*pts).data)
                flat[i] = orig - eps
                fm = float(fn(*pts).data)
                flat[i] = orig
                g[i] = (fp - fm) / (2 * eps)
            grads.append(g.reshape(p.shape))
    return grads


def grad_check_detail(fn: Callable[..., Tensor], *points: Tensor, eps: float = 1e-4) -> GradCheckResult:
    """Compare backward() against central differences at every coordinate.

    ``fn`` maps the ``points`` to a scalar Tensor. Points are promoted to
    float64 in place of the originals for the duration of the check.
    """
    pts = [Tensor(p.data.astype(np.float64), requires_grad=True) for p in points]
    loss = fn(*pts)
    loss.backward()
    numeric = numeric_gradient(fn, *pts, eps=eps)
    worst = None
    for k, (p, num_k) in enumerate(zip(pts, numeric)):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        a, n = analytic.reshape(-1), num_k.reshape(-1)
        err = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
        if err.size == 0:
            continue
        i = int(np.argmax(err))
        if worst is None or err[i] > worst.error:
            worst = GradCheckResult(float(err[i]), k, np.unravel_index(i, p.shape), float(a[i]), float(n[i]))
    if worst is None:
        raise ValueError("grad_check needs at least one non-empty point")
    return worst


def grad_check(fn: Callable[..., Tensor], *points: Tensor, eps: float = 1e-4) -> float:
    """Maximum relative error between analytic and numeric gradients."""
    return grad_check_detail(fn, *points, eps=eps).error


def projected(fn: Callable[..., Tensor], shape, seed: int = 0) -> Callable[..., Tensor]:
    """Turn a tensor-valued ``fn`` into a scalar one via a fixed random projection."""
    w = Tensor(np.random.default_rng(seed).standard_normal(shape))

    def scalar(*args):
        return (fn(*args) * w).sum()

    return scalar
