"""SGD-with-momentum and Adam parameter updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checked: bool = True

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def optimizer_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray] | None,
    state: dict,
    config: OptimizerConfig,
) -> dict:
    """Update ``params`` in place and return the (mutated) optimizer state.

    ``grads`` defaults to each parameter's ``.grad``; parameters without a
    gradient are left untouched.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    if config.checked:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    step = state.get("step", 0) + 1
    state["step"] = step
    for name, g in grads.items():
        p = params[name]
        g = g.astype(p.dtype, copy=False)
        if config.kind == "sgd":
            v = state.setdefault(("v", name), np.zeros_like(p.data))
            v *= config.momentum
            v += g
            p.data -= config.lr * v
        else:
            m = state.setdefault(("m", name), np.zeros_like(p.data))
            v = state.setdefault(("v", name), np.zeros_like(p.data))
            m *= config.beta1
            m += (1 - config.beta1) * g
            v *= config.beta2
            v += (1 - config.beta2) * g * g
            mhat = m / (1 - config.beta1**step)
            vhat = v / (1 - config.beta2**step)
            p.data -= (config.lr * mhat / (np.sqrt(vhat) + config.eps)).astype(p.dtype)
    return state
