"""Gradient-check suite shared by the CLI and the test-suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import zlib

import numpy as np

from .functional import conv2d, cross_entropy_loss, dense, maxpool2d, relu, softmax
from .gradcheck import grad_check_detail, numeric_gradient, projected
from .layers import NLBlockParams, conv_ki_forward, nl_block_forward
from .model import ModelConfig, build_model, forward, insert_nl_blocks
from .tensor import Tensor


@dataclass
class CheckRow:
    name: str
    error: float
    argument: int
    index: tuple
    analytic: float
    numeric: float


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


def _row(name, fn, *points):
    r = grad_check_detail(fn, *points)
    return CheckRow(name, r.error, r.argument, tuple(int(i) for i in r.index), r.analytic, r.numeric)


def _nl_params(rng, c, scope):
    ce = max(1, c // 2)
    return NLBlockParams(_t(rng, c, ce), _t(rng, c, ce), _t(rng, c, ce), _t(rng, ce, c), scope)


def tiny_config(variant="baseline", seed=0) -> ModelConfig:
    return ModelConfig(variant=variant, n_o=2, channels=(2, 2, 2, 2), fc=8, n0=3, input_size=(8, 6), seed=seed, dtype="float64")


def _smooth_at(fn, points, eps=1e-4) -> bool:
    """True when central differences at eps and eps/10 agree, i.e. no ReLU or
    max-pool switch lies within eps of the point. Uses no analytic gradients."""
    coarse = numeric_gradient(fn, *points, eps=eps)
    fine = numeric_gradient(fn, *points, eps=eps / 10)
    return all(np.allclose(c, f, rtol=1e-5, atol=1e-9) for c, f in zip(coarse, fine))


def _model_rows(rng, variant, attempts=8):
    for _ in range(attempts):
        base = build_model(tiny_config(seed=int(rng.integers(1 << 30))))
        params = base if variant == "baseline" else insert_nl_blocks(base, variant)
        # random theta and positive biases keep most ReLUs away from their kink
        for name, t in params.named_tensors().items():
            if name.endswith(".b"):
                t.data = rng.uniform(0.1, 0.5, t.shape)
            elif name.endswith("theta_w"):
                t.data = rng.standard_normal(t.shape)
        names = list(params.named_tensors())
        tensors = list(params.named_tensors().values())
        x = _t(rng, 3, 8, 6, 4)
        labels = np.array([0, 2, 3])

        def fn(xx, *ws, params=params, names=names, tensors=tensors):
            for name, w in zip(names, ws):
                _assign(params, name, w)
            try:
                return cross_entropy_loss(forward(params, xx), labels)
            finally:
                for name, t in zip(names, tensors):
                    _assign(params, name, t)

        if _smooth_at(fn, [x, *tensors]):
            return _row(f"model[{variant}]", fn, x, *tensors)
    raise RuntimeError(f"no kink-free model point found for {variant} in {attempts} attempts")


def _assign(params, name, tensor):
    head, field = name.split(".")
    if head == "conv_ki":
        params.conv_ki.k0 = tensor
    elif head.startswith("conv"):
        i = int(head[4:]) - 1
        w, b = params.convs[i]
        params.convs[i] = (tensor, b) if field == "w" else (w, tensor)
    elif head.startswith("nl"):
        setattr(params.nl[int(head[2:])], field, tensor)
    else:
        w, b = getattr(params, head)
        setattr(params, head, (tensor, b) if field == "w" else (w, tensor))


def run_gradchecks(scopes: Iterable[str], seed: int = 0, tol: float = 1e-4) -> list[CheckRow]:
    rows: list[CheckRow] = []
    for scope in scopes:
        rng = np.random.default_rng([seed, zlib.crc32(scope.encode()) & 0xFFFF])
        if scope == "conv2d":
            x, k, b = _t(rng, 2, 5, 4, 3), _t(rng, 3, 3, 3, 2), _t(rng, 2)
            rows.append(_row("conv2d[same,3x3]", projected(lambda x, k, b: conv2d(x, k, b, "same"), (2, 5, 4, 2)), x, k, b))
            x, k = _t(rng, 4, 5, 2), _t(rng, 2, 2, 2, 3)
            rows.append(_row("conv2d[valid,2x2]", projected(lambda x, k: conv2d(x, k, padding="valid"), (3, 4, 3)), x, k))
        elif scope == "maxpool":
            x = _t(rng, 2, 5, 3, 2)
            rows.append(_row("maxpool2d[ceil]", projected(maxpool2d, (2, 3, 2, 2)), x))
        elif scope == "dense":
            x, w, b = _t(rng, 3, 5), _t(rng, 5, 4), _t(rng, 4)
            rows.append(_row("dense", projected(dense, (3, 4)), x, w, b))
            rows.append(_row("relu", projected(relu, (3, 5)), _t(rng, 3, 5)))
        elif scope == "softmax":
            rows.append(_row("softmax", projected(lambda x: softmax(x, axis=-1), (3, 4)), _t(rng, 3, 4)))
        elif scope == "cross-entropy":
            labels = np.array([1, 0, 3, 2])
            rows.append(_row("cross_entropy", lambda z: cross_entropy_loss(z, labels), _t(rng, 4, 4)))
        elif scope == "conv-ki":
            for n in (5, 7, 3):
                x, k0 = _t(rng, 2, 4, 3, n), _t(rng, 1, 1, 5, 3)
                rows.append(_row(f"conv_ki[N0=5,N={n}]", projected(conv_ki_forward, (2, 4, 3, 3)), x, k0))
        elif scope in ("nl-seg", "nl-sub"):
            sc = "segment" if scope == "nl-seg" else "subject"
            for B in (1, 3):
                x = _t(rng, B, 3, 2, 4)
                p = _nl_params(rng, 4, sc)

                def fn(x, a, b, g, th, sc=sc):
                    return nl_block_forward(x, NLBlockParams(a, b, g, th, sc))

                rows.append(_row(f"nl_block[{sc},B={B}]", projected(fn, (B, 3, 2, 4)), x, p.phi_w, p.psi_w, p.g_w, p.theta_w))
        elif scope == "model":
            for variant in ("baseline", "seg-NL-2", "sub-NL-2"):
                rows.append(_model_rows(rng, variant))
        else:
            raise ValueError(f"unknown gradcheck scope {scope!r}")
    return rows
