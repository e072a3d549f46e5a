"""Kernel-interpolated temporal convolution and the non-local attention block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import softmax
from .tensor import Tensor, add, as_tensor, matmul, reshape, transpose

SCOPES = ("segment", "subject")


@dataclass
class ConvKIKernel:
    """Temporal filter bank ``k0`` of shape [1, 1, N0, n_o]."""

    k0: Tensor

    def __post_init__(self):
        s = self.k0.shape
        if len(s) != 4 or s[:2] != (1, 1) or s[2] < 2 or s[3] < 1:
            raise ValueError(f"k0 must be [1,1,N0>=2,n_o>=1], got {s}")

    @property
    def native_length(self) -> int:
        return self.k0.shape[2]

    @property
    def n_filters(self) -> int:
        return self.k0.shape[3]


def interpolation_matrix(n0: int, n: int, dtype=np.float64) -> np.ndarray:
    """[n, n0] matrix of endpoint-aligned linear interpolation weights.

    Output sample j sits at source position j * (n0 - 1) / (n - 1).
    """
    if n < 2:
        raise ValueError(f"frame count must be >= 2, got {n}")
    pos = np.arange(n, dtype=np.float64) * (n0 - 1) / (n - 1)
    lo = np.minimum(np.floor(pos).astype(int), n0 - 2)
    frac = pos - lo
    m = np.zeros((n, n0), dtype=np.float64)
    rows = np.arange(n)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m.astype(dtype)


def interpolate_kernel(kernel: ConvKIKernel | Tensor, n: int) -> Tensor:
    """Resample the temporal axis of ``k0`` to ``n`` taps. Returns [1,1,n,n_o]."""
    k0 = kernel.k0 if isinstance(kernel, ConvKIKernel) else kernel
    n0, n_o = k0.shape[2], k0.shape[3]
    if n < 2:
        raise ValueError(f"frame count must be >= 2, got {n}")
    if n == n0:
        return k0
    m = Tensor(interpolation_matrix(n0, n, k0.dtype))
    return reshape(matmul(m, reshape(k0, (n0, n_o))), (1, 1, n, n_o))


def conv_ki_forward(x: Tensor, kernel: ConvKIKernel | Tensor) -> Tensor:
    """Match every pixel's temporal profile against the interpolated filters.

    ``x`` is [r, a, N] or [B, r, a, N]; the result replaces the temporal axis
    by the filter axis.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"sequence needs at least 2 frames, got {n}")
    k = interpolate_kernel(kernel, n)
    n_o = k.shape[3]
    lead = x.shape[:-1]
    flat = reshape(x, (-1, n))
    out = matmul(flat, reshape(k, (n, n_o)))
    return reshape(out, lead + (n_o,))


@dataclass
class NLBlockParams:
    phi_w: Tensor
    psi_w: Tensor
    g_w: Tensor
    theta_w: Tensor
    scope: str = "segment"

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        c, ce = self.phi_w.shape
        for name in ("psi_w", "g_w"):
            if getattr(self, name).shape != (c, ce):
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {(c, ce)}")
        if self.theta_w.shape != (ce, c):
            raise ValueError(f"theta_w shape {self.theta_w.shape} != {(ce, c)}")

    @property
    def channels(self) -> int:
        return self.phi_w.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"phi_w": self.phi_w, "psi_w": self.psi_w, "g_w": self.g_w, "theta_w": self.theta_w}

    @classmethod
    def init(cls, channels: int, scope: str, rng: np.random.Generator, dtype=np.float32) -> "NLBlockParams":
        """Random embeddings and a zero output projection, so the block starts as identity."""
        ce = embed_width(channels)
        limit = np.sqrt(6.0 / (channels + ce))

        def u():
            return Tensor(rng.uniform(-limit, limit, size=(channels, ce)).astype(dtype), requires_grad=True)

        return cls(u(), u(), u(), Tensor(np.zeros((ce, channels), dtype=dtype), requires_grad=True), scope)


def embed_width(channels: int) -> int:
    return max(1, channels // 2)


def nl_attention(x: Tensor, params: NLBlockParams) -> Tensor:
    """Pairwise weights softmax_j(phi(x_i) . psi(x_j)) over positions of ``x``.

    ``x`` is [P, C] or batched [G, P, C]; rows of the result sum to one.
    """
    x = as_tensor(x)
    phi = matmul(x, params.phi_w)
    psi = matmul(x, params.psi_w)
    axes = (1, 0) if x.ndim == 2 else (0, 2, 1)
    return softmax(matmul(phi, transpose(psi, axes)), axis=-1)


def nl_block_forward(x: Tensor, params: NLBlockParams) -> Tensor:
    """Residual non-local block on a [B, H, W, C] feature batch.

    Segment scope attends within each batch element; subject scope attends
    jointly over every position of the whole batch.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"nl block expects [B,H,W,C], got {x.shape}")
    B, H, W, C = x.shape
    if B == 0:
        raise ValueError("nl block needs a non-empty batch")
    if C != params.channels:
        raise ValueError(f"nl block built for {params.channels} channels, input has {C}")
    groups = B if params.scope == "segment" else 1
    pos = reshape(x, (groups, B * H * W // groups, C))
    weights = nl_attention(pos, params)
    y = matmul(weights, matmul(pos, params.g_w))
    z = add(matmul(y, params.theta_w), pos)
    return reshape(z, (B, H, W, C))
