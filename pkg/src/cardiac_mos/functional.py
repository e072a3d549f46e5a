"""Differentiable neural-network ops on channels-last arrays.

Spatial ops accept either a single map ``[H, W, C]`` or a batch
``[B, H, W, C]`` and return the same rank they were given.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_op


def _batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ValueError(f"expected [H,W,C] or [B,H,W,C], got shape {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: str = "same") -> Tensor:
    """Stride-1 cross-correlation of ``x`` with ``kernel[kh, kw, Cin, Cout]``."""
    x = as_tensor(x)
    kernel = as_tensor(kernel, x.dtype)
    xd, squeeze = _batched(x)
    kd = kernel.data
    if kd.ndim != 4:
        raise ValueError(f"kernel must be [kh,kw,Cin,Cout], got shape {kernel.shape}")
    kh, kw, cin, cout = kd.shape
    if xd.shape[-1] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    B, H, W, _ = xd.shape
    if padding == "same":
        pt, pl = (kh - 1) // 2, (kw - 1) // 2
        pads = ((0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl), (0, 0))
        xp = np.pad(xd, pads)
        Ho, Wo = H, W
    elif padding == "valid":
        if kh > H or kw > W:
            raise ValueError(f"kernel {kernel.shape} larger than input {x.shape}")
        pads = None
        xp = xd
        Ho, Wo = H - kh + 1, W - kw + 1
    else:
        raise ValueError(f"unknown padding {padding!r}")

    cols = np.empty((B, Ho, Wo, kh, kw, cin), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + Ho, j : j + Wo, :]
    cols = cols.reshape(B * Ho * Wo, kh * kw * cin)
    kmat = kd.reshape(kh * kw * cin, cout)
    out = cols @ kmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, Ho, Wo, cout)
    if squeeze:
        out = out[0]

    def bw(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gk = (cols.T @ g2).reshape(kd.shape)
        gcols = (g2 @ kmat.T).reshape(B, Ho, Wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + Ho, j : j + Wo, :] += gcols[:, :, :, i, j, :]
        if pads is not None:
            gxp = gxp[:, pads[1][0] : pads[1][0] + H, pads[2][0] : pads[2][0] + W, :]
        gx = gxp[0] if squeeze else gxp
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, as_tensor(bias, x.dtype))
    return make_op("conv2d", out, parents, bw)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2, ceil mode (partial edge windows kept)."""
    xd, squeeze = _batched(x)
    B, H, W, C = xd.shape
    Ho, Wo = -(-H // 2), -(-W // 2)
    xp = np.full((B, 2 * Ho, 2 * Wo, C), -np.inf, dtype=xd.dtype)
    xp[:, :H, :W, :] = xd
    # window element order is row-major, so argmax ties go to the upper-left
    win = xp.reshape(B, Ho, 2, Wo, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def bw(g):
        if squeeze:
            g = g[None]
        gw = np.zeros((B, Ho, Wo, C, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(B, Ho, Wo, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * Ho, 2 * Wo, C)
        gx = gx[:, :H, :W, :]
        return (gx[0] if squeeze else gx,)

    return make_op("maxpool2d", out, (x,), bw)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for ``x`` of shape [n] or [B, n]."""
    x = as_tensor(x)
    weights = as_tensor(weights, x.dtype)
    bias = as_tensor(bias, x.dtype)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, weights {weights.shape}, bias {bias.shape}")
    xd, wd = x.data, weights.data
    out = xd @ wd + bias.data

    def bw(g):
        if xd.ndim == 1:
            return g @ wd.T, np.outer(xd, g), g
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return make_op("dense", out, (x, weights, bias), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def _softmax(a: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    s = _softmax(x.data, axis)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_op("softmax", s, (x,), bw)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    ld = logits.data
    if ld.ndim != 2 or ld.shape[0] != labels.size or labels.size == 0:
        raise ValueError(f"logits {logits.shape} do not match {labels.size} labels")
    K = ld.shape[1]
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label out of range 0..{K - 1}: {labels.tolist()}")
    B = labels.size
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(B)
    loss = np.asarray((logz - shifted[rows, labels]).mean(), dtype=ld.dtype)

    def bw(g):
        d = np.exp(shifted - logz[:, None])
        d[rows, labels] -= 1
        return (d * (g / B),)

    return make_op("cross_entropy", loss, (logits,), bw)
