"""Cartesian short-axis cine slices to fixed-size polar segment sequences.

Geometry conventions: landmarks and pixels use (x=column, y=row) with rows
growing downward; angles are measured counter-clockwise with y pointing up,
so 90 deg is the top of the image and 180 deg the left side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .data import ANGULAR, FIRST_INDEX, LEVELS, RADIAL, SEGMENTS_PER_LEVEL, SegmentSequence, SubjectStudy

SIZE = 160
CENTER = (80.0, 80.0)
CROP_FACTOR = 2.5
SEPTAL_ANGLE = 180.0
MIN_JUNCTION_SEPARATION = 5.0

# first segment's arc start, degrees; arcs advance counter-clockwise
ARC_START = {"basal": 60.0, "mid": 60.0, "apical": 45.0}


class PreprocessError(ValueError):
    pass


@dataclass
class Landmarks:
    anterior_junction: tuple[float, float]
    inferior_junction: tuple[float, float]
    cavity_center: tuple[float, float]

    def as_array(self) -> np.ndarray:
        return np.array([self.anterior_junction, self.inferior_junction, self.cavity_center], dtype=np.float64)


@dataclass
class RawSlice:
    frames: np.ndarray  # [t, H, W]
    level: str
    landmarks: Landmarks
    pixel_spacing: float = 1.0
    labels: Sequence[int] | None = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] < 2:
            raise PreprocessError(f"frames must be [t>=2, H, W], got {self.frames.shape}")
        if self.level not in LEVELS:
            raise PreprocessError(f"level invalid: {self.level!r}")


def alignment_transform(landmarks: Landmarks, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Affine (matrix, offset) mapping output (row, col) to source (row, col).

    The cavity centre lands on (80, 80), the junction bisector points to 180
    deg, the anterior junction lies in the upper half (mirroring if needed),
    and the crop side is 2.5x the longer centre-junction distance.
    """
    h, w = shape
    pts = landmarks.as_array()
    if np.any(pts < 0) or np.any(pts[:, 0] > w - 1) or np.any(pts[:, 1] > h - 1):
        raise PreprocessError(f"landmarks outside image of size {w}x{h}: {pts.tolist()}")
    c = pts[2]
    va, vi = pts[0] - c, pts[1] - c
    da, di = float(np.hypot(*va)), float(np.hypot(*vi))
    if da == 0 or di == 0:
        raise PreprocessError("junction coincides with cavity centre")
    ua = np.array([va[0], -va[1]]) / da  # y-up unit vectors
    ui = np.array([vi[0], -vi[1]]) / di
    sep = math.degrees(math.acos(float(np.clip(ua @ ui, -1.0, 1.0))))
    bis = ua + ui
    if sep < MIN_JUNCTION_SEPARATION or np.hypot(*bis) < 1e-9:
        raise PreprocessError(f"degenerate landmarks: junction rays {sep:.2f} deg apart")
    rot = math.radians(SEPTAL_ANGLE - math.degrees(math.atan2(bis[1], bis[0])))
    cr, sr = math.cos(rot), math.sin(rot)
    fwd = np.array([[cr, -sr], [sr, cr]])  # source y-up offset -> aligned y-up offset
    a_aligned = fwd @ ua
    mirror = np.diag([1.0, -1.0]) if a_aligned[1] < 0 else np.eye(2)
    scale = CROP_FACTOR * max(da, di) / SIZE
    # output y-up offset -> source y-up offset
    inv = fwd.T @ mirror * scale
    # convert to (row, col) with rows downward: (r, c) -> y-up (c, -r)
    flip = np.array([[0.0, -1.0], [1.0, 0.0]])  # (dr, dc) -> (dx, dy_up)
    m = np.linalg.inv(flip) @ inv @ flip
    out_c = np.array([CENTER[1], CENTER[0]])
    src_c = np.array([c[1], c[0]])
    return m, src_c - m @ out_c


def _warp(frame: np.ndarray, m: np.ndarray, offset: np.ndarray, size: int) -> np.ndarray:
    return ndimage.affine_transform(frame, m, offset=offset, output_shape=(size, size), order=1, mode="nearest")


def crop_align(raw: RawSlice) -> np.ndarray:
    """Centre, rotate, crop and resize every frame; returns [160, 160, t]."""
    m, off = alignment_transform(raw.landmarks, raw.frames.shape[1:])
    return np.stack([_warp(f, m, off, SIZE) for f in raw.frames], axis=-1)


def _tile_cdfs(u: np.ndarray, tiles: int, bins: int, clip_limit: float) -> tuple[np.ndarray, float]:
    """Clipped, redistributed per-tile CDFs sampled at the ``bins + 1`` bin edges."""
    th, tw = u.shape[0] // tiles, u.shape[1] // tiles
    area = float(th * tw)
    limit = max(clip_limit * area / bins, 1.0)
    # linear binning: each pixel splits its unit weight between the two nearest bin centres
    pos = np.clip(u * bins - 0.5, 0.0, bins - 1.0)
    lo = np.minimum(pos.astype(np.int64), bins - 2)
    wt = pos - lo

    def per_tile(a):
        return a.reshape(tiles, th, tiles, tw).transpose(0, 2, 1, 3).reshape(tiles * tiles, -1)

    lo, wt = per_tile(lo), per_tile(wt)
    offs = (np.arange(tiles * tiles) * bins)[:, None]
    n = tiles * tiles * bins
    hist = np.bincount((lo + offs).ravel(), (1.0 - wt).ravel(), minlength=n)
    hist += np.bincount((lo + 1 + offs).ravel(), wt.ravel(), minlength=n)
    hist = hist.reshape(tiles * tiles, bins)
    excess = np.maximum(hist - limit, 0.0).sum(axis=1, keepdims=True)
    hist = np.minimum(hist, limit) + excess / bins
    cdf = np.zeros((tiles * tiles, bins + 1))
    cdf[:, 1:] = np.cumsum(hist, axis=1)
    return cdf.reshape(tiles, tiles, bins + 1) / area, area


def clahe_normalize(image: np.ndarray, clip_limit: float = 2.0, tiles: int = 8, bins: int = 256) -> np.ndarray:
    """Contrast-limited adaptive histogram equalisation, output in [0, 1].

    Each tile's clipped histogram defines a piecewise-linear CDF; pixels are
    mapped through the CDFs of the four nearest tile centres and blended
    bilinearly. The clipped excess is spread evenly over all bins.
    """
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise PreprocessError("image contains non-finite values")
    lo, hi = image.min(), image.max()
    if hi == lo:
        return np.zeros_like(image)
    h, w = image.shape
    ph, pw = -h % tiles, -w % tiles
    u = np.pad((image - lo) / (hi - lo), ((0, ph), (0, pw)), mode="reflect")
    cdf, _ = _tile_cdfs(u, tiles, bins, clip_limit)
    th, tw = u.shape[0] // tiles, u.shape[1] // tiles

    pos = u[:h, :w] * bins
    k = np.minimum(pos.astype(np.int64), bins - 1)
    frac = pos - k

    def axis_weights(n, size):
        c = (np.arange(n) + 0.5) / size - 0.5
        i0 = np.clip(np.floor(c).astype(np.int64), 0, tiles - 1)
        i1 = np.minimum(i0 + 1, tiles - 1)
        a = np.clip(c - i0, 0.0, 1.0)
        return i0, i1, a

    r0, r1, ar = axis_weights(h, th)
    c0, c1, ac = axis_weights(w, tw)

    def mapped(ri, ci):
        t = cdf[ri[:, None], ci[None, :]]
        lo_v = np.take_along_axis(t, k[..., None], axis=-1)[..., 0]
        hi_v = np.take_along_axis(t, k[..., None] + 1, axis=-1)[..., 0]
        return lo_v + (hi_v - lo_v) * frac

    ar, ac = ar[:, None], ac[None, :]
    out = (1 - ar) * ((1 - ac) * mapped(r0, c0) + ac * mapped(r0, c1)) + ar * (
        (1 - ac) * mapped(r1, c0) + ac * mapped(r1, c1)
    )
    lo_o, hi_o = out.min(), out.max()
    if hi_o == lo_o:
        return np.zeros_like(out)
    return (out - lo_o) / (hi_o - lo_o)


def polar_grid(level: str, center=CENTER) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per segment, the (row, col) sample coordinates, each [80, 60]."""
    if level not in SEGMENTS_PER_LEVEL:
        raise PreprocessError(f"level invalid: {level!r}")
    n = SEGMENTS_PER_LEVEL[level]
    width = 360.0 / n
    radii = np.arange(1, RADIAL + 1, dtype=np.float64)[:, None]
    cx, cy = center[0], center[1]
    grids = []
    for k in range(n):
        start = ARC_START[level] + k * width
        theta = np.radians(start + (np.arange(ANGULAR) + 0.5) * width / ANGULAR)[None, :]
        grids.append((cy - radii * np.sin(theta), cx + radii * np.cos(theta)))
    return grids


def polar_resample(
    stack: np.ndarray, level: str, center=CENTER, subject_id: str = "", labels: Sequence[int] | None = None
) -> list[SegmentSequence]:
    """Cut an aligned [H, W, t] stack into AHA segments of shape [80, 60, t]."""
    grids = polar_grid(level, center)
    if labels is not None and len(labels) != len(grids):
        raise PreprocessError(f"{level} slice needs {len(grids)} labels, got {len(labels)}")
    t = stack.shape[-1]
    out = []
    for k, (rows, cols) in enumerate(grids):
        data = np.empty((RADIAL, ANGULAR, t), dtype=np.float32)
        for f in range(t):
            data[:, :, f] = ndimage.map_coordinates(stack[:, :, f], [rows, cols], order=1, mode="nearest")
        score = None if labels is None or labels[k] is None else int(labels[k])
        out.append(SegmentSequence(data, subject_id, FIRST_INDEX[level] + k, level, score))
    return out


def preprocess_slice(raw: RawSlice, subject_id: str = "", clahe: bool = True) -> list[SegmentSequence]:
    aligned = crop_align(raw)
    if clahe:
        aligned = np.stack([clahe_normalize(aligned[:, :, f]) for f in range(aligned.shape[-1])], axis=-1)
    return polar_resample(aligned, raw.level, subject_id=subject_id, labels=raw.labels)


def assemble_subject(subject_id: str, slices: Sequence[RawSlice], clahe: bool = True) -> SubjectStudy:
    """Basal, mid and apical slices of one subject to its 16 segments."""
    seen: dict[str, RawSlice] = {}
    for s in slices:
        if s.level in seen:
            raise PreprocessError(f"duplicate level {s.level!r} for subject {subject_id}")
        seen[s.level] = s
    missing = [lv for lv in LEVELS if lv not in seen]
    if missing:
        raise PreprocessError(f"missing level {', '.join(missing)} for subject {subject_id}")
    counts = {s.frames.shape[0] for s in slices}
    if len(counts) != 1:
        raise PreprocessError(f"frame count mismatch for subject {subject_id}: {sorted(counts)}")
    segments = [seg for lv in LEVELS for seg in preprocess_slice(seen[lv], subject_id, clahe)]
    return SubjectStudy(subject_id, segments)
