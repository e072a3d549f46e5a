"""Analytic Cartesian short-axis phantoms with known landmarks."""

from __future__ import annotations

import math

import numpy as np

from .preprocess import Landmarks, RawSlice


def rotate_point(p, center, degrees: float) -> tuple[float, float]:
    """Rotate (x, y) pixel coordinates counter-clockwise (y up) about ``center``."""
    a = math.radians(degrees)
    dx, dy = p[0] - center[0], -(p[1] - center[1])
    return (center[0] + math.cos(a) * dx - math.sin(a) * dy, center[1] - (math.sin(a) * dx + math.cos(a) * dy))


def beating_ring(
    shape=(192, 208),
    center=(104.0, 96.0),
    t: int = 20,
    radius: float = 22.0,
    thickness: float = 10.0,
    contraction: float = 4.0,
    rotation: float = 0.0,
    edge: float = 1.5,
) -> np.ndarray:
    """[t, H, W] ring whose inner radius shrinks by ``contraction`` at mid-cycle.

    The ring is brighter on one side so that rotation is observable.
    """
    h, w = shape
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    a = math.radians(rotation)
    dx, dy = xx - center[0], -(yy - center[1])
    u = math.cos(a) * dx + math.sin(a) * dy
    v = -math.sin(a) * dx + math.cos(a) * dy
    r = np.hypot(u, v)
    th = np.arctan2(v, u)
    frames = []
    for f in range(t):
        wave = 0.5 * (1 - math.cos(2 * math.pi * f / t))
        r0 = radius - contraction * wave
        r1 = radius + thickness + 0.5 * contraction * wave
        ring = 1 / (1 + np.exp(-(r - r0) / edge)) / (1 + np.exp(-(r1 - r) / edge))
        frames.append(0.1 + (0.6 + 0.15 * np.cos(th)) * ring)
    return np.stack(frames)


def ring_landmarks(center=(104.0, 96.0), distance: float = 34.0, separation: float = 120.0, rotation: float = 0.0) -> Landmarks:
    """Junctions placed symmetrically about the septal direction (180 deg)."""
    half = separation / 2
    base = [(center[0] + distance * math.cos(math.radians(180 - half)), center[1] - distance * math.sin(math.radians(180 - half))),
            (center[0] + distance * math.cos(math.radians(180 + half)), center[1] - distance * math.sin(math.radians(180 + half)))]
    ant, inf = (rotate_point(p, center, rotation) for p in base)
    return Landmarks(ant, inf, tuple(center))


def phantom_subject(t: int = 20, rotation: float = 0.0, labels: bool = True) -> list[RawSlice]:
    """Basal, mid and apical phantom slices sharing one geometry."""
    out = []
    for level, radius in (("basal", 24.0), ("mid", 22.0), ("apical", 18.0)):
        n = 4 if level == "apical" else 6
        frames = beating_ring(t=t, radius=radius, rotation=rotation)
        out.append(RawSlice(frames, level, ring_landmarks(rotation=rotation), 1.0, [0] * n if labels else None))
    return out
