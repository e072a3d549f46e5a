"""Labelled synthetic polar segment cines with parametric wall motion.

Each segment is a bright myocardial band on a dark background. Over one
cardiac cycle the inner edge moves by ``A * w(t)`` rows toward the centre and
the band thickens by ``B * w(t)`` rows, where ``w`` is a raised cosine that
peaks at mid-cycle. The four classes differ only in (A, B).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ANGULAR, RADIAL, SegmentSequence, SubjectStudy, level_of

PAPER_CLASS_COUNTS = (794, 348, 207, 91)
BACKGROUND = 0.15
EDGE_SCALE = 0.5  # sigmoid scale in rows; 10-90% rise over ~2 rows

# class -> (contraction A, thickening B); akinetic A is drawn from [-0.5, 0.5]
CLASS_AMPLITUDES = {0: (8.0, 4.0), 1: (3.0, 1.5), 2: (0.0, 0.0), 3: (-5.0, 0.0)}


@dataclass
class MotionSpec:
    cls: int
    R0: float = 38.0
    W0: float = 12.0
    A: float | None = None
    B: float | None = None
    noise: float = 0.0
    gain: float = 1.0
    modulation: float = 0.1
    mod_phase: float = 0.0

    def __post_init__(self):
        if self.cls not in CLASS_AMPLITUDES:
            raise ValueError(f"class must be 0..3, got {self.cls}")
        a, b = CLASS_AMPLITUDES[self.cls]
        if self.A is None:
            self.A = a
        if self.B is None:
            self.B = b
        peak = 1.0 + abs(self.modulation)
        if self.R0 - abs(self.A) * peak < 0 or self.R0 + self.W0 + (abs(self.A) + self.B) * peak > RADIAL:
            raise ValueError(f"band leaves the radial range [0,{RADIAL}) for {self}")


def phase_waveform(t: int) -> np.ndarray:
    f = np.arange(t)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * f / t))


def band_edges(spec: MotionSpec, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Inner and outer band edge rows, each [t, 60]."""
    cols = np.arange(ANGULAR)
    m = 1.0 + spec.modulation * np.sin(2.0 * np.pi * cols / ANGULAR + spec.mod_phase)
    w = phase_waveform(t)[:, None]
    inner = spec.R0 - spec.A * w * m
    outer = inner + spec.W0 + spec.B * w * m
    return inner, outer


def render_segment(spec: MotionSpec, t: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Render a [80, 60, t] segment cine in [0, 1]."""
    if t < 2:
        raise ValueError(f"need at least 2 frames, got {t}")
    inner, outer = band_edges(spec, t)
    if inner.min() < 0 or outer.max() >= RADIAL:
        raise ValueError("band leaves the radial range")
    rows = np.arange(RADIAL, dtype=np.float64)[:, None, None]
    inner = inner.T[None]  # [1, 60, t]
    outer = outer.T[None]
    s = EDGE_SCALE
    band = 1.0 / (1.0 + np.exp(-(rows - inner) / s)) / (1.0 + np.exp(-(outer - rows) / s))
    img = BACKGROUND + (0.8 * spec.gain - BACKGROUND) * band
    if spec.noise > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class SynthConfig:
    subjects: int = 90
    frame_counts: tuple[int, ...] = (20, 25)
    frame_mix: tuple[float, ...] = (65, 25)
    class_prior: tuple[float, ...] = field(
        default_factory=lambda: tuple(c / sum(PAPER_CLASS_COUNTS) for c in PAPER_CLASS_COUNTS)
    )
    noise: float = 0.05
    seed: int = 0
    gain_range: tuple[float, float] = (0.85, 1.15)
    jitter: float = 0.15

    def __post_init__(self):
        if self.subjects < 1:
            raise ValueError("subject count must be positive")
        if len(self.frame_counts) != len(self.frame_mix) or min(self.frame_mix) < 0 or sum(self.frame_mix) <= 0:
            raise ValueError("frame_mix must give one non-negative weight per frame count")
        if min(self.frame_counts) < 2:
            raise ValueError("frame counts must be >= 2")
        prior = np.asarray(self.class_prior, dtype=np.float64)
        if prior.shape != (4,) or prior.min() < 0 or abs(prior.sum() - 1.0) > 1e-6:
            raise ValueError(f"class prior must be 4 non-negative values summing to 1, got {self.class_prior}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def frame_assignment(config: SynthConfig) -> list[int]:
    """Frame count per subject, in the configured proportion, seeded shuffle."""
    mix = np.asarray(config.frame_mix, dtype=np.float64)
    counts = np.floor(config.subjects * mix / mix.sum()).astype(int)
    remainder = config.subjects * mix / mix.sum() - counts
    for i in np.argsort(-remainder, kind="stable")[: config.subjects - counts.sum()]:
        counts[i] += 1
    frames = np.repeat(np.asarray(config.frame_counts), counts)
    np.random.default_rng([config.seed, 0xF]).shuffle(frames)
    return [int(f) for f in frames]


def subject_rng(config: SynthConfig, index: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, index])


def draw_labels(rng: np.random.Generator, prior, n: int) -> np.ndarray:
    return rng.choice(4, size=n, p=np.asarray(prior, dtype=np.float64))


def generate_subject(config: SynthConfig, index: int, t: int) -> SubjectStudy:
    rng = subject_rng(config, index)
    sid = f"S{index:03d}"
    labels = draw_labels(rng, config.class_prior, 16)
    gain = rng.uniform(*config.gain_range)
    segments = []
    for k, cls in enumerate(labels, start=1):
        cls = int(cls)
        a, b = CLASS_AMPLITUDES[cls]
        if cls == 2:
            a = rng.uniform(-0.5, 0.5)
        else:
            a *= 1.0 + rng.uniform(-config.jitter, config.jitter)
            b *= 1.0 + rng.uniform(-config.jitter, config.jitter)
        spec = MotionSpec(
            cls,
            R0=38.0 + rng.uniform(-2.0, 2.0),
            W0=12.0 + rng.uniform(-1.0, 1.0),
            A=a,
            B=b,
            noise=config.noise,
            gain=gain,
            mod_phase=rng.uniform(0.0, 2.0 * np.pi),
        )
        segments.append(SegmentSequence(render_segment(spec, t, rng), sid, k, level_of(k), cls))
    return SubjectStudy(sid, segments)


def generate_dataset(config: SynthConfig) -> list[SubjectStudy]:
    """Seed-deterministic synthetic cohort; subject i uses its own derived rng."""
    frames = frame_assignment(config)
    return [generate_subject(config, i, t) for i, t in enumerate(frames)]
