"""Raw Cartesian inputs: PGM frame stacks, landmark files, the raw manifest.

Raw manifest lines (tab or whitespace separated, ``#`` comments)::

    subject_id  level  frames_dir  landmarks_file  pixel_spacing  labels

``labels`` is a comma list with one score per segment of that level, or
``-``. Frames are the ``*.pgm`` files of ``frames_dir`` in name order. The
landmark file holds ``anterior_junction=x,y``, ``inferior_junction=x,y`` and
``cavity_center=x,y`` lines in frame-0 pixel coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import LEVELS, SEGMENTS_PER_LEVEL
from .preprocess import Landmarks, RawSlice

LANDMARK_KEYS = ("anterior_junction", "inferior_junction", "cavity_center")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode not in ("L", "I", "I;16", "I;16B"):
            raise ValueError(f"{path}: not a grayscale PGM image")
        return np.asarray(im, dtype=np.float64)


def write_pgm(path, image: np.ndarray, bits: int = 8) -> None:
    """Quantise an image in [0, 1] to an 8- or 16-bit binary PGM."""
    top = 255 if bits == 8 else 65535
    q = np.round(np.clip(image, 0.0, 1.0) * top)
    Image.fromarray(q.astype(np.uint8 if bits == 8 else np.uint16)).save(path, format="PPM")


def read_landmarks(path) -> Landmarks:
    vals = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        x, y = (float(v) for v in value.split(","))
        vals[key.strip()] = (x, y)
    missing = [k for k in LANDMARK_KEYS if k not in vals]
    if missing:
        raise ValueError(f"{path}: missing landmark(s) {', '.join(missing)}")
    return Landmarks(*(vals[k] for k in LANDMARK_KEYS))


def write_landmarks(path, lm: Landmarks) -> None:
    lines = [f"{k}={x!r},{y!r}" for k, (x, y) in zip(LANDMARK_KEYS, (lm.anterior_junction, lm.inferior_junction, lm.cavity_center))]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class RawEntry:
    subject_id: str
    level: str
    frames_dir: Path
    landmarks: Path
    pixel_spacing: float
    labels: list[int] | None


def parse_raw_manifest(path) -> list[RawEntry]:
    path = Path(path)
    base = path.parent
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        sid, level, frames, lms, spacing, labels = parts
        if level not in LEVELS:
            raise ValueError(f"{path}:{lineno}: bad level {level!r}")
        lab = None
        if labels != "-":
            lab = [int(v) for v in labels.split(",")]
            if len(lab) != SEGMENTS_PER_LEVEL[level] or any(v not in (0, 1, 2, 3) for v in lab):
                raise ValueError(f"{path}:{lineno}: {level} needs {SEGMENTS_PER_LEVEL[level]} labels in 0..3")
        out.append(RawEntry(sid, level, base / frames, base / lms, float(spacing), lab))
    return out


def load_raw_slice(entry: RawEntry) -> RawSlice:
    files = sorted(entry.frames_dir.glob("*.pgm"))
    if not files:
        raise FileNotFoundError(f"no PGM frames in {entry.frames_dir}")
    if not entry.landmarks.exists():
        raise FileNotFoundError(f"landmark file not found: {entry.landmarks}")
    frames = np.stack([read_pgm(f) for f in files])
    return RawSlice(frames, entry.level, read_landmarks(entry.landmarks), entry.pixel_spacing, entry.labels)


def write_raw_subject(root, subject_id: str, slices, bits: int = 8) -> list[str]:
    """Write slices as PGM stacks plus landmark files under ``root``; returns manifest lines.

    Frames are min-max scaled per slice before quantisation.
    """
    root = Path(root)
    lines = []
    for s in slices:
        rel = Path(subject_id) / s.level
        (root / rel).mkdir(parents=True, exist_ok=True)
        lo, hi = float(s.frames.min()), float(s.frames.max())
        scale = (hi - lo) or 1.0
        for i, f in enumerate(s.frames):
            write_pgm(root / rel / f"frame{i:03d}.pgm", (f - lo) / scale, bits)
        write_landmarks(root / rel / "landmarks.txt", s.landmarks)
        labels = "-" if s.labels is None else ",".join(str(int(v)) for v in s.labels)
        lines.append(f"{subject_id}\t{s.level}\t{rel}\t{rel / 'landmarks.txt'}\t{s.pixel_spacing!r}\t{labels}")
    return lines
