"""Segment/subject containers and the line-oriented dataset manifest."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cmot

LEVELS = ("basal", "mid", "apical")
SEGMENTS_PER_LEVEL = {"basal": 6, "mid": 6, "apical": 4}
FIRST_INDEX = {"basal": 1, "mid": 7, "apical": 13}
RADIAL, ANGULAR = 80, 60


def level_of(segment_index: int) -> str:
    if not 1 <= segment_index <= 16:
        raise ValueError(f"segment index must be 1..16, got {segment_index}")
    return "basal" if segment_index <= 6 else "mid" if segment_index <= 12 else "apical"


@dataclass
class SegmentSequence:
    data: np.ndarray  # [80, 60, t]
    subject_id: str
    segment_index: int
    level: str
    score: int | None = None

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[:2] != (RADIAL, ANGULAR):
            raise ValueError(f"segment data must be [{RADIAL},{ANGULAR},t], got {self.data.shape}")
        if self.level not in LEVELS:
            raise ValueError(f"invalid level {self.level!r}")
        if self.score is not None and self.score not in (0, 1, 2, 3):
            raise ValueError(f"score must be in 0..3, got {self.score}")

    @property
    def frame_count(self) -> int:
        return self.data.shape[2]


@dataclass
class SubjectStudy:
    subject_id: str
    segments: list[SegmentSequence]

    def __post_init__(self):
        self.segments = sorted(self.segments, key=lambda s: s.segment_index)
        idx = [s.segment_index for s in self.segments]
        if idx != list(range(1, 17)):
            raise ValueError(f"subject {self.subject_id}: need segments 1..16 exactly once, got {idx}")
        counts = {s.frame_count for s in self.segments}
        if len(counts) != 1:
            raise ValueError(f"subject {self.subject_id}: frame count mismatch {sorted(counts)}")

    @property
    def frame_count(self) -> int:
        return self.segments[0].frame_count

    @property
    def labels(self) -> np.ndarray | None:
        if any(s.score is None for s in self.segments):
            return None
        return np.array([s.score for s in self.segments], dtype=np.int64)

    def batch(self) -> np.ndarray:
        return np.stack([s.data for s in self.segments])


@dataclass
class ManifestEntry:
    subject_id: str
    segment_index: int
    level: str
    frame_count: int
    label: int | None
    path: str


MANIFEST_HEADER = "# subject_id\tsegment_index\tlevel\tframe_count\tlabel\tpath"


def format_entry(e: ManifestEntry) -> str:
    label = "-" if e.label is None else str(e.label)
    return f"{e.subject_id}\t{e.segment_index}\t{e.level}\t{e.frame_count}\t{label}\t{e.path}"


def parse_manifest(text: str) -> list[ManifestEntry]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 6:
            raise ValueError(f"manifest line {lineno}: expected 6 fields, got {len(parts)}")
        sid, idx, level, frames, label, path = parts
        if label != "-" and label not in ("0", "1", "2", "3"):
            raise ValueError(f"manifest line {lineno}: bad label {label!r}")
        if level not in LEVELS:
            raise ValueError(f"manifest line {lineno}: bad level {level!r}")
        entries.append(ManifestEntry(sid, int(idx), level, int(frames), None if label == "-" else int(label), path))
    return entries


def write_dataset(studies: list[SubjectStudy], out_dir) -> Path:
    """Write one CMOT1 file per segment plus ``manifest.tsv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER]
    for st in studies:
        for s in st.segments:
            rel = f"tensors/{st.subject_id}_seg{s.segment_index:02d}.cmot"
            cmot.save(out / rel, s.data)
            lines.append(format_entry(ManifestEntry(st.subject_id, s.segment_index, s.level, s.frame_count, s.score, rel)))
    manifest = out / "manifest.tsv"
    cmot.atomic_write(manifest, ("\n".join(lines) + "\n").encode())
    return manifest


def load_dataset(manifest_path) -> list[SubjectStudy]:
    """Read a manifest and its tensors, grouped into subjects in first-seen order."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.tsv"
    entries = parse_manifest(manifest_path.read_text())
    base = manifest_path.parent
    grouped: dict[str, list[SegmentSequence]] = {}
    for e in entries:
        path = Path(e.path) if os.path.isabs(e.path) else base / e.path
        if not path.exists():
            raise FileNotFoundError(f"tensor file not found: {path}")
        arr = cmot.load(path)
        if arr.shape[-1] != e.frame_count:
            raise ValueError(f"{path}: manifest says {e.frame_count} frames, tensor has {arr.shape[-1]}")
        grouped.setdefault(e.subject_id, []).append(SegmentSequence(arr, e.subject_id, e.segment_index, e.level, e.label))
    return [SubjectStudy(sid, segs) for sid, segs in grouped.items()]
