"""Scoring metrics, subject-level folds, and the evaluation report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DegenerateError(ValueError):
    pass


def msi(scores: Sequence[int]) -> float:
    """Motion score index: mean of one subject's 16 segment scores (0-3 scale)."""
    scores = np.asarray(scores)
    if scores.size != 16:
        raise ValueError(f"MSI needs exactly 16 scores, got {scores.size}")
    return float(scores.sum()) / 16.0


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateError("degenerate: zero variance input")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def binary_collapse(scores) -> np.ndarray:
    """Normal (0) stays 0; any abnormal score becomes 1."""
    return (np.asarray(scores) >= 1).astype(np.int64)


def confusion(truth, pred, n: int) -> np.ndarray:
    """Rows are truth, columns predictions."""
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return m


def accuracy_from_confusion(m: np.ndarray) -> float:
    return float(np.trace(m)) / float(m.sum())


def kappa_from_confusion(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=np.float64)
    n = m.sum()
    p_o = np.trace(m) / n
    p_e = float(m.sum(axis=1) @ m.sum(axis=0)) / (n * n)
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def cohen_kappa(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("kappa needs two equal-length non-empty label sequences")
    return kappa_from_confusion(confusion(truth, pred, 2))


@dataclass
class FoldPlan:
    folds: list[list[str]]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def test(self, i: int) -> list[str]:
        return list(self.folds[i])

    def train(self, i: int) -> list[str]:
        return [s for j, f in enumerate(self.folds) if j != i for s in f]

    def fold_of(self, subject_id: str) -> int:
        for i, f in enumerate(self.folds):
            if subject_id in f:
                return i
        raise KeyError(f"subject {subject_id!r} is in no test fold")

    def to_text(self) -> str:
        lines = [f"# seed={self.seed}"]
        lines += [f"{i}\t{sid}" for i, f in enumerate(self.folds) for sid in f]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FoldPlan":
        seed = 0
        folds: dict[int, list[str]] = {}
        for line in text.splitlines():
            if line.startswith("# seed="):
                seed = int(line.split("=", 1)[1])
            elif line.strip() and not line.startswith("#"):
                i, sid = line.split("\t")
                folds.setdefault(int(i), []).append(sid)
        return cls([folds[i] for i in sorted(folds)], seed)


def make_folds(subject_ids: Sequence[str], k: int = 3, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then round-robin assignment of whole subjects to k folds."""
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate subject ids")
    if len(ids) < k:
        raise ValueError(f"need at least {k} subjects for {k} folds, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return FoldPlan([shuffled[i::k] for i in range(k)], seed)


REPORT_KEYS = ("acc_ms", "rho_msi", "acc_ad", "kappa_ad", "n_subjects", "n_segments")


@dataclass
class MetricsReport:
    acc_ms: float
    rho_msi: float | None
    acc_ad: float
    kappa_ad: float
    confusion_4x4: np.ndarray
    confusion_2x2: np.ndarray
    n_subjects: int
    n_segments: int
    per_fold: list[dict] = field(default_factory=list)
    subject_msi: dict[str, tuple[float, float]] = field(default_factory=dict)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    def to_kv(self) -> str:
        out = []
        for k, v in self.summary().items():
            if v is None:
                v = "undefined"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{k}={v}")
        return "\n".join(out) + "\n"

    def to_table(self, breakdown: str = "pooled") -> str:
        rho = "undefined" if self.rho_msi is None else f"{self.rho_msi:.4f}"
        lines = [
            "metric      value",
            f"acc_ms      {self.acc_ms:.4f}",
            f"rho_msi     {rho}",
            f"acc_ad      {self.acc_ad:.4f}",
            f"kappa_ad    {self.kappa_ad:.4f}",
            f"subjects    {self.n_subjects}",
            f"segments    {self.n_segments}",
            "",
        ]
        if breakdown == "per-fold":
            lines.append("per-fold breakdown")
            lines.append("fold  subjects  acc_ms  rho_msi  acc_ad  kappa_ad")
            for f in self.per_fold:
                r = "undef" if f["rho_msi"] is None else f"{f['rho_msi']:.4f}"
                lines.append(
                    f"{f['fold']:<5} {f['n_subjects']:<9} {f['acc_ms']:.4f}  {r:<7}  {f['acc_ad']:.4f}  {f['kappa_ad']:.4f}"
                )
        else:
            lines.append("pooled confusion (rows=truth, cols=predicted)")
            for i, row in enumerate(self.confusion_4x4):
                lines.append(f"  {i}: " + " ".join(f"{v:5d}" for v in row))
            lines.append("binary confusion (normal/abnormal)")
            for i, row in enumerate(self.confusion_2x2):
                lines.append(f"  {i}: " + " ".join(f"{v:5d}" for v in row))
        return "\n".join(lines) + "\n"


def _safe_pearson(x, y) -> float | None:
    try:
        return pearson(x, y)
    except DegenerateError:
        return None


def report_from_predictions(
    truth: dict[str, np.ndarray],
    pred: dict[str, np.ndarray],
    fold_of: dict[str, int] | None = None,
) -> MetricsReport:
    """Pool per-subject 16-score vectors into one report (plus per-fold rows)."""
    sids = list(truth)
    t = np.concatenate([truth[s] for s in sids])
    p = np.concatenate([pred[s] for s in sids])
    c4 = confusion(t, p, 4)
    c2 = confusion(binary_collapse(t), binary_collapse(p), 2)
    rho = _safe_pearson([msi(pred[s]) for s in sids], [msi(truth[s]) for s in sids])
    per_fold = []
    if fold_of is not None:
        for k in sorted(set(fold_of[s] for s in sids)):
            sub = [s for s in sids if fold_of[s] == k]
            r = report_from_predictions({s: truth[s] for s in sub}, {s: pred[s] for s in sub})
            per_fold.append({"fold": k, "n_subjects": len(sub), **{m: getattr(r, m) for m in REPORT_KEYS[:4]}})
    return MetricsReport(
        acc_ms=accuracy_from_confusion(c4),
        rho_msi=rho,
        acc_ad=accuracy_from_confusion(c2),
        kappa_ad=kappa_from_confusion(c2),
        confusion_4x4=c4,
        confusion_2x2=c2,
        n_subjects=len(sids),
        n_segments=int(t.size),
        per_fold=per_fold,
        subject_msi={s: (msi(pred[s]), msi(truth[s])) for s in sids},
    )
