"""Subject-batched training (baseline, then NL fine-tuning) and evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import SubjectStudy
from .functional import cross_entropy_loss
from .metrics import FoldPlan, MetricsReport, report_from_predictions
from .model import ModelConfig, ModelParams, build_model, forward, insert_nl_blocks, predict_scores
from .optim import OptimizerConfig, optimizer_step
from .tensor import NonFiniteError, no_grad

logger = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 60
    finetune_epochs: int = 30
    lr: float = 1e-3
    finetune_lr: float | None = None
    optimizer: str = "adam"
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        OptimizerConfig(self.optimizer, self.lr)


@dataclass
class HistoryRow:
    epoch: int
    phase: str
    loss: float
    holdout_acc: float | None


@dataclass
class History:
    rows: list[HistoryRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "phase", "loss", "holdout_acc"])
        for r in self.rows:
            w.writerow([r.epoch, r.phase, repr(r.loss), "" if r.holdout_acc is None else repr(r.holdout_acc)])
        return buf.getvalue()

    def phase(self, name: str) -> list[HistoryRow]:
        return [r for r in self.rows if r.phase == name]


def _check_labeled(studies: Sequence[SubjectStudy]) -> None:
    for st in studies:
        if st.labels is None:
            raise ValueError(f"subject {st.subject_id} has unlabeled segments")


def holdout_metrics(params: ModelParams, studies: Sequence[SubjectStudy]) -> tuple[float, float]:
    """(mean cross-entropy, segment accuracy) without recording a graph."""
    losses, correct, total = [], 0, 0
    with no_grad():
        for st in studies:
            logits = forward(params, st.batch())
            losses.append(float(cross_entropy_loss(logits, st.labels).data))
            correct += int((logits.data.argmax(axis=1) == st.labels).sum())
            total += 16
    return float(np.mean(losses)), correct / total


StepHook = Callable[[str, int, int, ModelParams, SubjectStudy], None]


def _run_phase(
    params: ModelParams,
    studies: Sequence[SubjectStudy],
    holdout: Sequence[SubjectStudy] | None,
    epochs: int,
    opt: OptimizerConfig,
    rng: np.random.Generator,
    phase: str,
    patience: int,
    history: History,
    on_step: StepHook | None,
) -> None:
    tensors = params.named_tensors()
    state: dict = {}
    best, stale = math.inf, 0
    for epoch in range(epochs):
        order = rng.permutation(len(studies))
        losses = []
        for step, i in enumerate(order):
            st = studies[i]
            if on_step is not None:
                on_step(phase, epoch, step, params, st)
            params.zero_grad()
            loss = cross_entropy_loss(forward(params, st.batch()), st.labels)
            value = float(loss.data)
            where = f"phase {phase}, epoch {epoch}, step {step} (subject {st.subject_id})"
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss in {where}")
            loss.backward()
            try:
                optimizer_step(tensors, None, state, opt)
            except NonFiniteError as e:
                raise DivergenceError(f"{e} in {where}") from e
            losses.append(value)
        acc = None
        hold_loss = None
        if holdout:
            hold_loss, acc = holdout_metrics(params, holdout)
        history.rows.append(HistoryRow(epoch, phase, float(np.mean(losses)), acc))
        logger.info("%s epoch %d loss %.4f holdout_acc %s", phase, epoch, np.mean(losses), acc)
        if hold_loss is not None and patience > 0:
            if hold_loss < best:
                best, stale = hold_loss, 0
            else:
                stale += 1
                if stale >= patience:
                    logger.info("%s early stop after epoch %d", phase, epoch)
                    break


def train(
    dataset: Sequence[SubjectStudy],
    config: TrainConfig,
    variant: str = "baseline",
    holdout: Sequence[SubjectStudy] | None = None,
    baseline: ModelParams | None = None,
    model_config: ModelConfig | None = None,
    on_step: StepHook | None = None,
) -> tuple[ModelParams, History]:
    """Train a baseline, then (for NL variants) insert NL blocks and fine-tune.

    Every optimisation step consumes the 16 segments of one subject. A given
    ``baseline`` skips phase one.
    """
    _check_labeled(dataset)
    if holdout:
        _check_labeled(holdout)
    rng = np.random.default_rng(config.seed)
    history = History()
    if baseline is None:
        mc = model_config or ModelConfig(seed=config.seed)
        if mc.variant != "baseline":
            raise ValueError("model_config must describe the baseline variant")
        params = build_model(mc)
        opt = OptimizerConfig(config.optimizer, config.lr)
        _run_phase(params, dataset, holdout, config.epochs, opt, rng, "baseline", config.patience, history, on_step)
    else:
        if baseline.config.variant != "baseline":
            raise ValueError("fine-tuning must start from a baseline model")
        params = baseline
    if variant == "baseline":
        return params, history
    params = insert_nl_blocks(params, variant)
    opt = OptimizerConfig(config.optimizer, config.finetune_lr or config.lr)
    _run_phase(params, dataset, holdout, config.finetune_epochs, opt, rng, "finetune", config.patience, history, on_step)
    return params, history


def predict_dataset(params: ModelParams, studies: Sequence[SubjectStudy]) -> dict[str, np.ndarray]:
    return {st.subject_id: predict_scores(params, st)[0] for st in studies}


def evaluate(
    params: ModelParams | Sequence[ModelParams],
    dataset: Sequence[SubjectStudy],
    folds: FoldPlan | None = None,
) -> MetricsReport:
    """Score each subject with the fold model that excluded it; pool predictions.

    With a single model and no fold plan every subject is scored by that model.
    """
    models = [params] if isinstance(params, ModelParams) else list(params)
    truth, pred, fold_of = {}, {}, {}
    for st in dataset:
        if st.labels is None:
            raise ValueError(f"subject {st.subject_id} has no labels to evaluate against")
        if folds is None:
            if len(models) != 1:
                raise ValueError("several models need a fold plan")
            k = 0
        else:
            if len(models) != folds.k:
                raise ValueError(f"{len(models)} models for {folds.k} folds")
            k = folds.fold_of(st.subject_id)
        truth[st.subject_id] = st.labels
        pred[st.subject_id] = predict_scores(models[k], st)[0]
        fold_of[st.subject_id] = k
    return report_from_predictions(truth, pred, fold_of)
