"""Command-line entry point: synth, preprocess, train, eval, gradcheck, predict.

Exit codes: 0 success, 1 partial data failure, 2 usage/config error,
3 numerical divergence, 4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import cmot
from .config import ConfigError, RunConfig, schema_text
from .data import SegmentSequence, SubjectStudy, level_of, load_dataset, write_dataset
from .metrics import FoldPlan, make_folds, msi
from .model import VARIANTS, CheckpointError, load_checkpoint, predict_scores, save_checkpoint
from .train import DivergenceError, evaluate, holdout_metrics, train

log = logging.getLogger("cardiac_mos")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def workers() -> int:
    try:
        return max(1, int(os.environ.get("CMOS_THREADS", "1")))
    except ValueError:
        return 1


def _write_text(path: Path, text: str) -> None:
    cmot.atomic_write(path, text.encode())


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "subjects", None) is not None:
        overrides["subjects"] = str(args.subjects)
    return RunConfig.load(args.config, overrides)


# synth


def cmd_synth(args) -> int:
    from .synthdata import generate_dataset

    cfg = _load_config(args)
    studies = generate_dataset(cfg.synth())
    manifest = write_dataset(studies, args.out)
    hist = Counter(int(s.score) for st in studies for s in st.segments)
    print(f"wrote {len(studies)} subjects, {sum(hist.values())} segments -> {manifest}")
    print("class histogram: " + " ".join(f"{k}:{hist.get(k, 0)}" for k in range(4)))
    return EXIT_OK


# preprocess


def _preprocess_subject(item):
    from .preprocess import assemble_subject
    from .rawio import load_raw_slice

    sid, entries, clahe = item
    slices = [load_raw_slice(e) for e in entries]
    return assemble_subject(sid, slices, clahe=clahe)


def cmd_preprocess(args) -> int:
    from .rawio import parse_raw_manifest

    entries = parse_raw_manifest(args.manifest_in)
    grouped: dict[str, list] = {}
    for e in entries:
        grouped.setdefault(e.subject_id, []).append(e)
    items = [(sid, es, not args.no_clahe) for sid, es in grouped.items()]
    studies, failed = [], []

    def collect(sid, fut_or_fn):
        try:
            studies.append(fut_or_fn())
        except (OSError, ValueError) as e:
            failed.append(sid)
            print(f"subject {sid} skipped: {e}", file=sys.stderr)

    n = workers()
    if n > 1 and len(items) > 1:
        with ProcessPoolExecutor(n) as pool:
            futs = [(it[0], pool.submit(_preprocess_subject, it)) for it in items]
            for sid, fut in futs:
                collect(sid, fut.result)
    else:
        for it in items:
            collect(it[0], lambda it=it: _preprocess_subject(it))
    if studies:
        manifest = write_dataset(studies, args.out)
        print(f"wrote {len(studies)} subjects, {16 * len(studies)} segments -> {manifest}")
    if failed:
        print(f"{len(failed)} subject(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# train


def _fold_plan(studies, cfg: RunConfig, args) -> FoldPlan | None:
    if args.no_cv:
        return None
    return make_folds([s.subject_id for s in studies], cfg["folds"], cfg["seed"])


def _train_fold(job):
    from .plotting import plot_history

    fold, train_set, test_set, tcfg, mcfg, variant, baseline_path, out = job
    baseline = load_checkpoint(baseline_path, "baseline") if baseline_path else None
    params, history = train(train_set, tcfg, variant, holdout=test_set or None, baseline=baseline, model_config=mcfg)
    tag = "model" if fold is None else f"fold{fold}"
    save_checkpoint(params, out / f"{tag}.ckpt")
    _write_text(out / f"history_{tag}.csv", history.to_csv())
    if history.rows:
        plot_history(history, out / f"history_{tag}.png")
    _, train_acc = holdout_metrics(params, train_set)
    return tag, train_acc, history


def _baseline_for(args, tag: str) -> str | None:
    if not args.from_baseline:
        return None
    p = Path(args.from_baseline)
    if p.is_dir():
        p = p / f"{tag}.ckpt"
    if not p.exists():
        raise UsageError(f"baseline checkpoint not found: {p}")
    return str(p)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    studies = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan = _fold_plan(studies, cfg, args)
    tcfg, mcfg = cfg.train(), cfg.model()
    by_id = {s.subject_id: s for s in studies}
    jobs = []
    if plan is None:
        jobs.append((None, studies, [], tcfg, mcfg, args.variant, _baseline_for(args, "model"), out))
    else:
        _write_text(out / "folds.tsv", plan.to_text())
        for k in range(plan.k):
            jobs.append(
                (k, [by_id[s] for s in plan.train(k)], [by_id[s] for s in plan.test(k)], tcfg, mcfg,
                 args.variant, _baseline_for(args, f"fold{k}"), out)
            )
    n = min(workers(), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(_train_fold, jobs))
    else:
        results = [_train_fold(j) for j in jobs]
    merged = ["fold,epoch,phase,loss,holdout_acc"]
    for tag, train_acc, history in results:
        print(f"{tag}: final train accuracy {train_acc:.4f}")
        merged += [f"{tag},{line}" for line in history.to_csv().splitlines()[1:]]
    _write_text(out / "history.csv", "\n".join(merged) + "\n")
    return EXIT_OK


# eval


def _checkpoint_paths(spec: list[str]) -> list[Path]:
    paths: list[Path] = []
    for s in spec:
        p = Path(s)
        if p.is_dir():
            found = sorted(p.glob("fold*.ckpt")) or sorted(p.glob("*.ckpt"))
            paths.extend(found)
        else:
            paths.append(p)
    for p in paths:
        if not p.exists():
            raise UsageError(f"checkpoint not found: {p}")
    if not paths:
        raise UsageError("no checkpoints given")
    return paths


def cmd_eval(args) -> int:
    from .plotting import plot_confusion, plot_msi

    studies = load_dataset(args.data)
    models = [load_checkpoint(p) for p in _checkpoint_paths(args.checkpoints)]
    plan = None
    if args.folds:
        plan = FoldPlan.from_text(Path(args.folds).read_text())
        if plan.k != len(models):
            raise UsageError(f"fold mismatch: {plan.k} folds but {len(models)} checkpoints")
        known = {s for f in plan.folds for s in f}
        missing = [s.subject_id for s in studies if s.subject_id not in known]
        if missing:
            raise UsageError(f"fold mismatch: subjects in no test fold: {', '.join(missing[:5])}")
    elif len(models) != 1:
        raise UsageError("fold mismatch: several checkpoints need --folds")
    report = evaluate(models if plan else models[0], studies, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = report.to_table(args.breakdown)
    _write_text(out / "report.txt", table)
    _write_text(out / "metrics.kv", report.to_kv())
    plot_confusion(report.confusion_4x4, out / "confusion.png")
    if report.subject_msi:
        pred, true = zip(*report.subject_msi.values())
        plot_msi(pred, true, out / "msi.png", report.rho_msi)
    print(table, end="")
    return EXIT_OK


# gradcheck

GRADCHECK_SCOPES = ("conv2d", "maxpool", "dense", "softmax", "cross-entropy", "conv-ki", "nl-seg", "nl-sub", "model")


def cmd_gradcheck(args) -> int:
    from .checks import run_gradchecks

    scopes = GRADCHECK_SCOPES if args.scope == "all" else (args.scope,)
    rows = run_gradchecks(scopes, seed=args.seed or 0, tol=args.tol)
    print(f"{'check':<28} {'max rel err':>12}  status")
    failed = []
    for r in rows:
        ok = r.error <= args.tol
        print(f"{r.name:<28} {r.error:12.3e}  {'pass' if ok else 'FAIL'}")
        if not ok:
            failed.append(r)
    for r in failed:
        print(f"gradcheck failed: {r.name} argument {r.argument} coordinate {r.index} "
              f"(analytic {r.analytic:.6e}, numeric {r.numeric:.6e})", file=sys.stderr)
    return EXIT_GRADCHECK if failed else EXIT_OK


# predict


def _segment_files(spec: list[str]) -> list[Path]:
    if len(spec) == 1 and Path(spec[0]).is_dir():
        return sorted(Path(spec[0]).glob("*.cmot"))
    return [Path(s) for s in spec]


def cmd_predict(args) -> int:
    params = load_checkpoint(args.checkpoint)
    files = _segment_files(args.subject_tensors)
    if len(files) != 16:
        raise UsageError(f"need 16 segment tensors, got {len(files)}")
    segs = []
    for k, f in enumerate(files, start=1):
        if not f.exists():
            raise UsageError(f"tensor file not found: {f}")
        segs.append(SegmentSequence(cmot.load(f).astype(np.float32), "subject", k, level_of(k)))
    study = SubjectStudy("subject", segs)
    scores, probs = predict_scores(params, study)
    for k, (s, p) in enumerate(zip(scores, probs), start=1):
        print(f"segment {k:2d} score {int(s)} probs " + " ".join(f"{v:.4f}" for v in p))
    print(f"MSI {msi(scores):.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cardiac-mos", description="Per-segment cardiac wall-motion scoring.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="key=value run configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth", help="generate a synthetic polar dataset")
    config_args(s)
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="PGM slices + landmarks -> polar segments")
    s.add_argument("--manifest-in", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-clahe", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a variant, per fold or on all data")
    config_args(s)
    s.add_argument("--data", required=True)
    s.add_argument("--variant", default="baseline", choices=sorted(VARIANTS))
    s.add_argument("--out", required=True)
    s.add_argument("--no-cv", action="store_true", help="train one model on every subject")
    s.add_argument("--from-baseline", help="baseline checkpoint file or directory of fold checkpoints")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score subjects and write the metrics report")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoints", required=True, nargs="+")
    s.add_argument("--folds", help="folds.tsv written by train")
    s.add_argument("--out", required=True)
    s.add_argument("--breakdown", choices=("pooled", "per-fold"), default="pooled")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    s.add_argument("--scope", default="all", choices=("all",) + GRADCHECK_SCOPES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("predict", help="score the 16 segments of one subject")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--subject-tensors", required=True, nargs="+", help="16 CMOT1 files in AHA order, or a directory")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("config-schema", help="print every config key with its default")
    s.set_defaults(func=lambda a: print(schema_text(), end="") or EXIT_OK)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
