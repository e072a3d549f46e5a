import os
import subprocess
import sys

import numpy as np
import pytest

from cardiac_mos import cli, cmot
from cardiac_mos import train as train_mod
from cardiac_mos.data import load_dataset
from cardiac_mos.metrics import REPORT_KEYS
from cardiac_mos.preprocess import Landmarks, RawSlice
from cardiac_mos.phantoms import phantom_subject
from cardiac_mos.rawio import write_raw_subject

LIGHT = "n_o=4\nchannels=4,8,8,8\nfc=16\nepochs=2\nfinetune_epochs=1\npatience=0\nseed=3\n"


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "light.cfg").write_text(LIGHT)
    assert cli.main(["synth", "--out", str(root / "data"), "--subjects", "6", "--seed", "1"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    out = workdir / "run"
    assert cli.main(["train", "--data", str(workdir / "data"), "--config", str(workdir / "light.cfg"), "--out", str(out)]) == 0
    return out


def manifest_lines(path):
    return [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]


# synth


def test_synth_subject_count_and_histogram(tmp_path, capsys):
    code, out, _ = run(["synth", "--out", str(tmp_path), "--subjects", "3"], capsys)
    assert code == 0
    assert len(manifest_lines(tmp_path / "manifest.tsv")) == 48
    assert "class histogram: 0:" in out
    assert len(load_dataset(tmp_path / "manifest.tsv")) == 3


def test_synth_default_config_is_paper_sized():
    from cardiac_mos.config import RunConfig

    assert RunConfig.parse("").synth().subjects * 16 == 1440


def test_synth_bad_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("subjects=2\nbogus_key=1\n")
    code, _, err = run(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "bogus_key" in err
    code, _, err = run(["synth", "--set", "noise=abc", "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "noise" in err


def test_synth_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["synth", "--out", str(tmp_path / name), "--subjects", "2", "--seed", "9"], capsys)[0] == 0
    for f in sorted((tmp_path / "a" / "tensors").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "tensors" / f.name).read_bytes()


# preprocess


def _raw_dataset(root, subjects):
    lines = []
    for sid, slices in subjects.items():
        lines += write_raw_subject(root, sid, slices)
    (root / "raw.tsv").write_text("\n".join(lines) + "\n")
    return root / "raw.tsv"


def test_preprocess_phantom_subject(tmp_path, capsys):
    manifest = _raw_dataset(tmp_path, {"P01": phantom_subject(t=4)})
    code, out, _ = run(["preprocess", "--manifest-in", str(manifest), "--out", str(tmp_path / "out")], capsys)
    assert code == 0
    assert len(list((tmp_path / "out" / "tensors").glob("*.cmot"))) == 16
    studies = load_dataset(tmp_path / "out")
    assert studies[0].batch().shape == (16, 80, 60, 4) and studies[0].labels.tolist() == [0] * 16


def test_preprocess_missing_landmarks_skips_subject(tmp_path, capsys):
    manifest = _raw_dataset(tmp_path, {"P01": phantom_subject(t=3), "P02": phantom_subject(t=3)})
    (tmp_path / "P02" / "mid" / "landmarks.txt").unlink()
    code, _, err = run(["preprocess", "--manifest-in", str(manifest), "--out", str(tmp_path / "out")], capsys)
    assert code == 1 and "P02" in err and "landmark" in err
    assert [s.subject_id for s in load_dataset(tmp_path / "out")] == ["P01"]


def test_preprocess_annulus_phantom_constant_rows(tmp_path, capsys):
    yy, xx = np.mgrid[:180, :180].astype(np.float64)
    r = np.hypot(xx - 90, yy - 90)
    ring = 1 / (1 + np.exp(-(r - 24) / 1.5)) / (1 + np.exp(-(36 - r) / 1.5))
    frames = np.stack([0.1 + 0.8 * ring] * 3)
    lm = Landmarks((90 - 17.0, 90 - 29.4), (90 - 17.0, 90 + 29.4), (90.0, 90.0))
    slices = [RawSlice(frames, lv, lm, 1.0, None) for lv in ("basal", "mid", "apical")]
    manifest = _raw_dataset(tmp_path, {"A01": slices})
    assert run(["preprocess", "--manifest-in", str(manifest), "--out", str(tmp_path / "out"), "--no-clahe"], capsys)[0] == 0
    for seg in load_dataset(tmp_path / "out")[0].segments:
        d = seg.data[:, :, 0]
        assert np.abs(d - d.mean(axis=1, keepdims=True)).max() <= 0.02 * (d.max() - d.min())


# train


def test_train_writes_fold_checkpoints_and_history(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"fold0.ckpt", "fold1.ckpt", "fold2.ckpt", "folds.tsv", "history.csv", "history_fold0.csv", "history_fold0.png"} <= names
    assert trained.joinpath("history.csv").read_text().splitlines()[0] == "fold,epoch,phase,loss,holdout_acc"


def test_train_no_cv_prints_final_accuracy(workdir, tmp_path, capsys):
    code, out, _ = run(["train", "--data", str(workdir / "data"), "--config", str(workdir / "light.cfg"), "--no-cv", "--out", str(tmp_path)], capsys)
    assert code == 0 and "model: final train accuracy" in out
    assert (tmp_path / "model.ckpt").exists()


def test_train_nl_variant_runs_baseline_phase_first(workdir, tmp_path, capsys):
    args = ["train", "--data", str(workdir / "data"), "--config", str(workdir / "light.cfg"), "--no-cv", "--variant", "sub-NL-1", "--out", str(tmp_path)]
    assert run(args, capsys)[0] == 0
    phases = [ln.split(",")[2] for ln in (tmp_path / "history.csv").read_text().splitlines()[1:]]
    assert phases == ["baseline", "baseline", "finetune"]


def test_train_from_baseline_directory(workdir, trained, tmp_path, capsys):
    args = ["train", "--data", str(workdir / "data"), "--config", str(workdir / "light.cfg"), "--variant", "seg-NL-1",
            "--from-baseline", str(trained), "--out", str(tmp_path)]
    assert run(args, capsys)[0] == 0
    phases = {ln.split(",")[2] for ln in (tmp_path / "history.csv").read_text().splitlines()[1:]}
    assert phases == {"finetune"}


def test_train_same_seed_identical_history(workdir, tmp_path, capsys):
    for name in ("a", "b"):
        args = ["train", "--data", str(workdir / "data"), "--config", str(workdir / "light.cfg"), "--no-cv", "--seed", "5", "--out", str(tmp_path / name)]
        assert run(args, capsys)[0] == 0
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


def test_train_nan_data_exits_3(workdir, tmp_path, capsys):
    studies = load_dataset(workdir / "data")
    studies[0].segments[0].data[0, 0, 0] = np.nan
    from cardiac_mos.data import write_dataset

    write_dataset(studies[:2], tmp_path / "nan")
    code, _, err = run(["train", "--data", str(tmp_path / "nan"), "--config", str(workdir / "light.cfg"), "--no-cv", "--out", str(tmp_path / "o")], capsys)
    assert code == 3 and "step" in err


# eval


def _eval(workdir, trained, out, capsys, *extra):
    ckpts = [str(trained / f"fold{k}.ckpt") for k in range(3)]
    return run(["eval", "--data", str(workdir / "data"), "--checkpoints", *ckpts, "--folds", str(trained / "folds.tsv"), "--out", str(out), *extra], capsys)


def test_eval_report_files_and_keys(workdir, trained, tmp_path, capsys):
    code, out, _ = _eval(workdir, trained, tmp_path, capsys)
    assert code == 0 and "acc_ms" in out
    keys = [ln.split("=")[0] for ln in (tmp_path / "metrics.kv").read_text().splitlines()]
    assert set(keys) == set(REPORT_KEYS) == {"acc_ms", "rho_msi", "acc_ad", "kappa_ad", "n_subjects", "n_segments"}
    assert (tmp_path / "confusion.png").stat().st_size > 0 and (tmp_path / "msi.png").exists()


def test_eval_perfect_replay_gives_all_ones(workdir, trained, tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(train_mod, "predict_scores", lambda params, st: (st.labels, np.eye(4)[st.labels]))
    assert _eval(workdir, trained, tmp_path, capsys)[0] == 0
    kv = dict(ln.split("=") for ln in (tmp_path / "metrics.kv").read_text().splitlines())
    assert all(float(kv[k]) == 1.0 for k in ("acc_ms", "rho_msi", "acc_ad", "kappa_ad"))
    assert kv["n_subjects"] == "6" and kv["n_segments"] == "96"


def test_eval_breakdown_changes_only_breakdown_section(workdir, trained, tmp_path, capsys):
    _eval(workdir, trained, tmp_path / "a", capsys, "--breakdown", "pooled")
    _eval(workdir, trained, tmp_path / "b", capsys, "--breakdown", "per-fold")
    a, b = (tmp_path / "a" / "report.txt").read_text(), (tmp_path / "b" / "report.txt").read_text()
    assert a != b and a.split("\n\n")[0] == b.split("\n\n")[0]
    assert (tmp_path / "a" / "metrics.kv").read_text() == (tmp_path / "b" / "metrics.kv").read_text()


def test_eval_is_reproducible(workdir, trained, tmp_path, capsys):
    _eval(workdir, trained, tmp_path / "a", capsys)
    _eval(workdir, trained, tmp_path / "b", capsys)
    assert (tmp_path / "a" / "metrics.kv").read_text() == (tmp_path / "b" / "metrics.kv").read_text()


def test_eval_fold_mismatch_exits_2(workdir, trained, tmp_path, capsys):
    code, _, err = run(["eval", "--data", str(workdir / "data"), "--checkpoints", str(trained / "fold0.ckpt"), str(trained / "fold1.ckpt"),
                        "--folds", str(trained / "folds.tsv"), "--out", str(tmp_path)], capsys)
    assert code == 2 and "fold mismatch" in err


# gradcheck


@pytest.mark.parametrize("scope", ["conv-ki", "nl-sub", "nl-seg", "model"])
def test_gradcheck_scopes_pass(scope, capsys):
    code, out, _ = run(["gradcheck", "--scope", scope], capsys)
    assert code == 0 and "FAIL" not in out
    if scope == "nl-sub":
        assert "nl_block[subject,B=3]" in out


def test_gradcheck_failure_exits_4_naming_coordinate(capsys):
    code, _, err = run(["gradcheck", "--scope", "conv-ki", "--tol", "0"], capsys)
    assert code == 4 and "conv_ki" in err and "coordinate" in err


# predict


def _normal_subject(tmp_path, capsys):
    run(["synth", "--out", str(tmp_path / "normal"), "--subjects", "1", "--set", "class_prior=1,0,0,0", "--seed", "4"], capsys)
    return sorted((tmp_path / "normal" / "tensors").glob("*.cmot"))


def test_predict_output_format(trained, tmp_path, capsys):
    files = _normal_subject(tmp_path, capsys)
    code, out, _ = run(["predict", "--checkpoint", str(trained / "fold0.ckpt"), "--subject-tensors", *map(str, files)], capsys)
    lines = out.splitlines()
    assert code == 0 and len(lines) == 17
    assert all(ln.startswith("segment") for ln in lines[:16]) and lines[16].startswith("MSI ")
    code, out2, _ = run(["predict", "--checkpoint", str(trained / "fold0.ckpt"), "--subject-tensors", str(files[0].parent)], capsys)
    assert out2 == out


def test_predict_all_normal_subject_has_low_msi(workdir, tmp_path, capsys):
    data = tmp_path / "train"
    run(["synth", "--out", str(data), "--subjects", "12", "--seed", "2"], capsys)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs=2\npatience=0\n")
    assert run(["train", "--data", str(data), "--config", str(cfg), "--no-cv", "--out", str(tmp_path / "m")], capsys)[0] == 0
    files = _normal_subject(tmp_path, capsys)
    code, out, _ = run(["predict", "--checkpoint", str(tmp_path / "m" / "model.ckpt"), "--subject-tensors", *map(str, files)], capsys)
    assert code == 0 and float(out.splitlines()[-1].split()[1]) < 0.5


def test_predict_errors(trained, tmp_path, capsys):
    files = _normal_subject(tmp_path, capsys)
    code, _, err = run(["predict", "--checkpoint", str(trained / "fold0.ckpt"), "--subject-tensors", *map(str, files[:15])], capsys)
    assert code == 2 and "16" in err
    missing = tmp_path / "nope.cmot"
    code, _, err = run(["predict", "--checkpoint", str(trained / "fold0.ckpt"), "--subject-tensors", *map(str, files[:15]), str(missing)], capsys)
    assert code == 2 and str(missing) in err
    code, _, err = run(["predict", "--checkpoint", str(tmp_path / "none.ckpt"), "--subject-tensors", *map(str, files)], capsys)
    assert code == 2


def test_predict_truncated_checkpoint_exits_2(trained, tmp_path, capsys):
    files = _normal_subject(tmp_path, capsys)
    bad = tmp_path / "cut.ckpt"
    bad.write_bytes((trained / "fold0.ckpt").read_bytes()[:100])
    code, _, err = run(["predict", "--checkpoint", str(bad), "--subject-tensors", *map(str, files)], capsys)
    assert code == 2 and "unexpected end" in err


# entry point


def test_console_entry_point_runs():
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "cardiac_mos.cli", "config-schema"], capture_output=True, text=True, env=env)
    assert r.returncode == 0 and "channels=16,32,64,64" in r.stdout
    r = subprocess.run([sys.executable, "-m", "cardiac_mos.cli", "train"], capture_output=True, text=True)
    assert r.returncode == 2


def test_cmot_files_are_what_synth_writes(workdir):
    f = sorted((workdir / "data" / "tensors").glob("*.cmot"))[0]
    arr = cmot.load(f)
    assert arr.shape[:2] == (80, 60) and arr.dtype == np.float32
