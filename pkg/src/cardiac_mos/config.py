"""Flat ``key=value`` run configuration covering model, training and synthesis."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .model import ModelConfig
from .synthdata import PAPER_CLASS_COUNTS, SynthConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(","))


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(","))


def _opt_float(s: str) -> float | None:
    return None if s in ("", "none", "-") else float(s)


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]
    default: str
    doc: str


_PRIOR = ",".join(repr(c / sum(PAPER_CLASS_COUNTS)) for c in PAPER_CLASS_COUNTS)

SCHEMA: dict[str, Key] = {
    "seed": Key("all", int, "0", "seed shared by synthesis, initialisation, shuffling and folds"),
    "subjects": Key("synth", int, "90", "number of synthetic subjects"),
    "frame_counts": Key("synth", _ints, "20,25", "frame counts to mix"),
    "frame_mix": Key("synth", _floats, "65,25", "relative weight of each frame count"),
    "class_prior": Key("synth", _floats, _PRIOR, "per-segment class probabilities (sum to 1)"),
    "noise": Key("synth", float, "0.05", "additive Gaussian noise sigma"),
    "gain_range": Key("synth", _floats, "0.85,1.15", "per-subject intensity gain range"),
    "jitter": Key("synth", float, "0.15", "relative per-segment amplitude jitter"),
    "n_o": Key("model", int, "16", "conv-KI filter count"),
    "channels": Key("model", _ints, "16,32,64,64", "conv block widths"),
    "fc": Key("model", int, "128", "hidden fully connected width"),
    "n0": Key("model", int, "20", "native conv-KI kernel length"),
    "epochs": Key("train", int, "60", "baseline epochs"),
    "finetune_epochs": Key("train", int, "30", "NL fine-tune epochs"),
    "lr": Key("train", float, "0.001", "learning rate"),
    "finetune_lr": Key("train", _opt_float, "none", "fine-tune learning rate (defaults to lr)"),
    "optimizer": Key("train", str, "adam", "adam or sgd (momentum 0.9)"),
    "patience": Key("train", int, "10", "early-stop patience on held-out loss (0 disables)"),
    "folds": Key("train", int, "3", "cross-validation fold count"),
}


def schema_text() -> str:
    return "\n".join(f"{k}={v.default}  # [{v.section}] {v.doc}" for k, v in SCHEMA.items()) + "\n"


@dataclass
class RunConfig:
    values: dict[str, Any]

    @classmethod
    def parse(cls, text: str, overrides: dict[str, str] | None = None) -> "RunConfig":
        raw = {k: v.default for k, v in SCHEMA.items()}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            raw[key] = value
        for key, value in (overrides or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            raw[key] = value
        values = {}
        for key, value in raw.items():
            try:
                values[key] = SCHEMA[key].parse(value)
            except ValueError as e:
                raise ConfigError(f"bad value for {key!r}: {value!r} ({e})") from None
        cfg = cls(values)
        try:
            cfg.synth(), cfg.model(), cfg.train()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if values["folds"] < 2:
            raise ConfigError("folds must be >= 2")
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict[str, str] | None = None) -> "RunConfig":
        text = Path(path).read_text() if path else ""
        return cls.parse(text, overrides)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def synth(self) -> SynthConfig:
        v = self.values
        return SynthConfig(
            subjects=v["subjects"],
            frame_counts=v["frame_counts"],
            frame_mix=v["frame_mix"],
            class_prior=v["class_prior"],
            noise=v["noise"],
            seed=v["seed"],
            gain_range=v["gain_range"],
            jitter=v["jitter"],
        )

    def model(self, variant: str = "baseline") -> ModelConfig:
        v = self.values
        return ModelConfig(variant=variant, n_o=v["n_o"], channels=v["channels"], fc=v["fc"], n0=v["n0"], seed=v["seed"])

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["epochs"],
            finetune_epochs=v["finetune_epochs"],
            lr=v["lr"],
            finetune_lr=v["finetune_lr"],
            optimizer=v["optimizer"],
            seed=v["seed"],
            patience=v["patience"],
        )
