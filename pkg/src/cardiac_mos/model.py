"""The motion-scoring network: conv-KI stem, four conv blocks, optional
non-local blocks, and a two-layer classification head."""

from __future__ import annotations

import copy
import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import cmot
from .functional import conv2d, dense, maxpool2d, relu, _softmax
from .layers import ConvKIKernel, NLBlockParams, conv_ki_forward, nl_block_forward
from .tensor import Tensor, as_tensor, no_grad, reshape

N_CLASSES = 4

# variant -> (scope, conv blocks followed by an NL block)
VARIANTS: dict[str, tuple[str | None, tuple[int, ...]]] = {
    "baseline": (None, ()),
    "seg-NL-1": ("segment", (4,)),
    "seg-NL-2": ("segment", (3, 4)),
    "sub-NL-1": ("subject", (4,)),
    "sub-NL-2": ("subject", (3, 4)),
}


@dataclass
class ModelConfig:
    variant: str = "baseline"
    n_o: int = 16
    channels: tuple[int, ...] = (16, 32, 64, 64)
    fc: int = 128
    n0: int = 20
    n_classes: int = N_CLASSES
    input_size: tuple[int, int] = (80, 60)
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"invalid variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        self.channels = tuple(int(c) for c in self.channels)
        self.input_size = tuple(int(s) for s in self.input_size)
        if len(self.channels) != 4 or min(self.channels) < 1:
            raise ValueError(f"need four positive block widths, got {self.channels}")
        if self.n_classes != N_CLASSES:
            raise ValueError(f"class count is fixed at {N_CLASSES}")
        if self.n0 < 2 or self.n_o < 1 or self.fc < 1:
            raise ValueError("n0 >= 2, n_o >= 1 and fc >= 1 required")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def feature_size(self) -> tuple[int, int]:
        h, w = self.input_size
        for _ in range(4):
            h, w = -(-h // 2), -(-w // 2)
        return h, w

    def to_text(self) -> str:
        lines = []
        for k, v in vars(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        tup = lambda s: tuple(int(i) for i in s.split(","))  # noqa: E731
        return cls(
            variant=kv["variant"],
            n_o=int(kv["n_o"]),
            channels=tup(kv["channels"]),
            fc=int(kv["fc"]),
            n0=int(kv["n0"]),
            n_classes=int(kv["n_classes"]),
            input_size=tup(kv["input_size"]),
            seed=int(kv["seed"]),
            dtype=kv["dtype"],
        )


@dataclass
class ModelParams:
    config: ModelConfig
    conv_ki: ConvKIKernel
    convs: list[tuple[Tensor, Tensor]]
    fc1: tuple[Tensor, Tensor]
    fc2: tuple[Tensor, Tensor]
    nl: dict[int, NLBlockParams] = field(default_factory=dict)

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"conv_ki.k0": self.conv_ki.k0}
        for i, (w, b) in enumerate(self.convs, start=1):
            out[f"conv{i}.w"] = w
            out[f"conv{i}.b"] = b
        for i in sorted(self.nl):
            for name, t in self.nl[i].tensors().items():
                out[f"nl{i}.{name}"] = t
        out["fc1.w"], out["fc1.b"] = self.fc1
        out["fc2.w"], out["fc2.b"] = self.fc2
        return out

    def zero_grad(self) -> None:
        for t in self.named_tensors().values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.size for t in self.named_tensors().values())


# the output layer starts near zero so initial predictions are close to uniform
OUTPUT_INIT_SCALE = 0.1


def _he_uniform(rng, shape, fan_in, dtype, scale=1.0):
    limit = scale * np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _nl_rng(config: ModelConfig) -> np.random.Generator:
    return np.random.default_rng([config.seed, 1])


def _make_nl(config: ModelConfig, rng: np.random.Generator) -> dict[int, NLBlockParams]:
    scope, blocks = VARIANTS[config.variant]
    return {i: NLBlockParams.init(config.channels[i - 1], scope, rng, config.dtype) for i in blocks}


def build_model(config: ModelConfig) -> ModelParams:
    """He-uniform weights (output layer scaled down), zero biases, zero NL output projections; seeded."""
    dt = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed)
    conv_ki = ConvKIKernel(_he_uniform(rng, (1, 1, config.n0, config.n_o), config.n0, dt))
    convs = []
    cin = config.n_o
    for cout in config.channels:
        convs.append((_he_uniform(rng, (3, 3, cin, cout), 9 * cin, dt), _zeros((cout,), dt)))
        cin = cout
    h, w = config.feature_size
    flat = h * w * config.channels[-1]
    fc1 = (_he_uniform(rng, (flat, config.fc), flat, dt), _zeros((config.fc,), dt))
    fc2 = (_he_uniform(rng, (config.fc, config.n_classes), config.fc, dt, OUTPUT_INIT_SCALE), _zeros((config.n_classes,), dt))
    return ModelParams(config, conv_ki, convs, fc1, fc2, _make_nl(config, _nl_rng(config)))


def insert_nl_blocks(baseline: ModelParams, variant: str) -> ModelParams:
    """Copy a trained baseline and add zero-output NL blocks for ``variant``."""
    if baseline.config.variant != "baseline":
        raise ValueError(f"NL blocks can only be inserted into a baseline model, got {baseline.config.variant!r}")
    if variant == "baseline" or variant not in VARIANTS:
        raise ValueError(f"invalid NL variant {variant!r}")
    new = copy.deepcopy(baseline)
    new.config = replace(baseline.config, variant=variant)
    for t in new.named_tensors().values():
        t.grad = None
    new.nl = _make_nl(new.config, _nl_rng(new.config))
    return new


def forward(params: ModelParams, batch) -> Tensor:
    """Raw class logits [B, 4] for a batch of polar segment sequences [B, r, a, t]."""
    cfg = params.config
    x = as_tensor(batch, np.dtype(cfg.dtype))
    if x.ndim != 4:
        raise ValueError(f"batch must be [B,r,a,t], got {x.shape}")
    if x.shape[-1] < 2:
        raise ValueError(f"sequences need t >= 2 frames, got {x.shape[-1]}")
    if x.shape[1:3] != cfg.input_size:
        raise ValueError(f"expected spatial size {cfg.input_size}, got {x.shape[1:3]}")
    B = x.shape[0]
    h = relu(conv_ki_forward(x, params.conv_ki))
    for i, (w, b) in enumerate(params.convs, start=1):
        h = maxpool2d(relu(conv2d(h, w, b, padding="same")))
        if i in params.nl:
            h = nl_block_forward(h, params.nl[i])
    h = reshape(h, (B, -1))
    h = relu(dense(h, *params.fc1))
    return dense(h, *params.fc2)


def predict_proba(params: ModelParams, batch) -> np.ndarray:
    with no_grad():
        logits = forward(params, batch).data
    return _softmax(logits.astype(np.float64), axis=1)


def predict_scores(params: ModelParams, study) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment scores and class probabilities for one subject (16-segment batch)."""
    batch = np.stack([s.data for s in study.segments])
    probs = predict_proba(params, batch)
    return probs.argmax(axis=1), probs


# checkpoints

CKPT_MAGIC = b"CMOSCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class VariantMismatchError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def checkpoint_bytes(params: ModelParams) -> bytes:
    buf = io.BytesIO()
    header = params.config.to_text().encode()
    tensors = params.named_tensors()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<BII", CKPT_VERSION, len(header), len(tensors)))
    buf.write(header)
    for name, t in tensors.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        cmot.write_tensor(buf, t.data)
    return buf.getvalue()


def save_checkpoint(params: ModelParams, path) -> None:
    cmot.atomic_write(path, checkpoint_bytes(params))


def _take(f, n):
    b = f.read(n)
    if len(b) != n:
        raise TruncatedCheckpointError("unexpected end of checkpoint file")
    return b


def load_checkpoint(path, variant: str | None = None) -> ModelParams:
    with open(path, "rb") as f:
        if f.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise CheckpointFormatError("bad magic: not a checkpoint file")
        version, hlen, count = struct.unpack("<BII", _take(f, 9))
        if version != CKPT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        config = ModelConfig.from_text(_take(f, hlen).decode())
        if variant is not None and config.variant != variant:
            raise VariantMismatchError(f"variant mismatch: checkpoint holds {config.variant!r}, expected {variant!r}")
        stored = {}
        for _ in range(count):
            (n,) = struct.unpack("<H", _take(f, 2))
            name = _take(f, n).decode()
            try:
                stored[name] = cmot.read_tensor(f)
            except cmot.FormatError as e:
                if "unexpected end" in str(e):
                    raise TruncatedCheckpointError("unexpected end of checkpoint file") from e
                raise CheckpointFormatError(str(e)) from e
    params = build_model(config)
    for name, t in params.named_tensors().items():
        if name not in stored:
            raise MissingTensorError(f"checkpoint lacks tensor {name!r}")
        if stored[name].shape != t.shape:
            raise ShapeMismatchError(f"tensor {name!r} has shape {stored[name].shape}, expected {t.shape}")
        t.data = stored[name].astype(t.dtype)
    return params
