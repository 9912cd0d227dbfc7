"""Flat ``key = value`` experiment configuration.

Lines starting with ``#`` and blank lines are ignored. Unknown keys are an
error. Every key, its default and meaning are listed in :data:`DOCS`.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data.augment import AugmentConfig
from .data.erase import EraseParams
from .embed import EmbedderConfig, TrainConfig
from .errors import ConfigError
from .losses import LambdaSchedule, MarginConfig
from .stream import SmootherState


@dataclass(frozen=True)
class Config:
    # dataset
    root: str = "data/train"
    steps: int = 8
    per_step: int = 40
    size: int = 64
    data_seed: int = 7
    test_root: str = ""
    test_per_step: int = 20
    test_seed: int = 1007
    # model
    channels: str = "16,32,64,128"
    embed_dim: int = 128
    input_size: int = 64
    normalize: bool = False
    # training
    loss_mode: str = "anomaly_adaptive"
    epochs: int = 100
    batch_size: int = 16
    batches_per_epoch: int = 20
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    margin: float = 1.0
    margin_a: float = 1.0
    m_alpha: float = 1.0
    m_beta: float = 1.0
    sigma: str = "auto"
    margin_form: str = "literal"
    lambda_warmup: int = 50
    lambda_ramp: int = 50
    lambda_max: float = 1.0
    anomaly_source: str = "anchor"
    # gallery
    k: int = 10
    tau_rule: str = "auto"
    # augmentation
    rotation_deg: float = 10.0
    projective: float = 0.05
    gain_lo: float = 0.8
    gain_hi: float = 1.2
    offset: float = 0.05
    truncation: float = 0.15
    p_rotation: float = 0.5
    p_projective: float = 0.5
    p_color: float = 0.5
    p_truncation: float = 0.5
    # random erasing
    erase_area_lo: float = 0.3
    erase_area_hi: float = 0.5
    erase_aspect_lo: float = 0.3
    erase_aspect_hi: float = 3.3
    erase_repeats: int = 2
    # smoother / streaming
    required_run: int = 5
    anomaly_mode: str = "reset"
    fps: float = 5.0
    # experiments
    compare_seeds: int = 3
    bench_frames: int = 200

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def with_overrides(self, **kwargs) -> "Config":
        clean = {k: v for k, v in kwargs.items() if v is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(self, **{k: _coerce(k, v) for k, v in clean.items()})

    # builders for the module-level config objects
    def embedder(self) -> EmbedderConfig:
        try:
            channels = tuple(int(c) for c in self.channels.split(","))
        except ValueError as exc:
            raise ConfigError(f"channels must be comma-separated integers, got {self.channels!r}") from exc
        return EmbedderConfig(input_size=self.input_size, channels=channels, embed_dim=self.embed_dim,
                              normalize=self.normalize)

    def margins(self) -> MarginConfig:
        sigma = None if str(self.sigma).strip().lower() == "auto" else float(self.sigma)
        return MarginConfig(m=self.margin, a=self.margin_a, sigma=sigma, m_alpha=self.m_alpha,
                            m_beta=self.m_beta, form=self.margin_form)

    def augment(self) -> AugmentConfig:
        return AugmentConfig(rotation_lo=-self.rotation_deg, rotation_hi=self.rotation_deg,
                             projective=self.projective, gain_lo=self.gain_lo, gain_hi=self.gain_hi,
                             offset_lo=-self.offset, offset_hi=self.offset, truncation=self.truncation,
                             p_rotation=self.p_rotation, p_projective=self.p_projective,
                             p_color=self.p_color, p_truncation=self.p_truncation)

    def erase(self) -> EraseParams:
        return EraseParams(self.erase_area_lo, self.erase_area_hi, self.erase_aspect_lo,
                           self.erase_aspect_hi, self.erase_repeats)

    def train(self) -> TrainConfig:
        return TrainConfig(loss_mode=self.loss_mode, epochs=self.epochs, batch_size=self.batch_size,
                           batches_per_epoch=self.batches_per_epoch, lr=self.lr, momentum=self.momentum,
                           seed=self.seed, margins=self.margins(),
                           schedule=LambdaSchedule(self.lambda_warmup, self.lambda_ramp, self.lambda_max),
                           augment=self.augment(), erase=self.erase(), anomaly_source=self.anomaly_source)

    def smoother(self) -> SmootherState:
        return SmootherState(required_run=self.required_run, anomaly_mode=self.anomaly_mode)


DOCS = {
    "root": "training dataset folder (step_<n>/*.png)",
    "steps": "number of assembly steps S",
    "per_step": "generated images per step",
    "size": "generated image side in pixels",
    "data_seed": "seed of the training-set generator",
    "test_root": "held-out dataset folder; empty = render in memory from test_seed",
    "test_per_step": "held-out images per step when rendered in memory",
    "test_seed": "seed of the held-out generator (and its occluded copy)",
    "channels": "output channels of the 4 conv layers",
    "embed_dim": "embedding dimension",
    "input_size": "embedder input side (must equal the image size)",
    "normalize": "L2-normalise embeddings (off by default)",
    "loss_mode": "triplet_fixed | triplet_adaptive | anomaly_fixed | anomaly_adaptive",
    "epochs": "training epochs",
    "batch_size": "quadruplets per mini-batch",
    "batches_per_epoch": "mini-batches per epoch",
    "lr": "SGD learning rate",
    "momentum": "SGD momentum",
    "seed": "training seed (weights init and batch sampling)",
    "margin": "fixed triplet margin m",
    "margin_a": "adaptive margin amplitude a",
    "m_alpha": "first-term margin of the anomaly loss (fixed mode)",
    "m_beta": "second-term margin of the anomaly loss",
    "sigma": "adaptive margin width; auto = std of step indices 1..S",
    "margin_form": "literal = a/sqrt(2*pi*sigma), standard = a/(sigma*sqrt(2*pi))",
    "lambda_warmup": "epochs with anomaly weight 0",
    "lambda_ramp": "epochs of linear ramp after the warm-up",
    "lambda_max": "anomaly weight after the ramp",
    "anomaly_source": "anchor | random: image that Random Erasing corrupts",
    "k": "neighbours in the k-NN vote",
    "tau_rule": "auto = mean + 3 std of leave-one-out NN distances, or a number",
    "rotation_deg": "max augmentation rotation (degrees, symmetric)",
    "projective": "max projective corner jitter (fraction of side)",
    "gain_lo": "min colour gain", "gain_hi": "max colour gain",
    "offset": "max absolute colour offset",
    "truncation": "max truncated fraction of one edge",
    "p_rotation": "probability of rotation", "p_projective": "probability of projective warp",
    "p_color": "probability of colour change", "p_truncation": "probability of truncation",
    "erase_area_lo": "min erased area fraction", "erase_area_hi": "max erased area fraction",
    "erase_aspect_lo": "min erased h/w ratio", "erase_aspect_hi": "max erased h/w ratio",
    "erase_repeats": "rectangles per anomaly image",
    "required_run": "identical consecutive verdicts needed to confirm a step",
    "anomaly_mode": "reset | pause: effect of an anomaly verdict on the pending run",
    "fps": "frame rate assumed for folder/scripted streams",
    "compare_seeds": "seeds per loss mode in compare",
    "bench_frames": "frames timed by bench (>= 200)",
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    if not isinstance(value, str):
        if kind == "float" and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    text = value.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind}") from exc
    return text


def parse_config(text: str, base: Config = Config()) -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return replace(base, **values)


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
