"""The shared-weight CNN embedder and its metric-learning training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import checkpoint
from .data.augment import AugmentConfig
from .data.erase import EraseParams
from .data.images import Dataset
from .data.sampling import check_sampleable, sample_quadruplet_batch
from .errors import ConfigError, TrainingError
from .losses import LOSS_MODES, LambdaSchedule, MarginConfig, batch_loss, lambda_at
from .nn import MAXPOOL, RELU, Model, conv_spec, linear_spec, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbedderConfig:
    input_size: int = 64
    input_channels: int = 3
    channels: tuple = (16, 32, 64, 128)
    kernel: int = 3
    embed_dim: int = 128
    normalize: bool = False

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ConfigError(f"the embedder has exactly 4 conv layers, got channels {self.channels}")
        if self.input_size < 16:
            raise ConfigError(f"input_size must be >= 16, got {self.input_size}")

    def layer_specs(self):
        specs, cin = [], self.input_channels
        for cout in self.channels:
            specs += [conv_spec(cin, cout, self.kernel, 1, self.kernel // 2), RELU, MAXPOOL]
            cin = cout
        side = self.input_size
        for _ in self.channels:
            side //= 2
        if side < 1:
            raise ConfigError(f"input_size {self.input_size} vanishes after 4 poolings")
        specs.append(linear_spec(side * side * cin, self.embed_dim))
        return specs

    @property
    def input_shape(self):
        return (self.input_size, self.input_size, self.input_channels)


def build_embedder(cfg: EmbedderConfig = EmbedderConfig(), seed: int = 0, dtype=np.float32) -> Model:
    model = Model(cfg.layer_specs(), cfg.input_shape, seed=seed, dtype=dtype)
    model.normalize = cfg.normalize
    return model


def _l2_normalize(y):
    norm = np.sqrt(np.einsum("ij,ij->i", y, y))[:, None]
    return y / np.maximum(norm, 1e-12), norm


def embed_batch(model: Model, images: np.ndarray, chunk: int = 128) -> np.ndarray:
    """Embed ``(N, H, W, C)`` images without retaining activations."""
    images = np.asarray(images)
    if images.shape[1:] != model.input_shape:
        raise ConfigError(f"image shape {images.shape[1:]} does not match embedder input {model.input_shape}")
    outs = [model.forward(images[i:i + chunk], retain=False) for i in range(0, len(images), chunk)]
    out = np.concatenate(outs) if outs else np.zeros((0,) + model.output_shape, model.dtype)
    if getattr(model, "normalize", False):
        out = _l2_normalize(out)[0].astype(model.dtype)
    return out


def embed(model: Model, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.shape != model.input_shape:
        raise ConfigError(f"image shape {image.shape} does not match embedder input {model.input_shape}")
    return embed_batch(model, image[None])[0]


@dataclass
class TrainConfig:
    loss_mode: str = "anomaly_adaptive"
    epochs: int = 100
    batch_size: int = 16
    batches_per_epoch: int = 20
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    margins: MarginConfig = field(default_factory=MarginConfig)
    schedule: LambdaSchedule = field(default_factory=LambdaSchedule)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    erase: EraseParams = field(default_factory=EraseParams)
    anomaly_source: str = "anchor"

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}; valid modes: {', '.join(LOSS_MODES)}")
        if self.epochs < 0 or self.batch_size < 1 or self.batches_per_epoch < 1:
            raise ConfigError("epochs must be >= 0, batch_size and batches_per_epoch >= 1")

    @property
    def uses_anomaly(self) -> bool:
        return self.loss_mode.startswith("anomaly")


@dataclass
class TelemetryRow:
    epoch: int
    mean_dp: float
    mean_dn: float
    mean_dano: float | None
    mean_loss: float
    lam: float


TELEMETRY_HEADER = "epoch,mean_dp,mean_dn,mean_dano,mean_loss,lambda"


def telemetry_csv(rows) -> str:
    lines = [TELEMETRY_HEADER]
    for r in rows:
        dano = "" if r.mean_dano is None else repr(r.mean_dano)
        lines.append(f"{r.epoch},{r.mean_dp!r},{r.mean_dn!r},{dano},{r.mean_loss!r},{r.lam!r}")
    return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    model: Model
    telemetry: list


def loss_and_grads(model: Model, batch, cfg: TrainConfig, margins: MarginConfig, lam: float):
    """Forward the batch through the shared embedder and return ``(BatchLoss, upstream_grad)``.

    The anchor/positive/negative (and, when the anomaly term is live, anomaly)
    images are stacked into one forward pass so one set of weights serves
    every branch. Activations for that pass stay retained for ``backward``.
    """
    b = len(batch)
    parts = [batch.anchors, batch.positives, batch.negatives]
    live_anomaly = cfg.uses_anomaly and lam > 0
    if live_anomaly:
        parts.append(batch.anomalies)
    y = model.forward(np.concatenate(parts))
    q = None
    if live_anomaly:
        q = y[3 * b:]
    elif batch.anomalies is not None:
        q = model.forward(batch.anomalies, retain=False)
    normalize = getattr(model, "normalize", False)
    if normalize:
        y_used, norms = _l2_normalize(y.astype(np.float64))
        if q is not None and not live_anomaly:
            q = _l2_normalize(q.astype(np.float64))[0]
        elif live_anomaly:
            q = y_used[3 * b:]
    else:
        y_used = y
    result = batch_loss(y_used[:b], y_used[b:2 * b], y_used[2 * b:3 * b], q, batch.n_a, batch.n_n,
                        cfg.loss_mode, margins, lam)
    grads = [result.grads[0], result.grads[1], result.grads[2]]
    if live_anomaly:
        grads.append(result.grads[3])
    upstream = np.concatenate(grads).astype(np.float64)
    if normalize:
        e = y_used
        upstream = (upstream - e * np.einsum("ij,ij->i", e, upstream)[:, None]) / np.maximum(norms, 1e-12)
    return result, upstream.astype(model.dtype)


def train(model: Model, dataset: Dataset, cfg: TrainConfig,
          on_epoch: Callable[[TelemetryRow], None] | None = None) -> TrainResult:
    """Mini-batch momentum-SGD metric learning; one telemetry row per epoch."""
    check_sampleable(dataset)
    if dataset.image_shape != model.input_shape:
        raise ConfigError(f"dataset images {dataset.image_shape} do not match embedder input {model.input_shape}")
    margins = cfg.margins.for_steps(len(dataset.steps))
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    erase = cfg.erase if cfg.uses_anomaly else None
    params = model.parameters()
    telemetry = []
    for epoch in range(1, cfg.epochs + 1):
        lam = lambda_at(cfg.schedule, epoch) if cfg.uses_anomaly else 0.0
        sums = {"dp": 0.0, "dn": 0.0, "dano": 0.0, "loss": 0.0}
        rows = 0
        for b in range(cfg.batches_per_epoch):
            batch = sample_quadruplet_batch(dataset, cfg.batch_size, rng, epoch=epoch, augment_cfg=cfg.augment,
                                            erase_params=erase, anomaly_source=cfg.anomaly_source)
            result, upstream = loss_and_grads(model, batch, cfg, margins, lam)
            where = f"epoch {epoch} batch {b + 1} (seed {cfg.seed}, mode {cfg.loss_mode})"
            if not math.isfinite(result.loss):
                raise TrainingError(f"non-finite loss {result.loss} at {where}")
            model.backward(upstream, input_grad=False)
            sgd_step(params, cfg.lr, cfg.momentum, where=where)
            n = len(batch)
            rows += n
            sums["dp"] += float(result.d_p.sum())
            sums["dn"] += float(result.d_n.sum())
            sums["loss"] += result.loss * n
            if result.d_ano is not None:
                sums["dano"] += float(result.d_ano.sum())
        row = TelemetryRow(epoch, sums["dp"] / rows, sums["dn"] / rows,
                           sums["dano"] / rows if cfg.uses_anomaly else None, sums["loss"] / rows, lam)
        telemetry.append(row)
        log.debug("epoch %d: dp=%.4f dn=%.4f loss=%.4f lambda=%.3f", epoch, row.mean_dp, row.mean_dn,
                  row.mean_loss, lam)
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(model, telemetry)


def save_model(model: Model, path, extra_config: str = ""):
    extra = extra_config
    if getattr(model, "normalize", False) and "normalize" not in extra:
        extra += "normalize = true\n"
    checkpoint.save_checkpoint(model, path, extra)


def load_model(path) -> Model:
    model, text = checkpoint.load_checkpoint(path)
    model.normalize = any(line.replace(" ", "") == "normalize=true" for line in text.splitlines())
    return model
