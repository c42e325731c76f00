"""Mini-batch training with the joint detection + reconstruction loss."""

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nncore as nn
from ._util import rng_for
from .anomaly import LabeledDataset
from .errors import ConfigError, DataError, NumericError
from .model import ForwardOutput, Model


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    patience: int = 5
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.patience < 1:
            raise ConfigError(f"invalid training configuration: {self}")
        if not 0.0 <= self.val_fraction <= 0.5:
            raise ConfigError(f"val_fraction must be in [0, 0.5], got {self.val_fraction}")

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
            "seed": self.seed, "patience": self.patience,
            "val_fraction": self.val_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochMetrics:
    epoch: int
    detect_loss: float
    reconstruct_loss: float
    total_loss: float
    detection_accuracy: float
    token_accuracy: float
    seconds: float
    val_total_loss: Optional[float] = None

    def as_dict(self) -> dict:
        out = {
            "epoch": self.epoch,
            "detect_loss": self.detect_loss,
            "reconstruct_loss": self.reconstruct_loss,
            "total_loss": self.total_loss,
            "detection_accuracy": self.detection_accuracy,
            "token_accuracy": self.token_accuracy,
            "seconds": self.seconds,
        }
        if self.val_total_loss is not None:
            out["val_total_loss"] = self.val_total_loss
        return out


def joint_loss(output: ForwardOutput, targets: np.ndarray,
               labels: np.ndarray) -> tuple[nn.Tensor, nn.Tensor, nn.Tensor]:
    """Total loss and its two components: BCE on the anomaly probability plus
    cross-entropy of the reconstruction logits against the original tokens."""
    detect = nn.bce_loss(output.anomaly_prob, np.asarray(labels, dtype=np.float32))
    reconstruct = nn.ce_loss(output.logits, targets)
    return nn.add(detect, reconstruct), detect, reconstruct


def _check_compatible(model: Model, dataset: LabeledDataset) -> None:
    if dataset.l_max != model.config.max_len:
        raise DataError(
            f"dataset l_max={dataset.l_max} does not match model max_len={model.config.max_len}"
        )
    if dataset.vocab.size != model.config.vocab_size:
        raise DataError(
            f"dataset vocab size {dataset.vocab.size} does not match model "
            f"vocab_size={model.config.vocab_size}"
        )


def _run_split(model: Model, inputs: np.ndarray, targets: np.ndarray,
               labels: np.ndarray, batch_size: int) -> tuple[float, float, float, float]:
    """Forward-only pass; returns (detect, reconstruct, det_acc, tok_acc) means."""
    n = inputs.shape[0]
    det_sum = rec_sum = 0.0
    det_hits = tok_hits = tok_total = 0
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        out = model.forward(inputs[sl])
        _, detect, reconstruct = joint_loss(out, targets[sl], labels[sl])
        k = sl.stop - sl.start
        det_sum += float(detect.data) * k
        rec_sum += float(reconstruct.data) * k
        det_hits += int(((out.anomaly_prob.data > 0.5).astype(np.int64) == labels[sl]).sum())
        pred = out.logits.data.argmax(axis=-1)
        tok_hits += int((pred == targets[sl]).sum())
        tok_total += pred.size
    return det_sum / n, rec_sum / n, det_hits / n, tok_hits / tok_total


def evaluate_split(model: Model, dataset: LabeledDataset,
                   batch_size: int = 64) -> EpochMetrics:
    """Forward-only metrics over a dataset; parameters are never touched."""
    if not dataset.items:
        raise DataError("cannot evaluate an empty dataset")
    _check_compatible(model, dataset)
    started = time.perf_counter()
    det, rec, det_acc, tok_acc = _run_split(
        model, dataset.inputs_matrix(), dataset.targets_matrix(),
        dataset.labels_array(), batch_size,
    )
    return EpochMetrics(
        epoch=-1, detect_loss=det, reconstruct_loss=rec, total_loss=det + rec,
        detection_accuracy=det_acc, token_accuracy=tok_acc,
        seconds=time.perf_counter() - started,
    )


def train(model: Model, dataset: LabeledDataset,
          cfg: TrainConfig = TrainConfig()) -> tuple[list[nn.Parameter], list[EpochMetrics]]:
    """Train in place; returns the parameters and one metrics row per epoch.

    Per-epoch shuffles derive from (seed, epoch), validation is split off
    once with the seed, and the best-validation parameter snapshot is
    restored at the end, so a (seed, dataset, config) triple pins the entire
    trajectory. A non-finite loss aborts with the offending batch named.
    """
    if not dataset.items:
        raise DataError("cannot train on an empty dataset")
    _check_compatible(model, dataset)

    inputs = dataset.inputs_matrix()
    targets = dataset.targets_matrix()
    labels = dataset.labels_array()
    n = inputs.shape[0]

    n_val = int(n * cfg.val_fraction)
    order = rng_for(cfg.seed, 0).permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise ConfigError("validation fraction leaves no training items")

    params = model.parameters()
    optimizer = nn.Adam(params, lr=cfg.lr)
    metrics: list[EpochMetrics] = []
    best_val = np.inf
    best_snapshot: Optional[list[np.ndarray]] = None
    stale = 0

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        shuffled = train_idx[rng_for(cfg.seed, epoch + 1).permutation(train_idx.size)]
        det_sum = rec_sum = 0.0
        det_hits = tok_hits = tok_total = 0
        for start in range(0, shuffled.size, cfg.batch_size):
            batch = shuffled[start:start + cfg.batch_size]
            out = model.forward(inputs[batch])
            total, detect, reconstruct = joint_loss(out, targets[batch], labels[batch])
            detect_val, rec_val = float(detect.data), float(reconstruct.data)
            if not (np.isfinite(detect_val) and np.isfinite(rec_val)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}: "
                    f"detect={detect_val}, reconstruct={rec_val}"
                )
            total.backward()
            optimizer.step()
            det_sum += detect_val * batch.size
            rec_sum += rec_val * batch.size
            det_hits += int(((out.anomaly_prob.data > 0.5).astype(np.int64)
                             == labels[batch]).sum())
            pred = out.logits.data.argmax(axis=-1)
            tok_hits += int((pred == targets[batch]).sum())
            tok_total += pred.size

        row = EpochMetrics(
            epoch=epoch,
            detect_loss=det_sum / shuffled.size,
            reconstruct_loss=rec_sum / shuffled.size,
            total_loss=(det_sum + rec_sum) / shuffled.size,
            detection_accuracy=det_hits / shuffled.size,
            token_accuracy=tok_hits / tok_total,
            seconds=0.0,
        )

        if val_idx.size:
            vdet, vrec, _, _ = _run_split(
                model, inputs[val_idx], targets[val_idx], labels[val_idx], cfg.batch_size
            )
            row.val_total_loss = vdet + vrec
            if row.val_total_loss < best_val - 1e-9:
                best_val = row.val_total_loss
                best_snapshot = [p.data.copy() for p in params]
                stale = 0
            else:
                stale += 1
        row.seconds = time.perf_counter() - started
        metrics.append(row)
        if val_idx.size and stale >= cfg.patience:
            break

    if best_snapshot is not None:
        for p, data in zip(params, best_snapshot):
            p.data = data
    return params, metrics
