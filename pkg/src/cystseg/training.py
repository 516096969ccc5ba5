"""Seeded training loop: shuffled mini-batches, on-the-fly augmentation,
per-epoch CSV logging, and best-validation checkpointing.

Everything downstream of the (records, configs) inputs is driven by one
RNG seeded from TrainConfig.seed, so a rerun reproduces the checkpoint
byte for byte.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig
from .errors import DivergedError, IoError, NoPositivesError
from .nn import Adam, PatchClassifier, Tensor, softmax_xent
from .patches import PatchRecord, augment


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    val_accuracy: float | None


@dataclass
class TrainResult:
    model: PatchClassifier
    log: list[EpochStats]
    best_epoch: int
    best_val_accuracy: float | None


def one_hot(labels: np.ndarray, num_classes: int = 2) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _batch_array(records: list[PatchRecord], dtype) -> np.ndarray:
    pixels = np.stack([r.pixels for r in records]).astype(dtype)
    return (pixels / dtype.type(255.0))[:, None, :, :]


def _accuracy(model: PatchClassifier, records: list[PatchRecord],
              batch_size: int) -> float:
    if not records:
        return float("nan")
    model.eval()
    correct = 0
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        logits = model.logits(np.stack([r.pixels for r in chunk]))
        pred = logits.argmax(axis=1)
        labels = np.array([r.label for r in chunk])
        correct += int((pred == labels).sum())
    model.train()
    return correct / len(records)


def _snapshot(model: PatchClassifier) -> list[np.ndarray]:
    arrays = [p.data for p in model.parameters()]
    arrays.extend(b for _, b in model.named_buffers())
    return [a.copy() for a in arrays]


def _restore(model: PatchClassifier, snapshot: list[np.ndarray]) -> None:
    arrays = [p.data for p in model.parameters()]
    arrays.extend(b for _, b in model.named_buffers())
    for dst, src in zip(arrays, snapshot):
        dst[...] = src


def train_model(records: list[PatchRecord], model_config: ModelConfig,
                train_config: TrainConfig) -> TrainResult:
    """Train a fresh classifier on a balanced patch set.

    The record list is split into train/validation once (seeded shuffle),
    each epoch reshuffles the training indices, every training patch is
    augmented on the fly, and the checkpoint returned is the epoch with
    the best validation accuracy (ties keep the earlier epoch).
    """
    if not records:
        raise NoPositivesError("empty patch dataset")
    rng = np.random.default_rng(train_config.seed)
    order = rng.permutation(len(records))
    n_val = int(round(len(records) * train_config.val_fraction))
    n_val = min(n_val, len(records) - 1)
    val_records = [records[i] for i in order[:n_val]]
    train_records = [records[i] for i in order[n_val:]]

    model = PatchClassifier(model_config, seed=train_config.seed)
    dtype = model.np_dtype
    optimizer = Adam(model.parameters(), lr=train_config.lr,
                     beta1=train_config.beta1, beta2=train_config.beta2,
                     eps=train_config.eps)
    policy = train_config.augment

    log: list[EpochStats] = []
    best_epoch = 0
    best_val = None
    best_loss = None
    best_state = _snapshot(model)
    model.train()
    for epoch in range(1, train_config.epochs + 1):
        perm = rng.permutation(len(train_records))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(perm), train_config.batch_size):
            idx = perm[start:start + train_config.batch_size]
            batch = [augment(train_records[i], policy, rng) for i in idx]
            x = Tensor(_batch_array(batch, dtype))
            labels = np.array([r.label for r in batch])
            logits = model.forward(x)
            loss = softmax_xent(logits, one_hot(labels, model_config.num_classes))
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergedError(f"non-finite loss at epoch {epoch}")
            loss_sum += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            model.zero_grad()
            loss.backward()
            optimizer.step()
        # the loss can stay finite while the step that follows it blows up,
        # so the weights themselves are checked once per epoch
        for name, param in model.named_parameters():
            if not np.all(np.isfinite(param.data)):
                raise DivergedError(f"non-finite values in {name} after epoch {epoch}")
        epoch_loss = loss_sum / len(train_records)
        epoch_acc = correct / len(train_records)
        val_acc = _accuracy(model, val_records, train_config.batch_size) if val_records else None
        log.append(EpochStats(epoch, epoch_loss, epoch_acc, val_acc))

        if val_records:
            if best_val is None or val_acc > best_val:
                best_val = val_acc
                best_epoch = epoch
                best_state = _snapshot(model)
        else:
            if best_loss is None or epoch_loss < best_loss:
                best_loss = epoch_loss
                best_epoch = epoch
                best_state = _snapshot(model)

    _restore(model, best_state)
    model.eval()
    return TrainResult(model=model, log=log, best_epoch=best_epoch,
                       best_val_accuracy=best_val)


def write_training_log(log: list[EpochStats], path: str | Path) -> None:
    """CSV with exactly the columns (epoch, loss, accuracy)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "accuracy"])
            for row in log:
                writer.writerow([row.epoch, f"{row.loss:.6f}", f"{row.accuracy:.6f}"])
    except OSError as exc:
        raise IoError(f"cannot write training log {path}: {exc}") from exc
