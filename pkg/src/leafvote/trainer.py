"""Head-only training with Adam and cross-entropy.

The backbone is frozen and inputs are not augmented, so backbone features
are extracted once per image and the head is trained on those cached
features. That is numerically the same as running the full network every
epoch, at a fraction of the cost.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .data import PreprocessConfig, Split, SplitManifest, load_batch
from .errors import DivergedTraining, EmptySplit
from .models import AdaptedModel

log = logging.getLogger(__name__)


class CheckpointPolicy(str, enum.Enum):
    BEST_VAL = "bestval"
    FINAL_EPOCH = "final"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    checkpoint_policy: CheckpointPolicy = CheckpointPolicy.BEST_VAL
    # fixed recipe; recorded for provenance
    optimizer: str = "adam"
    loss: str = "cross_entropy"

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_policy", CheckpointPolicy(self.checkpoint_policy))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer != "adam" or self.loss != "cross_entropy":
            raise ValueError("only Adam with cross-entropy is supported")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "checkpoint_policy": self.checkpoint_policy.value,
            "optimizer": self.optimizer,
            "loss": self.loss,
        }


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        # earliest epoch attaining the maximum
        best = max(self.epochs, key=lambda r: (r.val_accuracy, -r.epoch))
        return best.epoch

    @property
    def best_val_accuracy(self) -> float:
        return max(r.val_accuracy for r in self.epochs)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy)])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["val_acc"])) for r in rows])

    def to_list(self) -> list[dict]:
        return [r.__dict__.copy() for r in self.epochs]

    @classmethod
    def from_list(cls, rows: Sequence[dict]) -> "TrainHistory":
        return cls([EpochRecord(**r) for r in rows])


def extract_features(
    model: AdaptedModel,
    root: str | Path,
    paths: Sequence[str],
    batch_size: int = 32,
    preprocess_cfg: PreprocessConfig = PreprocessConfig(),
    progress: Callable[[int, int], None] | None = None,
) -> np.ndarray:
    """Backbone features (N×D float32) for images under ``root``, in ``paths`` order."""
    chunks = []
    for start in range(0, len(paths), batch_size):
        batch = load_batch(root, paths[start : start + batch_size], preprocess_cfg)
        chunks.append(model.features(batch).numpy())
        if progress:
            progress(min(start + batch_size, len(paths)), len(paths))
    if not chunks:
        return np.zeros((0, model.feature_dim), dtype=np.float32)
    return np.concatenate(chunks).astype(np.float32, copy=False)


def _evaluate(head: nn.Linear, feats: torch.Tensor, labels: torch.Tensor) -> tuple[float, float]:
    with torch.no_grad():
        logits = head(feats)
        loss = nn.functional.cross_entropy(logits, labels).item()
        acc = (logits.argmax(dim=1) == labels).double().mean().item()
    return loss, acc


def train_head(
    model: AdaptedModel,
    train_features: np.ndarray,
    train_labels: Sequence[int],
    val_features: np.ndarray,
    val_labels: Sequence[int],
    cfg: TrainConfig = TrainConfig(),
) -> tuple[AdaptedModel, TrainHistory]:
    """Train ``model.head`` in place on precomputed backbone features."""
    if len(train_labels) == 0:
        raise EmptySplit("training split is empty")
    if len(val_labels) == 0:
        raise EmptySplit("validation split is empty")

    dev = model.device
    xtr = torch.as_tensor(train_features, dtype=torch.float32).to(dev)
    ytr = torch.as_tensor(np.asarray(train_labels), dtype=torch.long).to(dev)
    xva = torch.as_tensor(val_features, dtype=torch.float32).to(dev)
    yva = torch.as_tensor(np.asarray(val_labels), dtype=torch.long).to(dev)

    head = model.head
    head.train()
    for p in head.parameters():
        p.requires_grad_(True)
    opt = torch.optim.Adam(head.parameters(), lr=cfg.learning_rate)

    history = TrainHistory()
    best_acc, best_state = -1.0, None
    n = len(ytr)
    for epoch in range(1, cfg.epochs + 1):
        order = torch.as_tensor(np.random.default_rng([model.head_seed, epoch]).permutation(n)).to(dev)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = nn.functional.cross_entropy(head(xtr[idx]), ytr[idx])
            if not torch.isfinite(loss):
                raise DivergedTraining(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        val_loss, val_acc = _evaluate(head, xva, yva)
        if not math.isfinite(val_loss):
            raise DivergedTraining(f"non-finite validation loss at epoch {epoch}")
        history.epochs.append(EpochRecord(epoch, total / n, val_loss, val_acc))
        log.info("%s epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f", model.tag, epoch, total / n, val_loss, val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = {k: v.detach().clone() for k, v in head.state_dict().items()}

    if cfg.checkpoint_policy is CheckpointPolicy.BEST_VAL and best_state is not None:
        head.load_state_dict(best_state)
    head.eval()
    for p in head.parameters():
        p.requires_grad_(False)
    model.meta.update(
        history=history.to_list(),
        checkpoint_policy=cfg.checkpoint_policy.value,
        train_config=cfg.to_dict(),
        best_val_accuracy=history.best_val_accuracy,
        best_epoch=history.best_epoch,
    )
    return model, history


def train(
    model: AdaptedModel,
    manifest: SplitManifest,
    cfg: TrainConfig = TrainConfig(),
    root: str | Path = ".",
    feature_batch_size: int = 32,
) -> tuple[AdaptedModel, TrainHistory]:
    """Train the head of ``model`` on the train split of ``manifest``.

    Image paths in the manifest are resolved against ``root``.
    """
    train_entries = manifest.select(Split.TRAIN)
    val_entries = manifest.select(Split.VAL)
    if not train_entries:
        raise EmptySplit("manifest has no training entries")
    if not val_entries:
        raise EmptySplit("manifest has no validation entries")
    ftr = extract_features(model, root, [e.path for e in train_entries], feature_batch_size)
    fva = extract_features(model, root, [e.path for e in val_entries], feature_batch_size)
    return train_head(model, ftr, [e.class_id for e in train_entries], fva, [e.class_id for e in val_entries], cfg)
