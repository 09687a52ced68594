"""Epoch loop with early stopping on validation loss."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .corpus import PAD, ContextBatch, Dialog, Example, Vocab, batch_examples
from .models import DialogModel, training_step
from .nn import ParameterStore
from .optim import AdamConfig
from .tensor import no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    patience: int = 3
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class TrainResult:
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = float("inf")
    best_store: Optional[ParameterStore] = None
    stopped_early: bool = False


def is_validation(dialog_id: str, fraction: float = 0.1) -> bool:
    """Stable hash split: md5 of the id mapped to [0, 1)."""
    h = int(hashlib.md5(dialog_id.encode("utf-8")).hexdigest()[:8], 16)
    return h / 2**32 < fraction


def split_dialogs(dialogs: Sequence[Dialog], fraction: float = 0.1):
    train = [d for d in dialogs if not is_validation(d.id, fraction)]
    val = [d for d in dialogs if is_validation(d.id, fraction)]
    return train, val


def evaluate_loss(model: DialogModel, batches: Sequence[ContextBatch]) -> float:
    """Token-weighted mean cross-entropy, dropout off.  Joint models sum the three parts."""
    sums: dict = {}
    counts: dict = {}
    with no_grad():
        for b in batches:
            _, parts = model.loss(b)
            targets = {"response": b.response_out, "belief": b.belief_out, "act": b.act_out}
            for key, value in parts.items():
                n = float((targets[key] != PAD).sum())
                sums[key] = sums.get(key, 0.0) + value * n
                counts[key] = counts.get(key, 0.0) + n
    if not sums:
        return float("nan")
    return sum(sums[k] / counts[k] for k in sums)


def train(model: DialogModel, train_examples: Sequence[Example], val_examples: Sequence[Example], vocab: Vocab,
          tc: TrainConfig, act_labels=None, on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train with shuffled mini-batches; keep the parameters of the best validation epoch.

    Without validation examples the training loss drives early stopping.
    Stops after ``patience + 1`` consecutive epochs without improvement.
    """
    rng = np.random.default_rng([tc.seed, 1])
    variant = model.cfg.variant
    max_ctx = model.cfg.max_context_len
    val_batches = batch_examples(val_examples, tc.batch_size, vocab, variant, max_ctx, act_labels) if val_examples else []
    result = TrainResult()
    bad = 0
    train_examples = list(train_examples)
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(train_examples))
        batches = batch_examples([train_examples[i] for i in order], tc.batch_size, vocab, variant, max_ctx, act_labels)
        losses, weights = [], []
        for b in batches:
            parts = training_step(model, b, tc.adam(), rng)
            losses.append(parts["loss"])
            weights.append(len(b))
        train_loss = float(np.average(losses, weights=weights))
        val_loss = evaluate_loss(model, val_batches) if val_batches else None
        monitor = val_loss if val_loss is not None else train_loss
        entry = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "step": model.store.step}
        result.history.append(entry)
        log.info("epoch %d train %.4f val %s", epoch, train_loss, "-" if val_loss is None else f"{val_loss:.4f}")
        if on_epoch:
            on_epoch(entry)
        if monitor < result.best_loss:
            result.best_loss = monitor
            result.best_epoch = epoch
            result.best_store = model.store.copy()
            bad = 0
        else:
            bad += 1
            if bad > tc.patience:
                result.stopped_early = True
                break
    return result
