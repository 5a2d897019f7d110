"""Minibatch MSE training with ADAM and early stopping on validation PSNR."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .imgio import DatasetSplit, PatchPair
from .metrics import psnr
from .nn import ModelGraph, mse_loss
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    patience_epochs: int = 50
    max_epochs: int = 500
    batch_size: int = 16
    seed: int = 0
    val_metric: str = "psnr"
    max_steps: int | None = None

    def __post_init__(self):
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.val_metric != "psnr":
            raise ValueError(f"unsupported validation metric {self.val_metric!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_psnr: float


def stack_pairs(pairs: list[PatchPair]) -> tuple[np.ndarray, np.ndarray]:
    """Stack patch pairs into ``(N, 1, h, w)`` LR and ``(N, 1, H, W)`` HR arrays."""
    if not pairs:
        raise ValueError("no patch pairs to stack")
    lr = np.stack([p.lr for p in pairs])[:, None].astype(np.float64)
    hr = np.stack([p.hr for p in pairs])[:, None].astype(np.float64)
    return lr, hr


def mean_psnr(model: ModelGraph, lr: np.ndarray, hr: np.ndarray, chunk: int = 32) -> float:
    """Mean per-image PSNR of clamped inference outputs, reduced in index order."""
    scores = []
    for start in range(0, len(lr), chunk):
        out = np.clip(model.forward(lr[start : start + chunk], training=False), 0.0, 1.0)
        for pred, ref in zip(out, hr[start : start + chunk]):
            scores.append(psnr(ref[0], pred[0]))
    return float(np.mean(scores))


def train(
    model: ModelGraph,
    data: DatasetSplit,
    cfg: TrainConfig,
    validate: Callable[[ModelGraph], float] | None = None,
) -> tuple[ModelGraph, list[EpochRecord]]:
    """Train ``model`` in place and restore the best-validation weights.

    ``validate`` overrides the default score (mean PSNR over ``data.val``);
    when neither is available the training set is scored instead. Training
    stops once ``patience_epochs`` epochs pass without a new best score, after
    ``max_epochs`` epochs, or after ``max_steps`` optimiser steps.
    """
    if not data.train:
        raise ValueError("training set is empty")
    lr_train, hr_train = stack_pairs(data.train)
    if validate is None:
        lr_val, hr_val = stack_pairs(data.val) if data.val else (lr_train, hr_train)

        def validate(m):
            return mean_psnr(m, lr_val, hr_val)

    rng = np.random.default_rng(cfg.seed)
    params = [p for _, p in model.named_params()]
    opt = Adam(params, lr=cfg.learning_rate)
    n = len(lr_train)
    history: list[EpochRecord] = []
    best_score, best_epoch, best_state = -np.inf, 0, model.state()
    steps = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            model.zero_grad()
            pred = model.forward(lr_train[idx], training=True)
            loss, grad = mse_loss(pred, hr_train[idx])
            model.backward(grad)
            opt.step()
            total += loss * len(idx)
            seen += len(idx)
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        score = float(validate(model))
        history.append(EpochRecord(epoch, total / seen, score))
        log.debug("epoch %d loss %.6g val %.4f", epoch, total / seen, score)
        if score > best_score:
            best_score, best_epoch, best_state = score, epoch, model.state()
        elif epoch - best_epoch >= cfg.patience_epochs:
            break
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    model.load_state(best_state)
    return model, history


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_psnr"])
    for rec in history:
        w.writerow([rec.epoch, f"{rec.train_loss:.9g}", f"{rec.val_psnr:.6f}"])
    return buf.getvalue()
