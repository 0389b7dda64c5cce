"""Cross-entropy loss, decoupled-decay Adam, and the training loops.

``fit`` trains one model on in-memory arrays with seeded per-epoch shuffling
and per-epoch held-out evaluation. ``train_cross_validation`` runs the k-fold
protocol over a dataset index, writing one history JSON per fold, a metrics
CSV (``fold,epoch,split,oa,se_macro,sp_macro,loss`` plus a final ``mean``
row), and one checkpoint per fold (final-epoch weights).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import save_checkpoint
from .data import DatasetIndex, FoldSplit, ImageStore
from .errors import ConfigError, NumericError
from .metrics import ConfusionMatrix, evaluate_metrics
from .model import ModelConfig, MpoxMamba, build_model
from .nn import Parameter
from .tensor import Tensor, make_op, no_grad


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability of the target classes.

    Stabilized by max-subtraction; gradient is (softmax - onehot) / N.
    """
    targets = np.asarray(targets, dtype=np.int64).ravel()
    if logits.ndim != 2 or targets.shape[0] != logits.shape[0]:
        raise ConfigError(f"cross_entropy: logits {logits.shape} vs {targets.shape[0]} targets")
    n, k = logits.shape
    if np.any((targets < 0) | (targets >= k)):
        raise ConfigError(f"cross_entropy: target outside [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(n), targets]
    out = np.asarray(losses.mean(), dtype=logits.dtype)

    def vjp(g):
        probs = np.exp(shifted - log_z[:, None])
        probs[np.arange(n), targets] -= 1.0
        return (probs * (g / n),)

    return make_op(out, (logits,), vjp, "cross_entropy")


class AdamW:
    """Bias-corrected Adam with decoupled weight decay.

    The decay step w <- w - lr*wd*w is applied independently of the gradient
    update. Non-finite gradients abort with the parameter's name.
    """

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            grad = p.grad
            if grad is None:
                grad = np.zeros_like(p.data)
            if not np.isfinite(grad).all():
                raise NumericError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs/batch_size must be >= 1, got {self}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_oa: float
    val_loss: Optional[float] = None
    val_oa: Optional[float] = None
    val_se_macro: Optional[float] = None
    val_sp_macro: Optional[float] = None


@dataclass
class FitHistory:
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def train_losses(self) -> List[float]:
        return [r.train_loss for r in self.records]

    def to_json(self) -> List[Dict]:
        return [vars(r) for r in self.records]


def evaluate(model: MpoxMamba, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 16) -> Tuple[ConfusionMatrix, float]:
    """Inference-mode confusion matrix and mean loss over a dataset."""
    was_training = model.training
    model.eval()
    cm = ConfusionMatrix(model.cfg.num_classes)
    losses = []
    dtype = model.cfg.np_dtype
    try:
        with no_grad():
            for start in range(0, len(labels), batch_size):
                stop = min(start + batch_size, len(labels))
                batch = Tensor(images[start:stop].astype(dtype, copy=False))
                logits = model(batch)
                losses.append(cross_entropy(logits, labels[start:stop]).item() * (stop - start))
                cm.update(labels[start:stop], logits.data.argmax(axis=1))
    finally:
        model.train(was_training)
    return cm, float(np.sum(losses) / len(labels))


def fit(model: MpoxMamba, images: np.ndarray, labels: np.ndarray,
        train_cfg: TrainConfig, seed: int = 0,
        val_images: Optional[np.ndarray] = None,
        val_labels: Optional[np.ndarray] = None,
        log: Optional[Callable[[str], None]] = None) -> FitHistory:
    """Train on in-memory arrays; per-epoch seeded shuffling, no augmentation."""
    train_cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    optimizer = AdamW(model.parameters(), lr=train_cfg.lr, beta1=train_cfg.beta1,
                      beta2=train_cfg.beta2, eps=train_cfg.eps,
                      weight_decay=train_cfg.weight_decay)
    history = FitHistory()
    dtype = model.cfg.np_dtype
    n = len(labels)
    for epoch in range(train_cfg.epochs):
        model.train(True)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, train_cfg.batch_size):
            ids = perm[start:start + train_cfg.batch_size]
            batch = Tensor(images[ids].astype(dtype, copy=False))
            logits = model(batch)
            loss = cross_entropy(logits, labels[ids])
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(ids)
            correct += int((logits.data.argmax(axis=1) == labels[ids]).sum())
        record = EpochRecord(epoch=epoch, train_loss=epoch_loss / n, train_oa=correct / n)
        if val_images is not None:
            cm, val_loss = evaluate(model, val_images, val_labels, train_cfg.batch_size)
            report = evaluate_metrics(cm)
            record.val_loss = val_loss
            record.val_oa = report.oa
            record.val_se_macro = report.se_macro
            record.val_sp_macro = report.sp_macro
        history.records.append(record)
        if log:
            log(f"epoch {epoch}: train loss {record.train_loss:.4f} oa {record.train_oa:.3f}"
                + (f" | val oa {record.val_oa:.3f}" if record.val_oa is not None else ""))
    return history


@dataclass
class FoldResult:
    fold: int
    history: FitHistory
    checkpoint_path: Path
    val_oa: float
    val_se_macro: float
    val_sp_macro: float
    val_loss: float


def train_cross_validation(model_cfg: ModelConfig, index: DatasetIndex, split: FoldSplit,
                           train_cfg: TrainConfig, seed: int, out_dir: Union[str, Path],
                           log: Optional[Callable[[str], None]] = None) -> List[FoldResult]:
    """k-fold protocol: train on k-1 folds, evaluate the held-out fold.

    Each fold gets its own deterministic model/shuffle seeds derived from the
    master seed; final-epoch weights are checkpointed per fold.
    """
    if index.num_classes != model_cfg.num_classes:
        raise ConfigError(
            f"dataset has {index.num_classes} classes, model expects {model_cfg.num_classes}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = ImageStore(index, model_cfg.input_hw)
    labels = index.labels()
    results: List[FoldResult] = []

    for fold in range(split.k):
        fold_seed = int(np.random.SeedSequence((seed, fold)).generate_state(1)[0])
        model = build_model(model_cfg, seed=fold_seed)
        train_ids = split.train_indices(fold)
        val_ids = split.val_indices(fold)
        if log:
            log(f"fold {fold}: {len(train_ids)} train / {len(val_ids)} val samples")
        history = fit(model, store.batch(train_ids), labels[train_ids], train_cfg,
                      seed=fold_seed, val_images=store.batch(val_ids),
                      val_labels=labels[val_ids], log=log)
        ckpt_path = out_dir / f"fold{fold}.mpxm"
        save_checkpoint(model, ckpt_path)
        with open(out_dir / f"fold{fold}_history.json", "w") as fh:
            json.dump({"fold": fold, "seed": fold_seed, "epochs": history.to_json()}, fh, indent=2)
        last = history.records[-1]
        results.append(FoldResult(fold=fold, history=history, checkpoint_path=ckpt_path,
                                  val_oa=last.val_oa, val_se_macro=last.val_se_macro,
                                  val_sp_macro=last.val_sp_macro, val_loss=last.val_loss))

    write_metrics_csv(out_dir / "metrics.csv", results)
    return results


def write_metrics_csv(path: Union[str, Path], results: List[FoldResult]) -> None:
    """Per-epoch rows for both splits, then a final 'mean' summary row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "epoch", "split", "oa", "se_macro", "sp_macro", "loss"])
        for result in results:
            for rec in result.history.records:
                writer.writerow([result.fold, rec.epoch, "train",
                                 f"{rec.train_oa:.6f}", "", "", f"{rec.train_loss:.6f}"])
                if rec.val_oa is not None:
                    writer.writerow([result.fold, rec.epoch, "val",
                                     f"{rec.val_oa:.6f}", f"{rec.val_se_macro:.6f}",
                                     f"{rec.val_sp_macro:.6f}", f"{rec.val_loss:.6f}"])
        if results:
            mean = lambda vals: f"{float(np.mean(vals)):.6f}"
            writer.writerow(["mean", "", "val",
                             mean([r.val_oa for r in results]),
                             mean([r.val_se_macro for r in results]),
                             mean([r.val_sp_macro for r in results]),
                             mean([r.val_loss for r in results])])
