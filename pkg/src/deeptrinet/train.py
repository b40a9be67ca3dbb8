"""Cross-entropy training with per-epoch validation and best-weight checkpointing."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import astuple, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader

from .core import (
    AllIgnoredError,
    ClassMap,
    EmptyDatasetError,
    NonFiniteError,
    NoTrainingError,
    ShapeError,
    TrainConfig,
)
from .evaluate import confusion, metrics, report_value
from .model import DeepTriNet, save_checkpoint
from .preprocess import DatasetManifest, PatchDataset

log = logging.getLogger(__name__)

HISTORY_COLUMNS = (
    "epoch", "train_loss", "val_loss", "train_acc", "val_acc", "train_prec", "val_prec",
    "train_rec", "val_rec", "train_iou", "val_iou",
)


def loss_ce(
    logits: torch.Tensor,
    targets: torch.Tensor,
    ignore_index: int | None = None,
    class_weights: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean per-pixel softmax cross-entropy for ``N x C x H x W`` logits."""
    if logits.dim() != 4 or targets.shape != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise ShapeError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    if ignore_index is not None and bool((targets == ignore_index).all()):
        raise AllIgnoredError("every target pixel is ignored")
    return F.cross_entropy(
        logits,
        targets.long(),
        weight=class_weights,
        ignore_index=-100 if ignore_index is None else ignore_index,
    )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    train_prec: float
    val_prec: float
    train_rec: float
    val_rec: float
    train_iou: float
    val_iou: float


@dataclass
class FitResult:
    history: list[EpochRecord]
    best_checkpoint: Path | None
    # (epoch, metric value) for every checkpoint written, in order
    checkpoints: list[tuple[int, float]] = field(default_factory=list)


def _inverse_frequency(dataset: PatchDataset, num_classes: int) -> torch.Tensor:
    counts = np.zeros(num_classes, dtype=np.float64)
    for i in range(len(dataset)):
        counts += np.bincount(dataset[i][1].numpy().ravel(), minlength=num_classes)
    weights = np.where(counts > 0, counts.sum() / np.maximum(counts, 1) / num_classes, 0.0)
    return torch.as_tensor(weights, dtype=torch.float32)


def _epoch_pass(model, loader, num_classes, class_weights=None, optimizer=None, grad_clip=None):
    """One pass over ``loader``; trains when an optimizer is given.

    Returns the pixel-weighted mean loss and the confusion matrix of the
    argmax predictions made during the pass.
    """
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    loss_sum, pixels = 0.0, 0
    training = optimizer is not None
    model.train(training)
    with torch.set_grad_enabled(training):
        for x, y in loader:
            logits = model(x)
            loss = loss_ce(logits, y, class_weights=class_weights)
            if not torch.isfinite(loss):
                raise NonFiniteError(f"loss became {loss.item()}")
            if training:
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
                optimizer.step()
            n = y.numel()
            loss_sum += loss.item() * n
            pixels += n
            cm += confusion(logits.detach().argmax(1).numpy(), y.numpy(), num_classes)
    return loss_sum / pixels, cm


def _summary(cm: np.ndarray) -> tuple[float, float, float, float]:
    rep = metrics(cm)
    return rep.accuracy, report_value(rep.macro_precision), report_value(rep.macro_recall), report_value(rep.macro_iou)


def _improved(metric: str, value: float, best: float | None) -> bool:
    if math.isnan(value):
        return False
    if best is None:
        return True
    return value < best if metric == "val_loss" else value > best


def fit(
    model: DeepTriNet,
    manifest: DatasetManifest,
    tcfg: TrainConfig,
    cmap: ClassMap,
    out_dir: str | Path,
    strict_colors: bool = True,
) -> FitResult:
    """Train ``model`` on the manifest's train split, validating every epoch.

    Whenever ``tcfg.checkpoint_metric`` strictly improves, the weights are
    written to ``out_dir/best.ckpt``. A non-finite loss aborts with
    NonFiniteError and leaves the last good checkpoint in place.
    """
    if tcfg.epochs == 0:
        raise NoTrainingError("epochs = 0: nothing to train")
    num_classes = model.config.num_classes
    if num_classes != cmap.num_classes:
        raise ShapeError(f"model has {num_classes} classes, class map has {cmap.num_classes}")
    train_pairs, val_pairs = manifest.subset("train"), manifest.subset("val")
    if not train_pairs:
        raise EmptyDatasetError("manifest has no training pairs")
    if not val_pairs:
        raise EmptyDatasetError("manifest has no validation pairs")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"

    cache = len(manifest) <= 512
    train_ds = PatchDataset(train_pairs, cmap, strict_colors, cache=cache)
    val_ds = PatchDataset(val_pairs, cmap, strict_colors, cache=cache)
    torch.manual_seed(tcfg.seed)
    train_loader = DataLoader(
        train_ds, batch_size=tcfg.batch_size, shuffle=True,
        generator=torch.Generator().manual_seed(tcfg.seed),
    )
    val_loader = DataLoader(val_ds, batch_size=tcfg.batch_size, shuffle=False)
    weights = _inverse_frequency(train_ds, num_classes) if tcfg.class_weighting else None
    optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate)

    result = FitResult(history=[], best_checkpoint=None)
    best = None
    for epoch in range(1, tcfg.epochs + 1):
        try:
            train_loss, train_cm = _epoch_pass(model, train_loader, num_classes, weights, optimizer, tcfg.grad_clip)
            val_loss, val_cm = _epoch_pass(model, val_loader, num_classes, weights)
        except NonFiniteError as exc:
            raise NonFiniteError(
                f"epoch {epoch}: {exc}; last good checkpoint: {result.best_checkpoint}"
            ) from exc
        tr, va = _summary(train_cm), _summary(val_cm)
        rec = EpochRecord(epoch, train_loss, val_loss, tr[0], va[0], tr[1], va[1], tr[2], va[2], tr[3], va[3])
        result.history.append(rec)
        value = {"val_iou": rec.val_iou, "val_accuracy": rec.val_acc, "val_loss": rec.val_loss}[tcfg.checkpoint_metric]
        if _improved(tcfg.checkpoint_metric, value, best):
            best = value
            save_checkpoint(model, best_path, {"epoch": epoch, tcfg.checkpoint_metric: repr(value)})
            result.best_checkpoint = best_path
            result.checkpoints.append((epoch, value))
        log.info(
            "epoch %d/%d train_loss %.4f val_loss %.4f train_acc %.4f val_acc %.4f val_iou %.4f",
            epoch, tcfg.epochs, rec.train_loss, rec.val_loss, rec.train_acc, rec.val_acc, rec.val_iou,
        )
    model.eval()
    return result


# --------------------------------------------------------------------------
# History export
# --------------------------------------------------------------------------

def export_history(history: list[EpochRecord], path: str | Path, plot: bool = True) -> list[Path]:
    """Write the history CSV (and a 4-panel PNG next to it); returns written paths."""
    if not history:
        raise ValueError("history is empty")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([rec.epoch] + [repr(float(v)) for v in astuple(rec)[1:]])
    written = [path]
    if plot:
        written.append(plot_history(history, path.with_suffix(".png")))
    return written


def read_history(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HISTORY_COLUMNS:
            raise ValueError(f"unexpected history header {header}")
        return [EpochRecord(int(row[0]), *(float(v) for v in row[1:])) for row in reader]


def history_figure(history: list[EpochRecord]):
    """Four panels (accuracy, precision, recall, IoU), each with train and validation curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in history]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, (key, title) in zip(
        axes.flat, [("acc", "Accuracy"), ("prec", "Precision"), ("rec", "Recall"), ("iou", "IoU")]
    ):
        ax.plot(epochs, [getattr(r, f"train_{key}") for r in history], label="train")
        ax.plot(epochs, [getattr(r, f"val_{key}") for r in history], label="validation")
        ax.set_title(title)
        ax.set_xlabel("epoch")
        ax.set_ylim(0, 1.02)
        ax.legend()
    fig.tight_layout()
    return fig


def plot_history(history: list[EpochRecord], path: str | Path) -> Path:
    import matplotlib.pyplot as plt

    fig = history_figure(history)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
