"""Pixel-wise confusion counts, derived metrics, and whole-raster prediction."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ClassMap, EmptyMatrixError, ShapeError
from .preprocess import decode_mask, encode_mask, normalize
from .tiling import extract_patches, make_blend_window, pad_image, plan_grid, reassemble_smooth, write_patches


def confusion(pred: np.ndarray, target: np.ndarray, num_classes: int, ignore_index: int | None = None) -> np.ndarray:
    """``C x C`` counts with ``cm[t, p]`` = pixels of true class t predicted as p."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    pred, target = pred.ravel().astype(np.int64), target.ravel().astype(np.int64)
    if ignore_index is not None:
        keep = target != ignore_index
        pred, target = pred[keep], target[keep]
    for name, arr in (("prediction", pred), ("target", target)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ShapeError(f"{name} values must lie in [0, {num_classes})")
    return np.bincount(target * num_classes + pred, minlength=num_classes**2).reshape(num_classes, num_classes)


def _ratio(num: float, den: float) -> float | None:
    return float(num / den) if den > 0 else None


def _mean(values: Sequence[float | None], use: Sequence[bool]) -> float | None:
    picked = [v for v, u in zip(values, use) if u and v is not None]
    return float(np.mean(picked)) if picked else None


@dataclass
class MetricsReport:
    """Accuracy plus per-class and macro precision/recall/IoU.

    Per-class entries are ``None`` where the ratio has a zero denominator.
    Macro means run over classes that occur in the ground truth and are not
    in ``excluded_classes``.
    """

    accuracy: float
    precision: list[float | None]
    recall: list[float | None]
    iou: list[float | None]
    macro_precision: float | None
    macro_recall: float | None
    macro_iou: float | None
    absent_classes: list[int]
    excluded_classes: list[int] = field(default_factory=list)
    total_pixels: int = 0
    class_names: list[str] | None = None
    confusion: list[list[int]] | None = None

    def to_text(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.6f}"

        names = self.class_names or [str(i) for i in range(len(self.iou))]
        lines = [
            f"accuracy = {fmt(self.accuracy)}",
            f"macro_precision = {fmt(self.macro_precision)}",
            f"macro_recall = {fmt(self.macro_recall)}",
            f"macro_iou = {fmt(self.macro_iou)}",
            f"total_pixels = {self.total_pixels}",
            f"absent_classes = {','.join(map(str, self.absent_classes))}",
            f"excluded_classes = {','.join(map(str, self.excluded_classes))}",
        ]
        for metric in ("precision", "recall", "iou"):
            for name, v in zip(names, getattr(self, metric)):
                lines.append(f"{metric}.{name} = {fmt(v)}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Write the text report and its JSON twin; returns both paths."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        twin = path.with_suffix(".json") if path.suffix != ".json" else path.with_suffix(".txt")
        text_path, json_path = (path, twin) if path.suffix != ".json" else (twin, path)
        text_path.write_text(self.to_text(), encoding="utf-8")
        json_path.write_text(self.to_json(), encoding="utf-8")
        return text_path, json_path


def metrics(
    cm: np.ndarray,
    exclude: Sequence[int] = (),
    class_names: Sequence[str] | None = None,
) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise EmptyMatrixError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)  # true pixels per class
    col = cm.sum(axis=0).astype(np.float64)  # predicted pixels per class
    precision = [_ratio(tp[c], col[c]) for c in range(len(cm))]
    recall = [_ratio(tp[c], row[c]) for c in range(len(cm))]
    iou = [_ratio(tp[c], row[c] + col[c] - tp[c]) for c in range(len(cm))]
    absent = [c for c in range(len(cm)) if row[c] == 0]
    use = [row[c] > 0 and c not in exclude for c in range(len(cm))]
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        iou=iou,
        macro_precision=_mean(precision, use),
        macro_recall=_mean(recall, use),
        macro_iou=_mean(iou, use),
        absent_classes=absent,
        excluded_classes=sorted(set(exclude)),
        total_pixels=total,
        class_names=list(class_names) if class_names is not None else None,
        confusion=cm.tolist(),
    )


# --------------------------------------------------------------------------
# Whole-raster prediction
# --------------------------------------------------------------------------

@dataclass
class Prediction:
    labels: np.ndarray  # H x W int
    colors: np.ndarray  # H x W x 3 uint8
    probs: np.ndarray  # H x W x C float64


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_patches(model, patches: Sequence[np.ndarray], batch_size: int = 8) -> list[np.ndarray]:
    """Softmax probabilities (``P x P x C``) for uint8 RGB patches."""
    from .model import forward

    out = []
    for i in range(0, len(patches), batch_size):
        batch = np.stack([normalize(p, np.float32) for p in patches[i : i + batch_size]])
        out.extend(_softmax(forward(model, batch)))
    return out


def predict_image(
    model,
    image: np.ndarray,
    cmap: ClassMap,
    stride: int | None = None,
    batch_size: int = 8,
    emit_patches: str | Path | None = None,
    basename: str = "image",
) -> Prediction:
    """Grid, predict and smoothly reassemble a full raster.

    ``stride`` defaults to half the patch size. With ``emit_patches`` the
    argmax of every patch is also written there as a color tile.
    """
    patch = model.config.input_size
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 raster, got {image.shape}")
    if model.config.num_classes != cmap.num_classes:
        raise ShapeError(
            f"model predicts {model.config.num_classes} classes but the class map has {cmap.num_classes}"
        )
    stride = stride or patch // 2
    spec = plan_grid(image.shape[0], image.shape[1], patch, stride)
    patches = extract_patches(pad_image(image, spec), spec)
    probs = predict_patches(model, patches, batch_size)
    if emit_patches is not None:
        tiles = [decode_mask(p.argmax(axis=-1), cmap) for p in probs]
        write_patches(tiles, spec, emit_patches, basename)
    full = reassemble_smooth(probs, spec, make_blend_window(patch))
    labels = full.argmax(axis=-1)
    return Prediction(labels=labels, colors=decode_mask(labels, cmap), probs=full)


def evaluate_image(
    model,
    image: np.ndarray,
    mask: np.ndarray,
    cmap: ClassMap,
    stride: int | None = None,
    ignore_background: bool = False,
    strict: bool = True,
) -> MetricsReport:
    """Metrics of the smooth tiled prediction against a color ground-truth mask."""
    if image.shape[:2] != mask.shape[:2]:
        raise ShapeError(f"image {image.shape[:2]} and mask {mask.shape[:2]} differ in size")
    pred = predict_image(model, image, cmap, stride)
    truth = encode_mask(mask, cmap, strict=strict)
    cm = confusion(encode_mask(pred.colors, cmap), truth, cmap.num_classes)
    return metrics(cm, exclude=(0,) if ignore_background else (), class_names=cmap.names)


def report_value(v: float | None) -> float:
    return math.nan if v is None else v
