"""Grid planning, patch extraction and smooth overlap-weighted reassembly."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ArgumentError, EmptyCoverageError, ParseError, ShapeError


@dataclass(frozen=True)
class GridSpec:
    source_height: int
    source_width: int
    patch_size: int
    stride: int
    pad_top: int
    pad_bottom: int
    pad_left: int
    pad_right: int
    rows: int
    cols: int

    @property
    def padded_height(self) -> int:
        return self.source_height + self.pad_top + self.pad_bottom

    @property
    def padded_width(self) -> int:
        return self.source_width + self.pad_left + self.pad_right

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    def positions(self):
        """Yield ``(row, col, y0, x0)`` in row-major order."""
        for r in range(self.rows):
            for c in range(self.cols):
                yield r, c, r * self.stride, c * self.stride

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "GridSpec":
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = (s.strip() for s in line.partition("="))
            values[key] = int(value)
        names = {f.name for f in fields(cls)}
        if set(values) != names:
            raise ParseError(f"grid spec keys {sorted(values)} do not match {sorted(names)}")
        return cls(**values)


def _padded_extent(size: int, patch: int, stride: int) -> int:
    return patch + math.ceil(max(size - patch, 0) / stride) * stride


def plan_grid(height: int, width: int, patch_size: int, stride: int) -> GridSpec:
    """Smallest padded grid of ``patch_size`` windows at ``stride`` covering the raster.

    Padding is split evenly between the two sides, the odd pixel going to the
    bottom/right.
    """
    if height < 1 or width < 1:
        raise ArgumentError(f"raster dimensions must be positive, got {height}x{width}")
    if patch_size < 1:
        raise ArgumentError(f"patch_size must be positive, got {patch_size}")
    if not 1 <= stride <= patch_size:
        raise ArgumentError(f"stride must lie in [1, {patch_size}], got {stride}")
    ph = _padded_extent(height, patch_size, stride)
    pw = _padded_extent(width, patch_size, stride)
    top, left = (ph - height) // 2, (pw - width) // 2
    return GridSpec(
        source_height=height,
        source_width=width,
        patch_size=patch_size,
        stride=stride,
        pad_top=top,
        pad_bottom=ph - height - top,
        pad_left=left,
        pad_right=pw - width - left,
        rows=(ph - patch_size) // stride + 1,
        cols=(pw - patch_size) // stride + 1,
    )


def pad_image(image: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Reflect-pad an ``H x W`` or ``H x W x B`` array out to the grid's padded size."""
    if image.shape[:2] != (spec.source_height, spec.source_width):
        raise ShapeError(
            f"image is {image.shape[:2]}, grid expects {(spec.source_height, spec.source_width)}"
        )
    widths = [(spec.pad_top, spec.pad_bottom), (spec.pad_left, spec.pad_right)]
    widths += [(0, 0)] * (image.ndim - 2)
    if not any(a or b for a, b in widths):
        return image.copy()
    return np.pad(image, widths, mode="reflect")


def extract_patches(padded: np.ndarray, spec: GridSpec) -> list[np.ndarray]:
    if padded.shape[:2] != (spec.padded_height, spec.padded_width):
        raise ShapeError(
            f"padded array is {padded.shape[:2]}, grid expects {(spec.padded_height, spec.padded_width)}"
        )
    p = spec.patch_size
    return [padded[y : y + p, x : x + p].copy() for _, _, y, x in spec.positions()]


def make_blend_window(patch_size: int) -> np.ndarray:
    """Separable squared-sine taper, ``w(i) = sin^2(pi * (i + 0.5) / patch_size)``."""
    if patch_size < 2:
        raise ArgumentError(f"patch_size must be >= 2, got {patch_size}")
    w = np.sin(np.pi * (np.arange(patch_size) + 0.5) / patch_size) ** 2
    return np.outer(w, w)


def reassemble_smooth(
    patch_probs: Sequence[np.ndarray],
    spec: GridSpec,
    window: np.ndarray | None = None,
) -> np.ndarray:
    """Blend per-patch ``P x P x C`` probabilities into a source-sized ``H x W x C`` map.

    Every padded pixel gets the window-weighted mean of the patches covering
    it; padding is cropped afterwards.
    """
    if len(patch_probs) != spec.num_patches:
        raise ShapeError(f"expected {spec.num_patches} patches, got {len(patch_probs)}")
    p = spec.patch_size
    if window is None:
        window = make_blend_window(p)
    if window.shape != (p, p):
        raise ShapeError(f"window is {window.shape}, expected {(p, p)}")
    channels = patch_probs[0].shape[2] if patch_probs[0].ndim == 3 else None
    acc_shape = (spec.padded_height, spec.padded_width) + ((channels,) if channels else ())
    acc = np.zeros(acc_shape, dtype=np.float64)
    weight = np.zeros((spec.padded_height, spec.padded_width), dtype=np.float64)
    w3 = window[..., None] if channels else window
    for patch, (_, _, y, x) in zip(patch_probs, spec.positions()):
        if patch.shape[:2] != (p, p) or (channels and patch.shape[2] != channels):
            raise ShapeError(f"patch has shape {patch.shape}, expected {(p, p, channels)}")
        acc[y : y + p, x : x + p] += w3 * patch
        weight[y : y + p, x : x + p] += window
    if not np.all(weight > 0):
        raise EmptyCoverageError("some padded pixels are not covered by any patch")
    out = acc / (weight[..., None] if channels else weight)
    t, l = spec.pad_top, spec.pad_left
    return out[t : t + spec.source_height, l : l + spec.source_width]


def write_patches(
    patches: Sequence[np.ndarray],
    spec: GridSpec,
    out_dir: str | Path,
    basename: str,
) -> list[Path]:
    """Save patches as ``{basename}_r{row}_c{col}.png`` plus a ``{basename}.grid`` sidecar."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for patch, (r, c, _, _) in zip(patches, spec.positions()):
        path = out_dir / f"{basename}_r{r}_c{c}.png"
        Image.fromarray(np.ascontiguousarray(patch)).save(path)
        paths.append(path)
    (out_dir / f"{basename}.grid").write_text(spec.to_text(), encoding="utf-8")
    return paths


def read_grid_spec(path: str | Path) -> GridSpec:
    return GridSpec.from_text(Path(path).read_text(encoding="utf-8"))
