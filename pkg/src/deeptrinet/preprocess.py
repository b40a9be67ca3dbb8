"""Pixel normalization, mask color codecs and dataset manifests."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ClassMap,
    EmptyDatasetError,
    ParseError,
    RangeError,
    ShapeError,
    TrainConfig,
    UnknownColorError,
)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


def normalize(image: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Map 8-bit pixel values onto [-1, 1] as ``x / 127.5 - 1``."""
    image = np.asarray(image)
    if image.size and (image.min() < 0 or image.max() > 255):
        raise RangeError(f"pixel values must lie in [0, 255], got [{image.min()}, {image.max()}]")
    if np.issubdtype(image.dtype, np.floating) and not np.array_equal(image, np.round(image)):
        raise RangeError("normalize expects integer pixel values")
    return (image.astype(np.float64) / 127.5 - 1.0).astype(dtype, copy=False)


def denormalize(norm: np.ndarray) -> np.ndarray:
    norm = np.asarray(norm, dtype=np.float64)
    if norm.size and (norm.min() < -1 - 1e-6 or norm.max() > 1 + 1e-6):
        raise RangeError(f"normalized values must lie in [-1, 1], got [{norm.min()}, {norm.max()}]")
    return np.clip(np.round((norm + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _pack(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.int64)
    return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]


@dataclass
class EncodeStats:
    unknown_pixels: int = 0


def encode_mask(
    color_mask: np.ndarray,
    cmap: ClassMap,
    strict: bool = True,
    stats: EncodeStats | None = None,
) -> np.ndarray:
    """Convert an ``H x W x 3`` color mask to an ``H x W`` index mask.

    In lenient mode (``strict=False``) colors missing from the map become
    class 0 and their count is stored in ``stats.unknown_pixels``.
    """
    color_mask = np.asarray(color_mask)
    if color_mask.ndim != 3 or color_mask.shape[2] < 3:
        raise ShapeError(f"color mask must be H x W x 3, got {color_mask.shape}")
    keys = _pack(color_mask[..., :3])
    palette = _pack(np.array(cmap.colors))
    order = np.argsort(palette)
    sorted_palette = palette[order]
    pos = np.clip(np.searchsorted(sorted_palette, keys), 0, len(palette) - 1)
    known = sorted_palette[pos] == keys
    out = np.where(known, order[pos], 0).astype(np.int64)
    n_unknown = int(known.size - known.sum())
    if n_unknown:
        if strict:
            y, x = (int(v) for v in np.argwhere(~known)[0])
            raise UnknownColorError((y, x), tuple(int(v) for v in color_mask[y, x, :3]))
        log.warning("%d pixels had colors outside the class map; mapped to class 0", n_unknown)
    if stats is not None:
        stats.unknown_pixels = n_unknown
    return out


def decode_mask(mask: np.ndarray, cmap: ClassMap) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() >= cmap.num_classes):
        raise IndexError(f"mask values must lie in [0, {cmap.num_classes}), got [{mask.min()}, {mask.max()}]")
    palette = np.array(cmap.colors, dtype=np.uint8)
    return palette[mask]


# --------------------------------------------------------------------------
# Raster IO
# --------------------------------------------------------------------------

def read_rgb(path: str | Path) -> np.ndarray:
    from PIL import Image

    Image.MAX_IMAGE_PIXELS = None
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_rgb(array: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(array.astype(np.uint8))).save(path)


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    pairs: list[tuple[Path, Path]]
    splits: list[str]
    class_map_ref: str | None = None

    def subset(self, split: str) -> list[tuple[Path, Path]]:
        return [p for p, s in zip(self.pairs, self.splits) if s == split]

    def __len__(self) -> int:
        return len(self.pairs)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        base = path.parent.resolve()
        lines = []
        if self.class_map_ref:
            lines.append(f"# classes\t{self.class_map_ref}")
        for (img, msk), split in zip(self.pairs, self.splits):
            lines.append(f"{_rel(img, base)}\t{_rel(msk, base)}\t{split}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        base = path.parent
        pairs, splits, ref = [], [], None
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if raw.startswith("# classes\t"):
                ref = raw.split("\t", 1)[1]
                continue
            if not raw.strip() or raw.startswith("#"):
                continue
            parts = raw.split("\t")
            if len(parts) != 3 or parts[2] not in ("train", "val"):
                raise ParseError(f"{path}:{lineno}: expected 'image<TAB>mask<TAB>train|val'")
            pairs.append((base / parts[0], base / parts[1]))
            splits.append(parts[2])
        return cls(pairs, splits, ref)


def _rel(p: Path, base: Path) -> str:
    p = Path(p).resolve()
    try:
        return str(p.relative_to(base))
    except ValueError:
        return str(p)


def _images_by_stem(directory: Path) -> dict[str, Path]:
    return {
        p.stem: p
        for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    }


def split_indices(n: int, validation_fraction: float, seed: int) -> np.ndarray:
    """Boolean array marking which of ``n`` items go to validation."""
    n_val = int(round(n * validation_fraction))
    n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
    perm = np.random.default_rng(seed).permutation(n)
    is_val = np.zeros(n, dtype=bool)
    is_val[perm[:n_val]] = True
    return is_val


def build_manifest(
    image_dir: str | Path,
    mask_dir: str | Path,
    cmap: ClassMap | None,
    cfg: TrainConfig,
) -> DatasetManifest:
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    images = _images_by_stem(image_dir) if image_dir.is_dir() else {}
    masks = _images_by_stem(mask_dir) if mask_dir.is_dir() else {}
    for stem in sorted(images.keys() - masks.keys()):
        log.warning("image %s has no mask; excluded", images[stem])
    for stem in sorted(masks.keys() - images.keys()):
        log.warning("mask %s has no image; excluded", masks[stem])
    stems = sorted(images.keys() & masks.keys())
    if not stems:
        raise EmptyDatasetError(f"no image/mask pairs found in {image_dir} and {mask_dir}")
    is_val = split_indices(len(stems), cfg.validation_fraction, cfg.seed)
    return DatasetManifest(
        pairs=[(images[s], masks[s]) for s in stems],
        splits=["val" if v else "train" for v in is_val],
        class_map_ref=cmap.source if cmap is not None else None,
    )


class PatchDataset:
    """(normalized image, index mask) pairs loaded lazily from disk.

    Items are ``(3 x H x W float32, H x W int64)`` tensors ready for the network.
    """

    def __init__(self, pairs: list[tuple[Path, Path]], cmap: ClassMap, strict: bool = True, cache: bool = False):
        self.pairs = list(pairs)
        self.cmap = cmap
        self.strict = strict
        self._cache: dict[int, tuple] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int):
        import torch

        if self._cache is not None and i in self._cache:
            return self._cache[i]
        img_path, mask_path = self.pairs[i]
        image = read_rgb(img_path)
        mask = encode_mask(read_rgb(mask_path), self.cmap, strict=self.strict)
        if image.shape[:2] != mask.shape:
            raise ShapeError(f"{img_path} is {image.shape[:2]} but {mask_path} is {mask.shape}")
        item = (
            torch.from_numpy(normalize(image, np.float32).transpose(2, 0, 1).copy()),
            torch.from_numpy(mask),
        )
        if self._cache is not None:
            self._cache[i] = item
        return item
