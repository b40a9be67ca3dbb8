"""Toy land-cover scenes whose labels are a function of pixel color.

Used for smoke tests and the end-to-end demo. Scenes are blocky (class
regions are ``cell``-pixel grid cells) with Gaussian color noise.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import ClassMap, write_class_map
from .preprocess import decode_mask, write_rgb

CLASS_NAMES = ("building", "woods", "water", "road")
MASK_COLORS = ((255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0))
IMAGE_COLORS = ((190, 170, 150), (40, 100, 45), (35, 65, 150), (115, 115, 120))


def class_map(num_classes: int = 4) -> ClassMap:
    return ClassMap.from_colors(MASK_COLORS[:num_classes], CLASS_NAMES[:num_classes])


def make_scene(
    height: int,
    width: int,
    rng: np.random.Generator,
    num_classes: int = 4,
    cell: int = 32,
    noise: float = 8.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rgb uint8 image, index mask)`` for one random scene.

    The cell grid starts at a random phase so region edges are not tied to
    patch boundaries.
    """
    oy, ox = rng.integers(0, cell, size=2)
    gh, gw = -(-(height + oy) // cell), -(-(width + ox) // cell)
    coarse = rng.integers(0, num_classes, size=(gh, gw))
    labels = np.kron(coarse, np.ones((cell, cell), dtype=np.int64))[oy : oy + height, ox : ox + width]
    palette = np.array(IMAGE_COLORS[:num_classes], dtype=np.float64)
    image = palette[labels] + rng.normal(0.0, noise, size=(height, width, 3))
    return np.clip(np.round(image), 0, 255).astype(np.uint8), labels


def write_dataset(
    out_dir: str | Path,
    count: int,
    height: int = 256,
    width: int | None = None,
    seed: int = 0,
    num_classes: int = 4,
    prefix: str = "scene",
    cell: int = 32,
) -> tuple[Path, Path, Path]:
    """Write ``count`` scenes as ``images/`` and color ``masks/`` plus ``classes.txt``."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    cmap = class_map(num_classes)
    for i in range(count):
        image, labels = make_scene(height, width or height, rng, num_classes, cell)
        write_rgb(image, out_dir / "images" / f"{prefix}{i:03d}.png")
        write_rgb(decode_mask(labels, cmap), out_dir / "masks" / f"{prefix}{i:03d}.png")
    write_class_map(cmap, out_dir / "classes.txt")
    return out_dir / "images", out_dir / "masks", out_dir / "classes.txt"
