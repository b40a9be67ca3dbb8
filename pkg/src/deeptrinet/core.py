"""Shared domain types: errors, class maps and run configuration."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence


class DeepTriNetError(Exception):
    """Base class for all toolkit errors."""


class ParseError(DeepTriNetError):
    pass


class ValidationError(DeepTriNetError):
    """Raised with every violated invariant, not just the first."""

    def __init__(self, problems: Sequence[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ArgumentError(DeepTriNetError, ValueError):
    pass


class ShapeError(DeepTriNetError, ValueError):
    pass


class RangeError(DeepTriNetError, ValueError):
    pass


class ConfigError(DeepTriNetError):
    pass


class UnknownColorError(DeepTriNetError):
    def __init__(self, position: tuple[int, int], color: tuple[int, int, int]):
        self.position = position
        self.color = color
        super().__init__(f"pixel {position} has color {color} which is not in the class map")


class EmptyDatasetError(DeepTriNetError):
    pass


class EmptyCoverageError(DeepTriNetError):
    pass


class EmptyMatrixError(DeepTriNetError):
    pass


class NonFiniteError(DeepTriNetError):
    pass


class NoTrainingError(DeepTriNetError):
    pass


class AllIgnoredError(DeepTriNetError):
    pass


# --------------------------------------------------------------------------
# Class maps
# --------------------------------------------------------------------------

RGB = tuple[int, int, int]


@dataclass(frozen=True)
class ClassEntry:
    index: int
    name: str
    color: RGB


@dataclass(frozen=True)
class ClassMap:
    """Bijection between class indices ``0..C-1`` and RGB mask colors."""

    entries: tuple[ClassEntry, ...]
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: e.index)))
        problems = _class_map_problems(self.entries)
        if problems:
            raise ValidationError(problems)

    @classmethod
    def from_colors(cls, colors: Iterable[Sequence[int]], names: Iterable[str] | None = None) -> "ClassMap":
        colors = [tuple(int(v) for v in c) for c in colors]
        names = list(names) if names is not None else [f"class{i}" for i in range(len(colors))]
        return cls(tuple(ClassEntry(i, n, c) for i, (n, c) in enumerate(zip(names, colors))))

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def colors(self) -> list[RGB]:
        return [e.color for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def _class_map_problems(entries: Sequence[ClassEntry]) -> list[str]:
    problems = []
    if len(entries) < 2:
        problems.append(f"class map needs at least 2 classes, got {len(entries)}")
    seen_idx: dict[int, ClassEntry] = {}
    seen_color: dict[RGB, ClassEntry] = {}
    for e in entries:
        if e.index in seen_idx:
            problems.append(f"duplicate class index {e.index} ({seen_idx[e.index].name!r} and {e.name!r})")
        seen_idx[e.index] = e
        if len(e.color) != 3 or any(not 0 <= v <= 255 for v in e.color):
            problems.append(f"class {e.index} ({e.name!r}) has invalid color {e.color}")
        if e.color in seen_color:
            problems.append(
                f"class {e.index} ({e.name!r}) reuses color {e.color} of class "
                f"{seen_color[e.color].index} ({seen_color[e.color].name!r})"
            )
        seen_color.setdefault(e.color, e)
    expected = set(range(len(entries)))
    if seen_idx and set(seen_idx) != expected:
        missing = sorted(expected - set(seen_idx))
        extra = sorted(set(seen_idx) - expected)
        problems.append(f"class indices must be contiguous from 0: missing {missing}, unexpected {extra}")
    return problems


def load_class_map(path: str | Path) -> ClassMap:
    """Read a class-map file with one ``index,name,R,G,B`` line per class.

    Blank lines and ``#`` comments are skipped.
    """
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise ParseError(f"{path}:{lineno}: expected 'index,name,R,G,B', got {raw.strip()!r}")
            try:
                idx, r, g, b = int(parts[0]), int(parts[2]), int(parts[3]), int(parts[4])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field in {raw.strip()!r}") from None
            entries.append(ClassEntry(idx, parts[1], (r, g, b)))
    return ClassMap(tuple(entries), source=str(path))


def write_class_map(cmap: ClassMap, path: str | Path) -> None:
    lines = ["# index,name,R,G,B"]
    lines += [f"{e.index},{e.name},{e.color[0]},{e.color[1]},{e.color[2]}" for e in cmap.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

BACKBONES = ("resnet-small", "mobilenet-like", "xception-like")
CHECKPOINT_METRICS = ("val_iou", "val_accuracy", "val_loss")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 5
    input_size: int = 256
    backbone: str = "resnet-small"
    output_stride: int = 16
    aspp_rates: tuple[int, ...] = (1, 6, 12, 18)
    aspp_channels: int = 64
    se_reduction: int = 8
    tau_spatial_kernel: int = 7
    decoder_channels: int = 64
    # Extra switches; both off reproduces the default architecture.
    tau_residual: bool = False
    se_after_each_conv: bool = False

    def problems(self) -> list[str]:
        p = []
        if self.num_classes < 2:
            p.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_size < 1:
            p.append(f"input_size must be positive, got {self.input_size}")
        if self.backbone not in BACKBONES:
            p.append(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.output_stride not in (8, 16):
            p.append(f"output_stride must be 8 or 16, got {self.output_stride}")
        elif self.input_size % self.output_stride:
            p.append(f"input_size {self.input_size} is not divisible by output_stride {self.output_stride}")
        rates = list(self.aspp_rates)
        if not rates or rates[0] != 1:
            p.append(f"aspp_rates must start with 1, got {rates}")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            p.append(f"aspp_rates must be strictly increasing, got {rates}")
        for name in ("aspp_channels", "decoder_channels", "se_reduction"):
            if getattr(self, name) < 1:
                p.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.se_reduction >= 1:
            for name in ("aspp_channels", "decoder_channels"):
                if getattr(self, name) >= 1 and getattr(self, name) % self.se_reduction:
                    p.append(f"se_reduction {self.se_reduction} does not divide {name} {getattr(self, name)}")
        k = self.tau_spatial_kernel
        if k < 1 or k % 2 == 0:
            p.append(f"tau_spatial_kernel must be a positive odd integer, got {k}")
        return p


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-3
    validation_fraction: float = 0.2
    seed: int = 0
    checkpoint_metric: str = "val_iou"
    grad_clip: float = 5.0
    class_weighting: bool = False

    def problems(self) -> list[str]:
        p = []
        if self.epochs < 0:
            p.append(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            p.append(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate > 0:
            p.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.validation_fraction < 1:
            p.append(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if self.checkpoint_metric not in CHECKPOINT_METRICS:
            p.append(f"checkpoint_metric must be one of {CHECKPOINT_METRICS}, got {self.checkpoint_metric!r}")
        if not self.grad_clip > 0:
            p.append(f"grad_clip must be > 0, got {self.grad_clip}")
        return p


def validate_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    """Return both configs unchanged, or raise one ValidationError listing every problem."""
    problems = model_cfg.problems() + train_cfg.problems()
    if problems:
        raise ValidationError(problems)
    return model_cfg, train_cfg


def _coerce(value: str, target, key: str):
    value = value.strip()
    try:
        if target is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if target is int:
            return int(value)
        if target is float:
            return float(value)
        if target == "rates":
            return tuple(int(v) for v in value.strip("[]()").replace(" ", "").split(",") if v)
    except ValueError:
        raise ParseError(f"bad value for {key!r}: {value!r}") from None
    return value


_FIELD_TYPES = {
    "int": int,
    "float": float,
    "bool": bool,
    "str": str,
    "tuple[int, ...]": "rates",
}


def _field_types(cls) -> dict:
    return {f.name: _FIELD_TYPES[f.type] for f in fields(cls)}


def parse_config_text(
    text: str,
    overrides: dict | None = None,
    defaults: dict | None = None,
) -> tuple[ModelConfig, TrainConfig]:
    """Parse flat ``key = value`` text into model and train configs.

    Precedence, lowest first: dataclass defaults, ``defaults``, the text,
    ``overrides`` (already typed values, e.g. from CLI flags). ``None``
    override values are skipped.
    """
    mtypes, ttypes = _field_types(ModelConfig), _field_types(TrainConfig)
    mvals: dict = {}
    tvals: dict = {}

    def put(key, value):
        if key in mtypes:
            mvals[key] = tuple(value) if mtypes[key] == "rates" else value
        elif key in ttypes:
            tvals[key] = value
        else:
            raise ParseError(f"unknown config key {key!r}")

    for key, value in (defaults or {}).items():
        put(key, value)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in mtypes:
            mvals[key] = _coerce(value, mtypes[key], key)
        elif key in ttypes:
            tvals[key] = _coerce(value, ttypes[key], key)
        else:
            raise ParseError(f"line {lineno}: unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if value is not None:
            put(key, value)
    return ModelConfig(**mvals), TrainConfig(**tvals)


def load_config(
    path: str | Path | None,
    overrides: dict | None = None,
    defaults: dict | None = None,
) -> tuple[ModelConfig, TrainConfig]:
    text = Path(path).read_text(encoding="utf-8") if path is not None else ""
    return parse_config_text(text, overrides, defaults)


def format_config(cfg) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
