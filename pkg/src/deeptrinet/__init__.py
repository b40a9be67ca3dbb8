"""DeepTriNet: attention-augmented DeepLabv3+ for satellite image segmentation."""
from .core import (
    ClassMap,
    ModelConfig,
    TrainConfig,
    load_class_map,
    load_config,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "ClassMap",
    "ModelConfig",
    "TrainConfig",
    "load_class_map",
    "load_config",
    "validate_config",
]
