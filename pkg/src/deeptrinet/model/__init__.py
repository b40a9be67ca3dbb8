from .aspp import ASPPTAU
from .attention import TAU, AttentionGates, ChannelAttention, PixelAttention, SEBlock, SpatialAttention
from .backbone import Backbone
from .checkpoint import load_checkpoint, read_meta, save_checkpoint
from .network import DeepTriNet, build_model, forward

__all__ = [
    "ASPPTAU",
    "TAU",
    "AttentionGates",
    "Backbone",
    "ChannelAttention",
    "DeepTriNet",
    "PixelAttention",
    "SEBlock",
    "SpatialAttention",
    "build_model",
    "forward",
    "load_checkpoint",
    "read_meta",
    "save_checkpoint",
]
