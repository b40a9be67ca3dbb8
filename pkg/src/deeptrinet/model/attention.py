"""Squeeze-and-excitation and the three gates of the tri-level attention unit.

All blocks take NCHW tensors. Each exposes ``gate(x)`` returning the sigmoid
weights and ``forward(x)`` returning ``x`` scaled by them, so the weights can
be inspected (or replaced in tests) independently of the gating.
"""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import ArgumentError, ShapeError


def _check_nchw(x: torch.Tensor, channels: int, who: str) -> None:
    if x.dim() != 4:
        raise ShapeError(f"{who} expects a 4-d NCHW tensor, got shape {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ShapeError(f"{who} built for {channels} channels, got {x.shape[1]}")


class SEBlock(nn.Module):
    """Squeeze-and-Excitation channel recalibration.

    Global average pool -> Linear(n, n/r) -> ReLU -> Linear(n/r, n) -> sigmoid,
    then each channel is multiplied by its weight.
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ShapeError(f"reduction {reduction} must divide channel count {channels}")
        self.channels = channels
        hidden = channels // reduction
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        nn.init.zeros_(self.fc1.bias)
        nn.init.zeros_(self.fc2.bias)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        _check_nchw(x, self.channels, type(self).__name__)
        squeezed = x.mean(dim=(2, 3))
        weights = torch.sigmoid(self.fc2(F.relu(self.fc1(squeezed))))
        return weights[:, :, None, None]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


class ChannelAttention(SEBlock):
    """Channel gate of the attention unit; same bottleneck as SE.

    Unlike ``SEBlock`` the hidden width is ``max(1, n // r)`` so narrow maps
    are accepted.
    """

    def __init__(self, channels: int, reduction: int = 8):
        nn.Module.__init__(self)
        if reduction < 1:
            raise ShapeError(f"reduction must be >= 1, got {reduction}")
        self.channels = channels
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        nn.init.zeros_(self.fc1.bias)
        nn.init.zeros_(self.fc2.bias)


class SpatialAttention(nn.Module):
    """Per-location gate from the channel-wise mean and max maps."""

    def __init__(self, channels: int, kernel_size: int = 7):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ArgumentError(f"kernel_size must be a positive odd integer, got {kernel_size}")
        self.channels = channels
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)
        nn.init.zeros_(self.conv.bias)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        _check_nchw(x, self.channels, type(self).__name__)
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


class PixelAttention(nn.Module):
    """Independent gate for every (location, channel) from a 1x1 convolution."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.conv.bias)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        _check_nchw(x, self.channels, type(self).__name__)
        return torch.sigmoid(self.conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


class AttentionGates(NamedTuple):
    channel: torch.Tensor  # B x n x 1 x 1
    spatial: torch.Tensor  # B x 1 x h x w
    pixel: torch.Tensor  # B x n x h x w


class TAU(nn.Module):
    """Tri-level attention: channel, then spatial, then pixel gating.

    With ``residual=True`` the combined attenuation ``g`` is applied as
    ``x * (1 + g)`` instead of ``x * g``.
    """

    def __init__(self, channels: int, reduction: int = 8, spatial_kernel: int = 7, residual: bool = False):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(channels, spatial_kernel)
        self.pixel = PixelAttention(channels)
        self.residual = residual

    def gates(self, x: torch.Tensor) -> AttentionGates:
        gc = self.channel.gate(x)
        x = x * gc
        gs = self.spatial.gate(x)
        x = x * gs
        gp = self.pixel.gate(x)
        return AttentionGates(gc, gs, gp)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.pixel(self.spatial(self.channel(x)))
        if self.residual:
            return x + out
        return out
