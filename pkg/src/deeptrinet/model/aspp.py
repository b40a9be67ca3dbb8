from __future__ import annotations

import logging
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import ConfigError, ShapeError
from .attention import TAU

log = logging.getLogger(__name__)


def _conv_bn_relu(cin: int, cout: int, rate: int) -> nn.Sequential:
    if rate == 1:
        conv = nn.Conv2d(cin, cout, 1, bias=False)
    else:
        conv = nn.Conv2d(cin, cout, 3, padding=rate, dilation=rate, bias=False)
    return nn.Sequential(conv, nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


class ASPPTAU(nn.Module):
    """Atrous spatial pyramid pooling whose convolutional branches each pass through a TAU.

    Branches: a 1x1 conv, one 3x3 atrous conv per rate after the first, and an
    image-level pooling branch. The concatenation is fused by a 1x1 conv.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rates: Sequence[int] = (1, 6, 12, 18),
        reduction: int = 8,
        spatial_kernel: int = 7,
        tau_residual: bool = False,
    ):
        super().__init__()
        rates = list(rates)
        if not rates or rates[0] != 1 or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError(f"ASPP rates must be strictly increasing and start at 1, got {rates}")
        self.in_channels = in_channels
        self.rates = rates
        self.branches = nn.ModuleList(_conv_bn_relu(in_channels, out_channels, r) for r in rates)
        self.taus = nn.ModuleList(
            TAU(out_channels, reduction, spatial_kernel, tau_residual) for _ in rates
        )
        # no norm layer here: a 1x1 map with batch size 1 has no batch statistics
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_channels, out_channels, 1, bias=False),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Sequential(
            nn.Conv2d(out_channels * (len(rates) + 1), out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )
        self._warned = False

    def branch_outputs(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"ASPP expects N x {self.in_channels} x H x W, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if not self._warned and self.rates[-1] >= max(h, w):
            log.warning(
                "ASPP rate %d >= feature size %dx%d: off-center taps only see padding",
                self.rates[-1], h, w,
            )
            self._warned = True
        outs = [tau(branch(x)) for branch, tau in zip(self.branches, self.taus)]
        pooled = self.pool(x)
        outs.append(F.interpolate(pooled, size=(h, w), mode="bilinear", align_corners=False))
        return outs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project(torch.cat(self.branch_outputs(x), dim=1))
