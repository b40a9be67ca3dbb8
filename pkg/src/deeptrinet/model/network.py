from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import ConfigError, ModelConfig, NonFiniteError, ShapeError
from .aspp import ASPPTAU
from .attention import SEBlock
from .backbone import Backbone, conv_bn

LOW_LEVEL_CHANNELS = 48


class DeepTriNet(nn.Module):
    """DeepLabv3+ with TAU-gated ASPP branches and an SE-recalibrated decoder.

    Takes ``N x 3 x H x W`` input in [-1, 1]; returns ``N x C x H x W`` logits.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        problems = config.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        self.config = config
        self.backbone = Backbone(config.backbone, config.output_stride)
        self.aspp = ASPPTAU(
            self.backbone.high_channels,
            config.aspp_channels,
            config.aspp_rates,
            config.se_reduction,
            config.tau_spatial_kernel,
            config.tau_residual,
        )
        self.low_proj = conv_bn(self.backbone.low_channels, LOW_LEVEL_CHANNELS, 1)
        d = config.decoder_channels
        decoder = [conv_bn(config.aspp_channels + LOW_LEVEL_CHANNELS, d, 3)]
        if config.se_after_each_conv:
            decoder.append(SEBlock(d, config.se_reduction))
        decoder.append(conv_bn(d, d, 3))
        self.decoder = nn.Sequential(*decoder)
        self.se = SEBlock(d, config.se_reduction)
        self.classifier = nn.Conv2d(d, config.num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        low, high = self.backbone(x)
        y = self.aspp(high)
        y = F.interpolate(y, size=low.shape[-2:], mode="bilinear", align_corners=False)
        y = torch.cat([y, self.low_proj(low)], dim=1)
        y = self.se(self.decoder(y))
        # The 1x1 classifier commutes with bilinear upsampling (weights sum to 1),
        # so classify at stride 4 and upsample C channels instead of d.
        y = self.classifier(y)
        return F.interpolate(y, size=size, mode="bilinear", align_corners=False)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(cfg: ModelConfig, seed: int = 0) -> DeepTriNet:
    """Construct a freshly initialized network; equal seeds give equal parameters."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return DeepTriNet(cfg)


def forward(model: DeepTriNet, batch) -> np.ndarray:
    """Eval-mode logits for an ``N x H x W x 3`` normalized batch, returned as ``N x H x W x C``."""
    x = torch.as_tensor(np.asarray(batch), dtype=next(model.parameters()).dtype)
    if x.dim() == 3:
        x = x[None]
    n = model.config.input_size
    if x.dim() != 4 or x.shape[1:] != (n, n, 3):
        raise ShapeError(f"expected a batch of {n}x{n}x3 patches, got {tuple(x.shape)}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits = model(x.permute(0, 3, 1, 2).contiguous())
    finally:
        model.train(was_training)
    if not torch.isfinite(logits).all():
        raise NonFiniteError("network produced non-finite logits")
    return logits.permute(0, 2, 3, 1).numpy()
