"""Small CPU-friendly encoders.

Every backbone returns ``(low, high)``: low-level features at stride 4 and
high-level features at the configured output stride (8 or 16). Strides past
the output stride are traded for dilation, as in DeepLab.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from ..core import ConfigError


def conv_bn(cin, cout, k=3, stride=1, dilation=1, groups=1, relu=True):
    layers = [
        nn.Conv2d(cin, cout, k, stride=stride, padding=dilation * (k // 2), dilation=dilation,
                  groups=groups, bias=False),
        nn.BatchNorm2d(cout),
    ]
    if relu:
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1, dilation=1):
        super().__init__()
        self.body = nn.Sequential(
            conv_bn(cin, cout, 3, stride, dilation),
            conv_bn(cout, cout, 3, 1, dilation, relu=False),
        )
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = conv_bn(cin, cout, 1, stride, relu=False)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.body(x) + self.shortcut(x))


class InvertedResidual(nn.Module):
    def __init__(self, cin, cout, stride=1, dilation=1, expand=4):
        super().__init__()
        mid = cin * expand
        self.body = nn.Sequential(
            conv_bn(cin, mid, 1),
            conv_bn(mid, mid, 3, stride, dilation, groups=mid),
            conv_bn(mid, cout, 1, relu=False),
        )
        self.use_skip = stride == 1 and cin == cout

    def forward(self, x):
        out = self.body(x)
        return x + out if self.use_skip else out


class SeparableBlock(nn.Module):
    """Xception-style block: three depthwise-separable convs with a projected skip."""

    def __init__(self, cin, cout, stride=1, dilation=1):
        super().__init__()

        def sep(a, b, s):
            return nn.Sequential(
                nn.Conv2d(a, a, 3, stride=s, padding=dilation, dilation=dilation, groups=a, bias=False),
                conv_bn(a, b, 1),
            )

        self.body = nn.Sequential(sep(cin, cout, 1), sep(cout, cout, 1), sep(cout, cout, stride))
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = conv_bn(cin, cout, 1, stride, relu=False)

    def forward(self, x):
        return self.body(x) + self.shortcut(x)


# (block, stem channels, [(out channels, blocks) per stage])
_LAYOUTS = {
    "resnet-small": (BasicBlock, 32, [(48, 1), (96, 1), (160, 1), (256, 1)]),
    "mobilenet-like": (InvertedResidual, 16, [(24, 2), (32, 2), (64, 2), (128, 2)]),
    "xception-like": (SeparableBlock, 32, [(64, 1), (128, 1), (256, 1), (256, 1)]),
}


class Backbone(nn.Module):
    """Stem (stride 2) followed by four stages with nominal strides 2, 2, 2, 1."""

    def __init__(self, name: str = "resnet-small", output_stride: int = 16):
        super().__init__()
        if name not in _LAYOUTS:
            raise ConfigError(f"unknown backbone {name!r}")
        if output_stride not in (8, 16):
            raise ConfigError(f"output_stride must be 8 or 16, got {output_stride}")
        block, stem, stages = _LAYOUTS[name]
        self.stem = conv_bn(3, stem, 3, stride=2)
        # stage strides and dilations for each output stride
        if output_stride == 16:
            plan = [(2, 1), (2, 1), (2, 1), (1, 2)]
        else:
            plan = [(2, 1), (2, 1), (1, 2), (1, 4)]
        layers = []
        cin = stem
        for (cout, n), (stride, dilation) in zip(stages, plan):
            blocks = [block(cin, cout, stride, dilation)]
            blocks += [block(cout, cout, 1, dilation) for _ in range(n - 1)]
            layers.append(nn.Sequential(*blocks))
            cin = cout
        self.stage1, self.stage2, self.stage3, self.stage4 = layers
        self.low_channels = stages[0][0]
        self.high_channels = stages[-1][0]

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        low = self.stage1(self.stem(x))
        high = self.stage4(self.stage3(self.stage2(low)))
        return low, high
