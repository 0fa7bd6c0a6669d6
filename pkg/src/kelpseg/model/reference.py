"""A small native U-Net used for tests, fixtures and CPU smoke runs.

Topology (widths ``(8, 16, 24, 32, 40)``)::

    stem   3 -> 8            full resolution
    down1  8 -> 16           /2
    down2 16 -> 24           /4
    down3 24 -> 32           /8
    down4 32 -> 40           /16
    up3   (40 + 32) -> 32    /8   nearest x2, concat skip
    up2   (32 + 24) -> 24    /4
    up1   (24 + 16) -> 16    /2
    up0   (16 + 8)  -> 8     /1
    head   8 -> 1            1x1 conv, logits

Every conv is 3x3 followed by GroupNorm and SiLU. The activations are
smooth so finite-difference gradient checks are well conditioned, and
GroupNorm keeps samples independent within a batch. Input sides must be
divisible by 16.
"""

import torch
import torch.nn.functional as F
from torch import nn

STRIDE = 16
WIDTHS = (8, 16, 24, 32, 40)


def _conv(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(min(4, cout // 2), cout),
        nn.SiLU(),
    )


class _Encoder(nn.Module):
    def __init__(self, in_channels, widths):
        super().__init__()
        self.stem = _conv(in_channels, widths[0])
        self.stages = nn.ModuleList(
            nn.Sequential(_conv(cin, cout, stride=2), _conv(cout, cout))
            for cin, cout in zip(widths[:-1], widths[1:])
        )

    def forward(self, x):
        features = [self.stem(x)]
        for stage in self.stages:
            features.append(stage(features[-1]))
        return features


class _Decoder(nn.Module):
    def __init__(self, widths):
        super().__init__()
        self.blocks = nn.ModuleList(
            _conv(deep + skip, skip) for deep, skip in zip(widths[:0:-1], widths[-2::-1])
        )
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, features):
        x = features[-1]
        for block, skip in zip(self.blocks, features[-2::-1]):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x, skip], dim=1))
        return self.head(x)


class ReferenceTinyNet(nn.Module):
    stride = STRIDE

    def __init__(self, in_channels=3, widths=WIDTHS):
        super().__init__()
        self.encoder = _Encoder(in_channels, widths)
        self.decoder = _Decoder(widths)

    def forward(self, x):
        return self.decoder(self.encoder(x))
