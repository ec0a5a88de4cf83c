"""Multi-scale patch discriminator."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..types import check_image_batch


class PatchDiscriminator(nn.Module):
    """Strided patch discriminator returning its hidden activations and a score map."""

    def __init__(self, in_channels: int = 3, base: int = 64, depth: int = 4, max_channels: int = 512):
        super().__init__()
        self.layers = nn.ModuleList()
        prev = in_channels
        for i in range(depth):
            width = min(base * 2**i, max_channels)
            stride = 2 if i < depth - 1 else 1
            mods = [nn.Conv2d(prev, width, 4, stride, padding=2)]
            if i:
                mods.append(nn.InstanceNorm2d(width))
            mods.append(nn.LeakyReLU(0.2))
            self.layers.append(nn.Sequential(*mods))
            prev = width
        self.score = nn.Conv2d(prev, 1, 4, 1, padding=2)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return self.score(x), feats


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, in_channels: int = 3, base: int = 64, depth: int = 4, scales: int = 2):
        super().__init__()
        self.depth = depth
        self.nets = nn.ModuleList(PatchDiscriminator(in_channels, base, depth) for _ in range(scales))
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, 0.0, 0.02)
                nn.init.zeros_(m.bias)

    def forward(self, img: torch.Tensor) -> list[tuple[torch.Tensor, list[torch.Tensor]]]:
        check_image_batch(img, check_range=False, channels=None)
        out = []
        x = img
        for i, net in enumerate(self.nets):
            if i:
                x = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
            out.append(net(x))
        return out


def discriminate(img: torch.Tensor, disc: MultiScaleDiscriminator):
    return disc(img)
