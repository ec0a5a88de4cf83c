"""Dynamic prior fusion: map the subspace pyramid to one guidance map per level.

Variants:

``unet``    f_i = y_i
``y0``      f_i = y_0 resized to level i
``concat``  f_i = [y_0; ...; y_{n-1}], every level resized to level i
``matrix``  f_i = sum_j W_ij align_j(y_j), with a learned 1x1 projection per
            source level and a learnable ``n x n`` matrix ``W``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..types import ValidationError

VARIANTS = ("y0", "unet", "concat", "matrix")


@dataclass
class FusionPlan:
    variant: str
    weight_matrix: np.ndarray
    aligned_channels: int


def resize_to(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class PriorFusion(nn.Module):
    def __init__(self, variant: str, widths: list[int], aligned_channels: int = 128):
        super().__init__()
        if variant not in VARIANTS:
            raise ValidationError(f"unknown fusion variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.widths = list(widths)
        self.n = len(widths)
        self.aligned_channels = aligned_channels
        if variant == "matrix":
            self.weight = nn.Parameter(torch.eye(self.n))
            self.align = nn.ModuleList(nn.Conv2d(w, aligned_channels, 1) for w in widths)

    def out_channels(self, level: int) -> int:
        if self.variant == "unet":
            return self.widths[level]
        if self.variant == "y0":
            return self.widths[0]
        if self.variant == "concat":
            return sum(self.widths)
        return self.aligned_channels

    def effective_weights(self) -> np.ndarray:
        if self.variant == "matrix":
            return self.weight.detach().double().numpy().copy()
        if self.variant == "unet":
            return np.eye(self.n)
        if self.variant == "y0":
            w = np.zeros((self.n, self.n))
            w[:, 0] = 1.0
            return w
        return np.ones((self.n, self.n))

    def plan(self) -> FusionPlan:
        return FusionPlan(self.variant, self.effective_weights(), self.aligned_channels)

    def forward(self, pyramid: list[torch.Tensor], level: int) -> torch.Tensor:
        if not 0 <= level < self.n:
            raise ValidationError(f"level must lie in [0, {self.n}), got {level}")
        if len(pyramid) != self.n:
            raise ValidationError(f"pyramid has {len(pyramid)} levels, fusion expects {self.n}")
        size = pyramid[level].shape[-2:]
        if self.variant == "unet":
            return pyramid[level]
        if self.variant == "y0":
            return resize_to(pyramid[0], size)
        if self.variant == "concat":
            return torch.cat([resize_to(y, size) for y in pyramid], dim=1)
        out = 0
        for j, y in enumerate(pyramid):
            out = out + self.weight[level, j] * resize_to(self.align[j](y), size)
        return out
