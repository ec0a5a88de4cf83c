"""Spatially-adaptive normalization steps of the restoration generator."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..types import ValidationError

EPS = 1e-5


def instance_stats(x: torch.Tensor, eps: float = EPS) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample, per-channel spatial mean and standard deviation (floored at ``eps``)."""
    mu = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
    # flooring the variance keeps the sqrt differentiable on constant maps
    return mu, var.clamp_min(eps * eps).sqrt()


def spade_modulate(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    mu, sigma = instance_stats(x, eps)
    return gamma * (x - mu) / sigma + beta


def conv3x3(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, padding=1, padding_mode="reflect")


class SPADEBlock(nn.Module):
    """One generator stage: modulate ``x_i`` by guidance ``f_i``, activate, upsample 2x, convolve."""

    def __init__(self, in_channels: int, out_channels: int, guide_channels: int, hidden: int = 128):
        super().__init__()
        self.shared = nn.Sequential(conv3x3(guide_channels, hidden), nn.LeakyReLU(0.2))
        self.to_gamma = conv3x3(hidden, in_channels)
        self.to_beta = conv3x3(hidden, in_channels)
        self.conv = conv3x3(in_channels, out_channels)

    def modulation(self, f: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a = self.shared(f)
        # gamma is predicted as an offset from 1 so a fresh block passes features through
        return 1.0 + self.to_gamma(a), self.to_beta(a)

    def modulate(self, x: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != f.shape[-2:]:
            raise ValidationError(f"state {tuple(x.shape[-2:])} and guidance {tuple(f.shape[-2:])} are not aligned")
        gamma, beta = self.modulation(f)
        return spade_modulate(x, gamma, beta)

    def forward(self, x: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.modulate(x, f), 0.2)
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        return self.conv(h)
