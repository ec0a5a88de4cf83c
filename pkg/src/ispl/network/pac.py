"""Pixel-adaptive convolution.

The kernel applied at pixel ``p`` is the shared weight ``w[dq]`` scaled by the
learned correlation ``tanh(g(y_p) . g(y_q))`` between ``p`` and each neighbour
``q``. ``g`` is a per-pixel MLP realized with 1x1 convolutions.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..types import ValidationError


def _neighbourhoods(x: torch.Tensor, k: int) -> torch.Tensor:
    b, c, h, w = x.shape
    r = k // 2
    padded = F.pad(x, (r, r, r, r), mode="reflect") if r else x
    return F.unfold(padded, k).view(b, c, k * k, h * w)


def pixel_adaptive_conv(features: torch.Tensor, weight: torch.Tensor, guide: torch.Tensor,
                        bias: torch.Tensor | None = None, return_corr: bool = False):
    """Pixel-adaptive convolution of ``features`` (B, C, H, W).

    ``weight`` is an ``(O, C, k, k)`` kernel with odd ``k``; ``guide`` holds the
    already-projected correlation features ``g(y)`` as ``(B, D, H, W)``.
    Borders use reflect padding. With ``return_corr`` the ``(B, k*k, H, W)``
    correlation map is returned as well.
    """
    if features.dim() != 4:
        raise ValidationError("features must be (B, C, H, W)")
    b, c, h, w = features.shape
    o, cw, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValidationError(f"kernel must be odd and square, got {k}x{k2}")
    if cw != c:
        raise ValidationError(f"kernel expects {cw} input channels, features have {c}")
    if guide.shape[0] != b or guide.shape[-2:] != features.shape[-2:]:
        raise ValidationError("guide must match features in batch and spatial size")
    cols = _neighbourhoods(features, k)                     # (B, C, k*k, HW)
    gcols = _neighbourhoods(guide, k)                       # (B, D, k*k, HW)
    centre = guide.reshape(b, guide.shape[1], 1, h * w)
    corr = torch.tanh((gcols * centre).sum(dim=1, keepdim=True))  # (B, 1, k*k, HW)
    out = torch.einsum("ock,bckl->bol", weight.reshape(o, c, k * k), cols * corr).view(b, o, h, w)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    if return_corr:
        return out, corr.view(b, k * k, h, w)
    return out


class PixelAdaptiveConv2d(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 correlation_dim: int = 16, bias: bool = True):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValidationError("kernel_size must be odd")
        self.in_channels = in_channels
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        self.g = nn.Sequential(
            nn.Conv2d(in_channels, correlation_dim, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(correlation_dim, correlation_dim, 1),
        )
        self.record_corr = False
        self.last_corr: torch.Tensor | None = None
        nn.init.normal_(self.weight, 0.0, 0.02)

    def reset_correlation_bias(self) -> None:
        # unit-norm constant output bias: at init every pair correlates at tanh(1)
        d = self.g[-1].out_channels
        nn.init.constant_(self.g[-1].bias, 1.0 / math.sqrt(d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ValidationError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        out, corr = pixel_adaptive_conv(x, self.weight, self.g(x), self.bias, return_corr=True)
        if self.record_corr:
            self.last_corr = corr.detach()
        return out
