"""Pluggable feature backends for the perceptual loss and the metric suite.

A feature extractor exposes ``layers(x) -> list[Tensor]`` (layered maps) and
``embed(x) -> ndarray (B, D)`` (one vector per image). The random-projection
stub is hermetic and deterministic per seed; the VGG-19 backend needs
pretrained weights (cached under ``$ISPL_CACHE`` when set).
"""

from __future__ import annotations

import os

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class RandomProjectionExtractor(nn.Module):
    """Frozen stack of seeded random convolutions."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (16, 32, 64), embed_dim: int = 16,
                 in_channels: int = 3):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.widths = tuple(widths)
        prev = in_channels
        for i, w in enumerate(widths):
            weight = torch.randn(w, prev, 3, 3, generator=g) * (2.0 / (prev * 9)) ** 0.5
            self.register_buffer(f"w{i}", weight)
            self.register_buffer(f"b{i}", torch.randn(w, generator=g) * 0.1)
            prev = w
        self.register_buffer("proj", torch.randn(sum(widths), embed_dim, generator=g) / sum(widths) ** 0.5)
        self.embed_dim = embed_dim

    def layers(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x * 2 - 1
        for i in range(len(self.widths)):
            w, b = getattr(self, f"w{i}"), getattr(self, f"b{i}")
            if i:
                h = F.avg_pool2d(h, 2)
            h = F.relu(F.conv2d(h, w.to(h.dtype), b.to(h.dtype), padding=1))
            feats.append(h)
        return feats

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.layers(x)

    @torch.no_grad()
    def embed(self, x: torch.Tensor) -> np.ndarray:
        pooled = torch.cat([f.mean(dim=(-2, -1)) for f in self.layers(x)], dim=1)
        return (pooled @ self.proj.to(pooled.dtype)).double().numpy()


class VGG19Extractor(nn.Module):
    """relu{1..5}_1 activations of an ImageNet VGG-19; equal layer weights."""

    SLICE_ENDS = (2, 7, 12, 21, 30)

    def __init__(self, pretrained: bool = True):
        super().__init__()
        from torchvision.models import VGG19_Weights, vgg19

        if "ISPL_CACHE" in os.environ:
            torch.hub.set_dir(os.environ["ISPL_CACHE"])
        features = vgg19(weights=VGG19_Weights.IMAGENET1K_V1 if pretrained else None).features
        self.slices = nn.ModuleList()
        start = 0
        for end in self.SLICE_ENDS:
            self.slices.append(nn.Sequential(*[features[i] for i in range(start, end)]))
            start = end
        for p in self.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.eval()

    def layers(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = (x - self.mean) / self.std
        feats = []
        for s in self.slices:
            h = s(h)
            feats.append(h)
        return feats

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.layers(x)

    @torch.no_grad()
    def embed(self, x: torch.Tensor) -> np.ndarray:
        return self.layers(x)[-1].mean(dim=(-2, -1)).double().numpy()


class CentroidLandmarkDetector:
    """Deterministic stand-in detector: darkness-weighted centroid of each cell of a grid.

    Returns ``grid**2`` landmarks as ``(x, y)`` pixel coordinates.
    """

    def __init__(self, grid: int = 3):
        self.grid = grid

    def __call__(self, img: torch.Tensor) -> np.ndarray:
        x = torch.as_tensor(img, dtype=torch.float64)
        if x.dim() == 4:
            x = x[0]
        dark = (1.0 - x.mean(dim=0)).numpy() + 1e-6
        h, w = dark.shape
        ys = np.linspace(0, h, self.grid + 1).astype(int)
        xs = np.linspace(0, w, self.grid + 1).astype(int)
        pts = []
        for i in range(self.grid):
            for j in range(self.grid):
                cell = dark[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
                yy, xx = np.mgrid[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
                m = cell.sum()
                pts.append(((cell * xx).sum() / m, (cell * yy).sum() / m))
        return np.asarray(pts)


def build_extractor(name: str, seed: int = 0):
    """``random_projection`` (hermetic stub) or ``vgg19`` (pretrained, downloads once)."""
    if name == "random_projection":
        return RandomProjectionExtractor(seed)
    if name == "vgg19":
        return VGG19Extractor(pretrained=True)
    raise ValueError(f"unknown extractor {name!r}")
