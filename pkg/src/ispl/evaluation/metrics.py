"""Statistical, semantic and perceptual image metrics.

Image arguments are ``(B, C, H, W)`` tensors in ``[0, 1]`` (a single
``(C, H, W)`` image is promoted). Pairwise metrics return one float for the
whole input; callers wanting per-image values loop over the batch.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..types import ValidationError

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a[None], b[None]
    return a.double(), b.double()


def psnr(a: torch.Tensor, b: torch.Tensor, cap: float = PSNR_CAP) -> float:
    a, b = _pair(a, b)
    mse = (a - b).pow(2).mean().item()
    if mse < 1e-10:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(channels: int) -> torch.Tensor:
    ax = torch.arange(SSIM_WIN, dtype=torch.float64) - SSIM_WIN // 2
    g = torch.exp(-(ax**2) / (2 * SSIM_SIGMA**2))
    g = g / g.sum()
    return torch.outer(g, g).expand(channels, 1, SSIM_WIN, SSIM_WIN).contiguous()


def _ssim_maps(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    c = a.shape[1]
    win = _gaussian_window(c)
    filt = lambda x: F.conv2d(x, win, groups=c)  # noqa: E731  valid-region filtering
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return lum * cs, cs


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ValidationError(f"images must be at least {SSIM_WIN}x{SSIM_WIN} for SSIM")
    if torch.equal(a, b):
        return 1.0
    s, _ = _ssim_maps(a, b)
    return s.mean().item()


def ms_ssim_scales(min_side: int) -> int:
    """Largest scale count (<= 5) whose coarsest level still exceeds the window footprint."""
    scales = len(MS_SSIM_WEIGHTS)
    while scales > 1 and min_side <= (SSIM_WIN - 1) * 2 ** (scales - 1):
        scales -= 1
    return scales


def ms_ssim(a: torch.Tensor, b: torch.Tensor, return_scales: bool = False):
    """Multi-scale SSIM; fewer than 5 scales are used on small images (weights renormalized)."""
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ValidationError(f"images must be at least {SSIM_WIN}x{SSIM_WIN} for MS-SSIM")
    scales = ms_ssim_scales(min(a.shape[-2:]))
    if torch.equal(a, b):
        return (1.0, scales) if return_scales else 1.0
    w = torch.tensor(MS_SSIM_WEIGHTS[:scales], dtype=torch.float64)
    w = w / w.sum()
    vals = []
    for s in range(scales):
        sim, cs = _ssim_maps(a, b)
        if s == scales - 1:
            vals.append(sim.mean(dim=(-2, -1)))
        else:
            vals.append(cs.mean(dim=(-2, -1)))
            a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
    stack = torch.stack(vals).clamp_min(0)  # (scales, B, C)
    value = torch.prod(stack ** w[:, None, None], dim=0).mean().item()
    return (value, scales) if return_scales else value


def fed(a: torch.Tensor, b: torch.Tensor, extractor) -> np.ndarray:
    """Per-image Euclidean distance between embeddings."""
    a, b = _pair(a, b)
    ea = np.asarray(extractor.embed(a.float()), dtype=np.float64)
    eb = np.asarray(extractor.embed(b.float()), dtype=np.float64)
    return np.linalg.norm(ea - eb, axis=-1)


def embedding_distance(ea, eb) -> float:
    return float(np.linalg.norm(np.asarray(ea, dtype=np.float64) - np.asarray(eb, dtype=np.float64)))


def landmark_error(la, lb) -> float:
    """Mean Euclidean distance over corresponding landmarks (pixels)."""
    la = np.asarray(la, dtype=np.float64)
    lb = np.asarray(lb, dtype=np.float64)
    if la.shape != lb.shape or la.ndim != 2 or la.shape[1] != 2:
        raise ValidationError(f"landmark arrays must both be (K, 2), got {la.shape} and {lb.shape}")
    return float(np.linalg.norm(la - lb, axis=1).mean())


def lle(a: torch.Tensor, b: torch.Tensor, detector: Callable) -> np.ndarray:
    """Per-image landmark localization error; NaN where the detector fails."""
    a, b = _pair(a, b)
    out = np.full(a.shape[0], np.nan)
    for i in range(a.shape[0]):
        try:
            la, lb = detector(a[i]), detector(b[i])
        except Exception:
            continue
        if la is None or lb is None:
            continue
        out[i] = landmark_error(la, lb)
    return out


def frechet_distance(mu1, sigma1, mu2, sigma2, flags: list[str] | None = None) -> float:
    """Frechet distance between Gaussians; sqrt of the covariance product via eigendecomposition."""
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    sigma1, sigma2 = np.atleast_2d(sigma1), np.atleast_2d(sigma2)
    ev1, vec1 = np.linalg.eigh(sigma1)
    ev1 = _clip_eigs(ev1, flags)
    root1 = (vec1 * np.sqrt(ev1)) @ vec1.T
    # root1 sigma2 root1 is symmetric PSD and shares its spectrum with sigma1 sigma2
    m = root1 @ sigma2 @ root1
    ev = _clip_eigs(np.linalg.eigvalsh((m + m.T) / 2), flags)
    diff = mu1 - mu2
    value = diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2 * np.sqrt(ev).sum()
    return float(max(value, 0.0))


def _clip_eigs(ev: np.ndarray, flags: list[str] | None) -> np.ndarray:
    scale = max(1.0, float(np.abs(ev).max(initial=0.0)))
    if (ev < -1e-6 * scale).any() and flags is not None:
        flags.append("negative_eigenvalues_clipped")
    return np.clip(ev, 0.0, None)


def fid_from_embeddings(real, gen, flags: list[str] | None = None) -> float:
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if real.ndim == 1:
        real = real[:, None]
    if gen.ndim == 1:
        gen = gen[:, None]
    if len(real) < 2 or len(gen) < 2:
        raise ValidationError("FID needs at least 2 samples per side")
    if real.shape[1] != gen.shape[1]:
        raise ValidationError("embedding dimensionality differs between sides")
    s1 = np.atleast_2d(np.cov(real, rowvar=False))
    s2 = np.atleast_2d(np.cov(gen, rowvar=False))
    if min(len(real), len(gen)) <= real.shape[1]:
        ridge = 1e-6 * np.eye(real.shape[1])
        s1, s2 = s1 + ridge, s2 + ridge
        if flags is not None:
            flags.append("ridge_1e-6_added")
    return frechet_distance(real.mean(0), s1, gen.mean(0), s2, flags)


def fid(real_images: torch.Tensor, gen_images: torch.Tensor, extractor,
        flags: list[str] | None = None) -> float:
    real = extractor.embed(torch.as_tensor(real_images).float())
    gen = extractor.embed(torch.as_tensor(gen_images).float())
    return fid_from_embeddings(real, gen, flags)


def _unit_normalize(f: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    return f / (f.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)


def lpips_from_features(fa: Sequence[torch.Tensor], fb: Sequence[torch.Tensor]) -> torch.Tensor:
    """Per-image mean over layers of the spatially-averaged squared distance of unit-normalized maps."""
    if len(fa) != len(fb) or not fa:
        raise ValidationError("feature lists must be non-empty and of equal length")
    terms = []
    for x, y in zip(fa, fb):
        d = (_unit_normalize(x.double()) - _unit_normalize(y.double())).pow(2).sum(dim=1)
        terms.append(d.mean(dim=(-2, -1)))
    return torch.stack(terms).mean(dim=0)


def lpips_like(a: torch.Tensor, b: torch.Tensor, extractor) -> np.ndarray:
    a, b = _pair(a, b)
    with torch.no_grad():
        d = lpips_from_features(extractor.layers(a.float()), extractor.layers(b.float()))
    return d.numpy()
