"""Shared error types and the image-batch contract used across the package.

Pipeline images are plain ``torch.Tensor`` objects of shape ``(B, 3, H, W)``
with values in ``VALUE_RANGE``. Nothing wraps them; modules call
:func:`check_image_batch` at their boundaries instead.
"""

from __future__ import annotations

import torch

VALUE_RANGE = (0.0, 1.0)


class ValidationError(ValueError):
    """Raised when an argument violates a documented precondition."""


def check_image_batch(img: torch.Tensor, name: str = "img", channels: int | None = 3,
                      check_range: bool = True) -> torch.Tensor:
    if not isinstance(img, torch.Tensor):
        raise ValidationError(f"{name} must be a torch.Tensor, got {type(img).__name__}")
    if img.dim() != 4:
        raise ValidationError(f"{name} must be rank-4 (B, C, H, W), got shape {tuple(img.shape)}")
    if channels is not None and img.shape[1] != channels:
        raise ValidationError(f"{name} must have {channels} channels, got {img.shape[1]}")
    if check_range and img.numel():
        lo, hi = VALUE_RANGE
        if not torch.isfinite(img).all():
            raise ValidationError(f"{name} contains non-finite values")
        if img.min() < lo or img.max() > hi:
            raise ValidationError(
                f"{name} values must lie in [{lo}, {hi}], got [{img.min().item():.4g}, {img.max().item():.4g}]"
            )
    return img


def clamp_range(img: torch.Tensor) -> torch.Tensor:
    return img.clamp(*VALUE_RANGE)
