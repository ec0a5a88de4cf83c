"""Least-squares adversarial, feature-matching and perceptual losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from ..types import ValidationError

GENERATOR_KEYS = ("g_gan", "g_fm", "g_perc")
DISCRIMINATOR_KEYS = ("d_real", "d_fake")


@dataclass
class LossWeights:
    lambda_fm: float = 10.0
    lambda_perc: float = 10.0

    def __post_init__(self) -> None:
        if self.lambda_fm < 0 or self.lambda_perc < 0:
            raise ValidationError("loss weights must be non-negative")


def adversarial_loss(real_scores: Sequence[torch.Tensor] | None, fake_scores: Sequence[torch.Tensor],
                     side: str) -> torch.Tensor:
    """LSGAN objective averaged over scales and positions.

    discriminator: E[(D(x) - 1)^2] + E[D(x~)^2];  generator: E[(D(x~) - 1)^2]
    """
    if not fake_scores:
        raise ValidationError("empty score list")
    if side == "generator":
        return torch.stack([(s - 1).pow(2).mean() for s in fake_scores]).mean()
    if side == "discriminator":
        if not real_scores or len(real_scores) != len(fake_scores):
            raise ValidationError("discriminator side needs one real score map per fake one")
        real = torch.stack([(s - 1).pow(2).mean() for s in real_scores]).mean()
        fake = torch.stack([s.pow(2).mean() for s in fake_scores]).mean()
        return real + fake
    raise ValidationError(f"side must be 'generator' or 'discriminator', got {side!r}")


def layered_feature_loss(feats_a: Sequence[torch.Tensor], feats_b: Sequence[torch.Tensor]) -> torch.Tensor:
    """sum_i 1/(H_i W_i C_i) ||a_i - b_i||^2, additionally averaged over the batch."""
    if len(feats_a) != len(feats_b):
        raise ValidationError(f"feature list lengths differ: {len(feats_a)} vs {len(feats_b)}")
    if not feats_a:
        raise ValidationError("empty feature list")
    total = 0
    for a, b in zip(feats_a, feats_b):
        if a.shape != b.shape:
            raise ValidationError(f"feature shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        total = total + (a - b).pow(2).mean()
    return total


def feature_matching_loss(feats_gt: Sequence[Sequence[torch.Tensor]],
                          feats_gen: Sequence[Sequence[torch.Tensor]]) -> torch.Tensor:
    """Discriminator feature matching: summed over layers, averaged over scales."""
    if len(feats_gt) != len(feats_gen) or not feats_gt:
        raise ValidationError("feature lists must cover the same, non-zero number of scales")
    per_scale = [layered_feature_loss([f.detach() for f in a], b) for a, b in zip(feats_gt, feats_gen)]
    return torch.stack(per_scale).mean()


def perceptual_loss(x: torch.Tensor, x_tilde: torch.Tensor, extractor) -> torch.Tensor:
    with torch.no_grad():
        target = [f.detach() for f in extractor.layers(x)]
    return layered_feature_loss(target, extractor.layers(x_tilde))


def full_objective(lq: torch.Tensor, hq: torch.Tensor, model, disc, weights: LossWeights, extractor,
                   return_fake: bool = False):
    """Generator total, discriminator total and the unweighted component dictionary.

    The generator total is L_GAN + lambda_fm L_FM + lambda_perc L_perc; there is
    deliberately no pixel-space reconstruction term.
    """
    fake = model(lq)
    real_out = disc(hq)
    fake_out_d = disc(fake.detach())
    d_real = torch.stack([(s - 1).pow(2).mean() for s, _ in real_out]).mean()
    d_fake = torch.stack([s.pow(2).mean() for s, _ in fake_out_d]).mean()

    fake_out = disc(fake)
    g_gan = adversarial_loss(None, [s for s, _ in fake_out], "generator")
    g_fm = feature_matching_loss([f for _, f in real_out], [f for _, f in fake_out])
    g_perc = perceptual_loss(hq, fake, extractor)

    components = {"g_gan": g_gan, "g_fm": g_fm, "g_perc": g_perc, "d_real": d_real, "d_fake": d_fake}
    g_total = g_gan + weights.lambda_fm * g_fm + weights.lambda_perc * g_perc
    d_total = d_real + d_fake
    if return_fake:
        return g_total, d_total, components, fake
    return g_total, d_total, components
