"""The encoder / fusion / generator restoration model and its configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..types import ValidationError, check_image_batch
from .fusion import VARIANTS, PriorFusion
from .pac import PixelAdaptiveConv2d
from .spade import SPADEBlock, conv3x3


WEIGHT_INITS = ("fan_in", "normal")


@dataclass
class ModelConfig:
    n_layers: int = 5
    shared_k: int = 0
    base_channels: int = 64
    max_channels: int = 1024
    correlation_dim: int = 16
    fusion_variant: str = "unet"
    image_size: int = 512
    in_channels: int = 3
    out_channels: int = 3
    aligned_channels: int = 128
    spade_hidden: int = 128
    use_pac: bool = True
    d_scales: int = 2
    d_layers: int = 4
    d_base_channels: int = 64
    weight_init: str = "fan_in"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.n_layers < 1:
            errors.append("n_layers must be >= 1")
        if not 0 <= self.shared_k <= self.n_layers:
            errors.append(f"shared_k must lie in [0, n_layers], got {self.shared_k}")
        if self.image_size % 2**self.n_layers or self.image_size // 2**self.n_layers < 4:
            errors.append(f"image_size {self.image_size} must be divisible by 2^n_layers with an innermost size >= 4")
        if self.weight_init not in WEIGHT_INITS:
            errors.append(f"weight_init must be one of {WEIGHT_INITS}")
        if self.fusion_variant not in VARIANTS:
            errors.append(f"fusion_variant must be one of {VARIANTS}")
        for name in ("base_channels", "max_channels", "correlation_dim", "aligned_channels",
                     "spade_hidden", "d_scales", "d_layers", "d_base_channels"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if errors:
            raise ValidationError("; ".join(errors))

    def level_width(self, level: int) -> int:
        """Channel width of pyramid level ``level`` (level 0 is innermost)."""
        return min(self.base_channels * 2 ** (self.n_layers - 1 - level), self.max_channels)

    def level_size(self, level: int) -> int:
        return self.image_size // 2 ** (self.n_layers - level)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown model config keys: {unknown}")
        return cls(**d)


class EncoderStage(nn.Module):
    def __init__(self, cin: int, cout: int, correlation_dim: int, use_pac: bool):
        super().__init__()
        if use_pac:
            self.conv = PixelAdaptiveConv2d(cin, cout, 3, correlation_dim)
        else:
            self.conv = conv3x3(cin, cout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.conv(x), 0.2)
        return F.interpolate(h, scale_factor=0.5, mode="bilinear", align_corners=False)


def init_weights(module: nn.Module, scheme: str = "fan_in") -> None:
    """``fan_in``: PyTorch's fan-in scaled uniform init; ``normal``: N(0, 0.02), zero bias."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            if scheme == "normal":
                nn.init.normal_(m.weight, 0.0, 0.02)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            else:
                m.reset_parameters()
        elif isinstance(m, PixelAdaptiveConv2d):
            if scheme == "normal":
                nn.init.normal_(m.weight, 0.0, 0.02)
            else:
                nn.init.kaiming_uniform_(m.weight, a=5**0.5)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, PixelAdaptiveConv2d):
            m.reset_correlation_bias()


class ISPLModel(nn.Module):
    """Subspace embedding encoder, prior fusion and SPADE restoration generator.

    ``encode`` returns the pyramid ``[y_0, ..., y_{n-1}]`` coarsest first; the
    generator starts from ``x_0 = y_0`` and runs one SPADE stage per level.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n = config.n_layers
        widths = [config.level_width(i) for i in range(n)]
        # encoder stage s consumes level n-s (or the image) and produces level n-1-s
        self.encoder = nn.ModuleList()
        for s in range(n):
            cin = config.in_channels if s == 0 else widths[n - s]
            self.encoder.append(EncoderStage(cin, widths[n - 1 - s], config.correlation_dim, config.use_pac))
        self.fusion = PriorFusion(config.fusion_variant, widths, config.aligned_channels)
        self.blocks = nn.ModuleList()
        for i in range(n):
            cout = widths[i + 1] if i + 1 < n else config.base_channels
            self.blocks.append(SPADEBlock(widths[i], cout, self.fusion.out_channels(i), config.spade_hidden))
        self.to_rgb = conv3x3(config.base_channels, config.out_channels)
        init_weights(self, config.weight_init)

    @property
    def n_layers(self) -> int:
        return self.config.n_layers

    def _check_input(self, y: torch.Tensor) -> None:
        check_image_batch(y, "y", channels=self.config.in_channels, check_range=False)
        s = self.config.image_size
        if tuple(y.shape[-2:]) != (s, s):
            raise ValidationError(f"input must be {s}x{s}, got {tuple(y.shape[-2:])}")

    def encode(self, y: torch.Tensor) -> list[torch.Tensor]:
        self._check_input(y)
        levels = []
        h = y
        for stage in self.encoder:
            h = stage(h)
            levels.append(h)
        return levels[::-1]

    def fuse(self, pyramid: list[torch.Tensor], level: int) -> torch.Tensor:
        return self.fusion(pyramid, level)

    def generate(self, pyramid: list[torch.Tensor], guidance: dict | None = None) -> torch.Tensor:
        """Run the generator from ``x_0 = y_0``.

        ``guidance`` optionally overrides the fused map at chosen levels: a
        tensor is used as-is, a float becomes a constant map of the fused shape.
        """
        guidance = guidance or {}
        x = pyramid[0]
        for i, block in enumerate(self.blocks):
            override = guidance.get(i)
            if isinstance(override, torch.Tensor):
                f = override
            else:
                f = self.fuse(pyramid, i)
                if override is not None:
                    f = torch.full_like(f, float(override))
            x = block(x, f)
        return torch.sigmoid(self.to_rgb(x))

    def restore_dynamic(self, y: torch.Tensor) -> torch.Tensor:
        return self.generate(self.encode(y))

    def restore_fixed_k(self, y: torch.Tensor, k: int) -> torch.Tensor:
        """Guidance only at levels >= k; levels below k receive zero maps."""
        if not 0 <= k <= self.n_layers:
            raise ValidationError(f"k must lie in [0, {self.n_layers}], got {k}")
        return self.generate(self.encode(y), {i: 0.0 for i in range(k)})

    def isolate_subspace(self, y: torch.Tensor, level: int | None, constant: float = 0.5,
                         replace_all: bool = False) -> torch.Tensor:
        """Keep the fused guidance of ``level`` only; every other level gets a constant map."""
        if replace_all:
            keep = None
        else:
            if level is None or not 0 <= level < self.n_layers:
                raise ValidationError(f"level must lie in [0, {self.n_layers}), got {level}")
            keep = level
        return self.generate(self.encode(y), {j: constant for j in range(self.n_layers) if j != keep})

    def accumulate(self, y: torch.Tensor, upto: int, constant: float = 0.5) -> torch.Tensor:
        """Enable guidance at levels ``0..upto``; the rest are held at ``constant``."""
        if not 0 <= upto < self.n_layers:
            raise ValidationError(f"upto must lie in [0, {self.n_layers}), got {upto}")
        return self.generate(self.encode(y), {j: constant for j in range(upto + 1, self.n_layers)})

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.restore_fixed_k(y, self.config.shared_k)


def correlation_maps(model: ISPLModel, y: torch.Tensor) -> list[torch.Tensor]:
    """Correlation values of every pixel-adaptive layer for input ``y``."""
    pacs = [m for m in model.modules() if isinstance(m, PixelAdaptiveConv2d)]
    for m in pacs:
        m.record_corr = True
    try:
        with torch.no_grad():
            model.encode(y)
        return [m.last_corr for m in pacs]
    finally:
        for m in pacs:
            m.record_corr = False
            m.last_corr = None
