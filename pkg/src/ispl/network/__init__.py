from .discriminator import MultiScaleDiscriminator, discriminate
from .fusion import FusionPlan, PriorFusion
from .model import ISPLModel, ModelConfig, correlation_maps
from .pac import PixelAdaptiveConv2d, pixel_adaptive_conv
from .spade import SPADEBlock, instance_stats, spade_modulate

__all__ = [
    "FusionPlan",
    "ISPLModel",
    "ModelConfig",
    "MultiScaleDiscriminator",
    "PixelAdaptiveConv2d",
    "PriorFusion",
    "SPADEBlock",
    "correlation_maps",
    "discriminate",
    "instance_stats",
    "pixel_adaptive_conv",
    "spade_modulate",
]
