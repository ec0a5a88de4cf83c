from .losses import (
    LossWeights,
    adversarial_loss,
    feature_matching_loss,
    full_objective,
    layered_feature_loss,
    perceptual_loss,
)
from .loop import Trainer, TrainingError, build_models, load_generator, train
from .schedule import TrainSchedule, lr_at

__all__ = [
    "LossWeights",
    "TrainSchedule",
    "Trainer",
    "TrainingError",
    "adversarial_loss",
    "build_models",
    "feature_matching_loss",
    "full_objective",
    "layered_feature_loss",
    "load_generator",
    "lr_at",
    "perceptual_loss",
    "train",
]
