from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..types import ValidationError


@dataclass
class TrainSchedule:
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    epochs_constant: int = 30
    epochs_decay: int = 20
    batch_size: int = 4
    checkpoint_every: int = 10  # epochs; 0 disables periodic checkpoints

    def __post_init__(self) -> None:
        self.betas = tuple(float(b) for b in self.betas)
        errors = []
        if self.lr <= 0:
            errors.append("lr must be > 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            errors.append("betas must be two values in [0, 1)")
        if self.epochs_constant < 0 or self.epochs_decay < 0:
            errors.append("epoch counts must be >= 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.checkpoint_every < 0:
            errors.append("checkpoint_every must be >= 0")
        if errors:
            raise ValidationError("; ".join(errors))

    @property
    def total_epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown schedule keys: {unknown}")
        return cls(**d)


def lr_at(epoch: int, schedule: TrainSchedule) -> float:
    """Constant learning rate, then a linear ramp that reaches 0 at the last decay epoch."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValidationError(f"epoch must lie in [0, {schedule.total_epochs}), got {epoch}")
    if epoch < schedule.epochs_constant:
        return schedule.lr
    done = epoch - schedule.epochs_constant + 1
    return schedule.lr * (1.0 - done / schedule.epochs_decay)
