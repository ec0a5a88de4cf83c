"""Experiment configuration: one strict YAML document covering model, schedule, losses and data."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import degradation as dg
from .network import ModelConfig
from .training import LossWeights, TrainSchedule
from .types import ValidationError

DOMAINS = ("synthetic", "real")
EXTRACTORS = ("random_projection", "vgg19")


@dataclass
class DataPaths:
    hq: str | None = None
    lq: str | None = None
    pairs_file: str | None = None


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    weights: LossWeights = field(default_factory=LossWeights)
    task: str = "dual_blind"
    noise_range: tuple[float, float] = dg.NOISE_LEVEL_RANGE
    data: DataPaths = field(default_factory=DataPaths)
    domain: str = "synthetic"
    extractor: str = "random_projection"
    extractor_seed: int = 0
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        self.noise_range = tuple(float(v) for v in self.noise_range)
        errors = []
        if self.task not in dg.TASKS:
            errors.append(f"task: unknown task {self.task!r}")
        if self.domain not in DOMAINS:
            errors.append(f"domain: must be one of {DOMAINS}")
        if self.extractor not in EXTRACTORS:
            errors.append(f"extractor: must be one of {EXTRACTORS}")
        lo, hi = self.noise_range if len(self.noise_range) == 2 else (-1.0, -1.0)
        if not 0 <= lo <= hi:
            errors.append("noise_range: must be [low, high] with 0 <= low <= high")
        if errors:
            raise ValidationError("; ".join(errors))

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "schedule": self.schedule.to_dict(),
            "weights": {"lambda_fm": self.weights.lambda_fm, "lambda_perc": self.weights.lambda_perc},
            "task": self.task,
            "noise_range": list(self.noise_range),
            "data": {"hq": self.data.hq, "lq": self.data.lq, "pairs_file": self.data.pairs_file},
            "domain": self.domain,
            "extractor": self.extractor,
            "extractor_seed": self.extractor_seed,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = _unknown(d, cls, "")
        sections = {"model": ModelConfig, "schedule": TrainSchedule, "weights": LossWeights, "data": DataPaths}
        for key, typ in sections.items():
            sub = d.get(key)
            if sub is None:
                continue
            if not isinstance(sub, Mapping):
                raise ValidationError(f"{key}: expected a mapping")
            unknown += _unknown(sub, typ, f"{key}.")
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dict(d)
        try:
            for key, typ in sections.items():
                if key in kwargs:
                    kwargs[key] = typ(**(kwargs[key] or {}))
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _unknown(d: Mapping, typ, prefix: str) -> list[str]:
    known = {f.name for f in fields(typ)}
    return [prefix + k for k in sorted(set(d) - known)]


def load_config(path: str | Path, check_paths: bool = True) -> ExperimentConfig:
    """Parse and validate a YAML experiment config.

    Relative data paths resolve against the config file's directory; with
    ``check_paths`` every referenced path must exist.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None
    if raw is not None and not isinstance(raw, Mapping):
        raise ValidationError(f"{path}: top level must be a mapping")
    cfg = ExperimentConfig.from_dict(raw)
    for name in ("hq", "lq", "pairs_file"):
        value = getattr(cfg.data, name)
        if value is not None and not Path(value).is_absolute():
            setattr(cfg.data, name, str((path.parent / value).resolve()))
    if check_paths:
        missing = [f"data.{n}={getattr(cfg.data, n)}" for n in ("hq", "lq", "pairs_file")
                   if getattr(cfg.data, n) is not None and not Path(getattr(cfg.data, n)).exists()]
        if missing:
            raise ValidationError(f"referenced paths do not exist: {', '.join(missing)}")
    return cfg


def save_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.dump())
    return path


def smoke_config(**overrides) -> ExperimentConfig:
    """Desk-scale overfit configuration: 64x64 faces, n=3, c=8, 200 steps over 8 images."""
    cfg = ExperimentConfig(
        model=ModelConfig(n_layers=3, base_channels=8, image_size=64, d_base_channels=16),
        schedule=TrainSchedule(lr=1e-3, epochs_constant=100, epochs_decay=0, batch_size=4, checkpoint_every=50),
        task="denoise",
    )
    d = cfg.to_dict()
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(d.get(key), dict):
            d[key].update(value)
        else:
            d[key] = value
    return ExperimentConfig.from_dict(d)
