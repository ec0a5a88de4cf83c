"""Adversarial training loop with deterministic batching and resumable checkpoints."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

from ..checkpoint import Checkpoint, load_module_arrays, module_arrays, save_checkpoint
from ..network import ISPLModel, ModelConfig, MultiScaleDiscriminator
from .losses import LossWeights, full_objective
from .schedule import TrainSchedule, lr_at

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def build_models(config: ModelConfig, seed: int) -> tuple[ISPLModel, MultiScaleDiscriminator]:
    """Seeded construction of the restoration model and its discriminator."""
    torch.manual_seed(seed)
    model = ISPLModel(config)
    disc = MultiScaleDiscriminator(config.out_channels, config.d_base_channels, config.d_layers, config.d_scales)
    return model, disc


def _optim_arrays(opt: torch.optim.Optimizer, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for idx, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            out[f"{prefix}/{idx}/{key}"] = torch.as_tensor(value).detach().cpu().numpy().copy()
    return out


def _load_optim(opt: torch.optim.Optimizer, arrays: Mapping[str, np.ndarray]) -> None:
    state: dict[int, dict[str, torch.Tensor]] = {}
    for name, value in arrays.items():
        idx, key = name.split("/")
        state.setdefault(int(idx), {})[key] = torch.from_numpy(np.array(value))
    opt.load_state_dict({"state": state, "param_groups": opt.state_dict()["param_groups"]})


class Trainer:
    def __init__(self, model: ISPLModel, disc: MultiScaleDiscriminator, schedule: TrainSchedule,
                 weights: LossWeights, extractor, *, seed: int = 0, config_echo: Mapping[str, Any] | None = None):
        self.model = model
        self.disc = disc
        self.schedule = schedule
        self.weights = weights
        self.extractor = extractor
        self.seed = seed
        self.config_echo = dict(config_echo or {})
        self.opt_g = torch.optim.Adam(model.parameters(), lr=schedule.lr, betas=schedule.betas)
        self.opt_d = torch.optim.Adam(disc.parameters(), lr=schedule.lr, betas=schedule.betas)
        self.step = 0
        self.epoch = 0
        self.batch_in_epoch = 0
        self.history: list[dict[str, float]] = []

    # -- batching -----------------------------------------------------------

    def epoch_batches(self, n: int, epoch: int) -> list[np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
        order = rng.permutation(n)
        bs = self.schedule.batch_size
        return [order[i:i + bs] for i in range(0, n, bs)]

    @staticmethod
    def collate(dataset, idx) -> tuple[torch.Tensor, torch.Tensor]:
        pairs = [dataset[int(i)] for i in idx]
        return torch.stack([p[0] for p in pairs]), torch.stack([p[1] for p in pairs])

    # -- one step -------------------------------------------------------------

    def set_lr(self, epoch: int) -> float:
        lr = lr_at(epoch, self.schedule)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        return lr

    def train_step(self, lq: torch.Tensor, hq: torch.Tensor, snapshot_dir: Path | None = None) -> dict[str, float]:
        """One generator and one discriminator update, both from the same forward pass."""
        self.model.train()
        self.disc.train()
        g_total, d_total, comps = full_objective(lq, hq, self.model, self.disc, self.weights, self.extractor)
        if not (torch.isfinite(g_total) and torch.isfinite(d_total)):
            self._nan_snapshot(lq, hq, comps, snapshot_dir)
        self.opt_g.zero_grad(set_to_none=True)
        self.opt_d.zero_grad(set_to_none=True)
        g_total.backward(inputs=list(self.model.parameters()))
        d_total.backward(inputs=list(self.disc.parameters()))
        self.opt_g.step()
        self.opt_d.step()
        rec = {k: float(v.detach()) for k, v in comps.items()}
        rec["g_total"] = float(g_total.detach())
        rec["d_total"] = float(d_total.detach())
        return rec

    def _nan_snapshot(self, lq, hq, comps, snapshot_dir: Path | None) -> None:
        where = ""
        if snapshot_dir is not None:
            path = Path(snapshot_dir) / f"nan_snapshot_step{self.step:07d}.npz"
            path.parent.mkdir(parents=True, exist_ok=True)
            np.savez(path, lq=lq.numpy(), hq=hq.numpy(),
                     **{k: np.asarray(float(v.detach())) for k, v in comps.items()})
            where = f"; offending batch saved to {path}"
        raise TrainingError(f"non-finite loss at step {self.step} "
                            f"({ {k: float(v.detach()) for k, v in comps.items()} }){where}")

    # -- persistence ----------------------------------------------------------

    def checkpoint_config(self) -> dict[str, Any]:
        cfg = dict(self.config_echo)
        cfg["model"] = self.model.config.to_dict()
        cfg["schedule"] = self.schedule.to_dict()
        cfg["weights"] = {"lambda_fm": self.weights.lambda_fm, "lambda_perc": self.weights.lambda_perc}
        cfg["seed"] = self.seed
        return cfg

    def save(self, path: str | Path) -> Path:
        arrays = module_arrays(self.model, "generator")
        arrays.update(module_arrays(self.disc, "discriminator"))
        arrays.update(_optim_arrays(self.opt_g, "optim_g"))
        arrays.update(_optim_arrays(self.opt_d, "optim_d"))
        meta = {"step": self.step, "epoch": self.epoch, "batch_in_epoch": self.batch_in_epoch}
        return save_checkpoint(path, self.checkpoint_config(), arrays, meta)

    def load(self, ckpt: Checkpoint) -> None:
        saved = ModelConfig.from_dict(ckpt.config["model"])
        if saved != self.model.config:
            raise TrainingError("checkpoint model config differs from the current model")
        load_module_arrays(self.model, ckpt.prefixed("generator"))
        load_module_arrays(self.disc, ckpt.prefixed("discriminator"))
        _load_optim(self.opt_g, ckpt.prefixed("optim_g"))
        _load_optim(self.opt_d, ckpt.prefixed("optim_d"))
        self.step = int(ckpt.meta.get("step", 0))
        self.epoch = int(ckpt.meta.get("epoch", 0))
        self.batch_in_epoch = int(ckpt.meta.get("batch_in_epoch", 0))

    # -- main loop --------------------------------------------------------------

    def fit(self, dataset, checkpoint_dir: str | Path, max_steps: int | None = None) -> Path:
        out = Path(checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.jsonl"
        if len(dataset) == 0:
            raise TrainingError("empty dataset")
        with log_path.open("a") as log_file:
            while self.epoch < self.schedule.total_epochs:
                lr = self.set_lr(self.epoch)
                batches = self.epoch_batches(len(dataset), self.epoch)
                while self.batch_in_epoch < len(batches):
                    if max_steps is not None and self.step >= max_steps:
                        return self.save(out / "final.ckpt")
                    lq, hq = self.collate(dataset, batches[self.batch_in_epoch])
                    rec = self.train_step(lq, hq, snapshot_dir=out)
                    self.step += 1
                    self.batch_in_epoch += 1
                    rec = {"step": self.step, "epoch": self.epoch, "lr": lr, **rec}
                    self.history.append(rec)
                    log_file.write(json.dumps(rec) + "\n")
                    log_file.flush()
                self.epoch += 1
                self.batch_in_epoch = 0
                every = self.schedule.checkpoint_every
                if every and self.epoch % every == 0 and self.epoch < self.schedule.total_epochs:
                    self.save(out / f"epoch_{self.epoch:04d}.ckpt")
                    log.info("epoch %d done (step %d)", self.epoch, self.step)
        return self.save(out / "final.ckpt")


def train(dataset, model: ISPLModel, schedule: TrainSchedule, weights: LossWeights, extractor,
          checkpoint_dir: str | Path, *, disc: MultiScaleDiscriminator | None = None, seed: int = 0,
          config_echo: Mapping[str, Any] | None = None, resume: Checkpoint | None = None,
          max_steps: int | None = None) -> Path:
    """Train ``model`` adversarially and return the path of the final checkpoint."""
    if disc is None:
        cfg = model.config
        disc = MultiScaleDiscriminator(cfg.out_channels, cfg.d_base_channels, cfg.d_layers, cfg.d_scales)
    trainer = Trainer(model, disc, schedule, weights, extractor, seed=seed, config_echo=config_echo)
    if resume is not None:
        trainer.load(resume)
    return trainer.fit(dataset, checkpoint_dir, max_steps=max_steps)


def load_generator(ckpt: Checkpoint) -> ISPLModel:
    """Rebuild the restoration model stored in a training checkpoint, in eval mode."""
    if "model" not in ckpt.config:
        raise TrainingError("checkpoint carries no model config")
    model = ISPLModel(ModelConfig.from_dict(ckpt.config["model"]))
    load_module_arrays(model, ckpt.prefixed("generator"))
    return model.eval()


def steps_per_epoch(n_items: int, batch_size: int) -> int:
    return math.ceil(n_items / batch_size)
