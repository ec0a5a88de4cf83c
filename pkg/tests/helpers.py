"""Shared smoke-run plumbing for the slower end-to-end tests."""

from pathlib import Path

import numpy as np
import torch

from ispl.config import smoke_config
from ispl.data import PairedDataset, synthetic_faces
from ispl.evaluation.extractors import RandomProjectionExtractor
from ispl.evaluation.metrics import psnr
from ispl.training import Trainer, build_models

N_IMAGES = 8


def smoke_dataset(seed=0):
    cfg = smoke_config(seed=seed)
    return PairedDataset(synthetic_faces(N_IMAGES, cfg.model.image_size, seed=seed), task=cfg.task, seed=seed,
                         noise_range=cfg.noise_range)


def smoke_run(out_dir, seed=0, max_steps=None):
    """Train the smoke configuration; returns (trainer, final checkpoint path)."""
    cfg = smoke_config(seed=seed)
    model, disc = build_models(cfg.model, cfg.seed)
    trainer = Trainer(model, disc, cfg.schedule, cfg.weights, RandomProjectionExtractor(cfg.extractor_seed),
                      seed=cfg.seed, config_echo=cfg.to_dict())
    path = trainer.fit(smoke_dataset(seed), Path(out_dir), max_steps=max_steps)
    return trainer, path


def mean_psnr(a, b):
    return float(np.mean([psnr(a[i], b[i]) for i in range(len(a))]))


@torch.no_grad()
def restored_psnr(model, dataset):
    lq, hq = dataset.tensors()
    model.eval()
    return mean_psnr(lq, hq), mean_psnr(model.restore_dynamic(lq), hq)
