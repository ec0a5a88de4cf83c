"""Dataset ingestion, image I/O and a synthetic face-like corpus for smoke runs."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from . import degradation as dg
from .types import ValidationError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class IngestionError(ValidationError):
    def __init__(self, message: str, files: Sequence[str] = ()):
        self.files = list(files)
        detail = f": {', '.join(self.files)}" if self.files else ""
        super().__init__(message + detail)


def read_image(path: str | Path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def to_uint8(img: torch.Tensor) -> np.ndarray:
    x = img.detach().cpu().double().clamp(0, 1)
    if x.dim() == 4:
        x = x[0]
    return (x.numpy().transpose(1, 2, 0) * 255.0).round().astype(np.uint8)


def write_png(path: str | Path, img: torch.Tensor) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path, format="PNG")
    return path


def list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise IngestionError(f"not a directory: {d}")
    return sorted((p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=lambda p: p.name)


def item_seed(seed: int, index: int) -> int:
    """Per-image seed derived from the experiment seed and the image index."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


class PairedDataset:
    """Ordered (LQ, HQ) pairs, either stored or synthesized on the fly from HQ images.

    Items are ``(lq, hq)`` float tensors of shape ``(3, H, W)``. LQ images smaller
    than their HQ partner are bicubically resized to the HQ size.
    """

    def __init__(self, hq: Sequence[Path] | torch.Tensor, lq: Sequence[Path] | torch.Tensor | None = None,
                 *, task: str | None = None, seed: int = 0, ids: Sequence[str] | None = None,
                 noise_range: tuple[float, float] = dg.NOISE_LEVEL_RANGE):
        if lq is None and task is None:
            raise ValidationError("either LQ images or a degradation task is required")
        if lq is not None and len(lq) != len(hq):
            raise ValidationError("LQ and HQ collections differ in length")
        if task is not None and task not in dg.TASKS:
            raise ValidationError(f"unknown task {task!r}")
        self.hq = hq
        self.lq = lq
        self.task = task
        self.seed = seed
        self.noise_range = tuple(noise_range)
        self.ids = list(ids) if ids is not None else [f"{i:05d}" for i in range(len(hq))]
        self._cache: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}

    def __len__(self) -> int:
        return len(self.hq)

    @staticmethod
    def _load(src, i: int) -> torch.Tensor:
        return src[i].float() if isinstance(src, torch.Tensor) else read_image(src[i])

    def spec(self, i: int) -> dg.DegradationSpec:
        return dg.sample_spec(self.task, item_seed(self.seed, i), self.noise_range)

    def __getitem__(self, i: int) -> tuple[torch.Tensor, torch.Tensor]:
        if i < 0:
            i += len(self)
        if i in self._cache:
            return self._cache[i]
        hq = self._load(self.hq, i)
        if self.lq is not None:
            lq = self._load(self.lq, i)
        else:
            lq = dg.apply(hq[None], self.spec(i))[0]
        if lq.shape[-2:] != hq.shape[-2:]:
            lq = dg.upsample_bicubic(lq[None], tuple(hq.shape[-2:]))[0]
        self._cache[i] = (lq, hq)
        return lq, hq

    def tensors(self) -> tuple[torch.Tensor, torch.Tensor]:
        pairs = [self[i] for i in range(len(self))]
        return torch.stack([p[0] for p in pairs]), torch.stack([p[1] for p in pairs])


def _check_uniform(paths: Sequence[Path], label: str) -> None:
    sizes = {}
    for p in paths:
        with Image.open(p) as im:
            sizes.setdefault(im.size, []).append(p.name)
    if len(sizes) > 1:
        odd = sorted(sizes.items(), key=lambda kv: len(kv[1]))[0][1]
        raise IngestionError(f"{label} image sizes are not uniform ({sorted(sizes)})", odd)


def _read_pairs_file(path: Path) -> list[tuple[Path, Path]]:
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"lq", "hq"}:
        raise IngestionError(f"pairs file {path} must be a CSV with columns lq,hq")
    base = path.parent
    return [((base / r["lq"]), (base / r["hq"])) for r in rows]


def ingest(dir_lq: str | Path | None, dir_hq: str | Path, *, task: str | None = None, seed: int = 0,
           pairs_file: str | Path | None = None,
           noise_range: tuple[float, float] = dg.NOISE_LEVEL_RANGE) -> PairedDataset:
    """Pair LQ/HQ images by filename stem, or wrap HQ-only data with a degradation task."""
    if pairs_file is not None:
        pairs = _read_pairs_file(Path(pairs_file))
        missing = [str(p) for pair in pairs for p in pair if not p.exists()]
        if missing:
            raise IngestionError("files listed in the pairs file do not exist", missing)
        lq_paths, hq_paths = [p[0] for p in pairs], [p[1] for p in pairs]
        _check_uniform(hq_paths, "HQ")
        _check_uniform(lq_paths, "LQ")
        return PairedDataset(hq_paths, lq_paths, ids=[p.stem for p in hq_paths])

    hq_paths = list_images(dir_hq)
    if not hq_paths:
        raise IngestionError(f"no images found in {dir_hq}")
    _check_uniform(hq_paths, "HQ")
    if dir_lq is None:
        if task is None:
            raise ValidationError("HQ-only ingestion needs a degradation task")
        return PairedDataset(hq_paths, task=task, seed=seed, ids=[p.stem for p in hq_paths],
                             noise_range=noise_range)

    lq_paths = list_images(dir_lq)
    lq_by_stem = {p.stem: p for p in lq_paths}
    hq_by_stem = {p.stem: p for p in hq_paths}
    if len(lq_by_stem) != len(lq_paths) or len(hq_by_stem) != len(hq_paths):
        raise IngestionError("duplicate filename stems; supply a pairs file instead")
    orphans = sorted([lq_by_stem[s].name for s in set(lq_by_stem) - set(hq_by_stem)]
                     + [hq_by_stem[s].name for s in set(hq_by_stem) - set(lq_by_stem)])
    if orphans:
        raise IngestionError("unpaired files", orphans)
    stems = sorted(hq_by_stem)
    lq_sorted = [lq_by_stem[s] for s in stems]
    _check_uniform(lq_sorted, "LQ")
    return PairedDataset([hq_by_stem[s] for s in stems], lq_sorted, ids=stems)


def synthetic_faces(n: int, size: int = 64, seed: int = 0) -> torch.Tensor:
    """Smooth face-like test images: shaded background, skin ellipse, eyes and mouth."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    out = np.empty((n, 3, size, size))
    for i in range(n):
        bg_a, bg_b = rng.uniform(0.2, 0.8, 3), rng.uniform(0.2, 0.8, 3)
        t = (xx * np.cos(rng.uniform(0, np.pi)) + yy * np.sin(rng.uniform(0, np.pi)))
        img = bg_a[:, None, None] * (1 - t) + bg_b[:, None, None] * t
        cx, cy = rng.uniform(0.42, 0.58, 2)
        rx, ry = rng.uniform(0.22, 0.3), rng.uniform(0.3, 0.38)
        face = 1.0 / (1.0 + np.exp(((xx - cx) ** 2 / rx**2 + (yy - cy) ** 2 / ry**2 - 1.0) * 12.0))
        skin = rng.uniform([0.55, 0.35, 0.25], [0.95, 0.75, 0.6])
        img = img * (1 - face) + skin[:, None, None] * face
        feat = np.zeros_like(xx)
        for ex in (cx - rx * 0.4, cx + rx * 0.4):
            feat += np.exp(-((xx - ex) ** 2 + (yy - cy + ry * 0.25) ** 2) / (2 * 0.03**2))
        feat += np.exp(-((xx - cx) ** 2 / (2 * (rx * 0.35) ** 2) + (yy - cy - ry * 0.45) ** 2 / (2 * 0.02**2)))
        img = img * (1 - 0.7 * np.clip(feat, 0, 1))
        out[i] = np.clip(img, 0, 1)
    return torch.from_numpy(out).float()


def digest_paths(paths: Sequence[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()
