"""Seedable synthesis of low-quality images from high-quality ones.

The composite operator is ``J_q((x * k) down_s + n)``: blur, bicubic
downsampling (or block mosaic), additive noise and a JPEG round trip, in that
order. Every stage is optional; a :class:`DegradationSpec` records which stages
are active and with which parameters, and :func:`apply` is a pure function of
``(img, spec)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
import yaml
from PIL import Image

from .types import ValidationError, check_image_batch, clamp_range

TASKS = ("super_resolution", "hallucination", "denoise", "deblur", "jpeg", "dual_blind")
NOISE_MODELS = ("gaussian", "poisson", "laplacian", "none")

# Defaults for parameters the recipes leave open.
SR_SCALE = 4
MOSAIC_BLOCK = 16
NOISE_LEVEL_RANGE = (0.02, 0.1)
GAUSSIAN_SIGMA_RANGE = (1.0, 3.0)
MOTION_LENGTH_RANGE = (5, 15)
JPEG_QUALITY_RANGE = (50, 85)

KEYS_A = -0.5


class DegradationError(RuntimeError):
    """A degradation stage failed; ``stage`` names the offending stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Spec
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DegradationSpec:
    task: str
    blur_kernel: np.ndarray | None = None
    scale: int = 1
    mosaic_block: int | None = None
    noise_model: str = "none"
    noise_level: float = 0.0
    jpeg_quality: int | None = None
    seed: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.blur_kernel is not None:
            self.blur_kernel = np.asarray(self.blur_kernel, dtype=np.float64)
            _check_kernel(self.blur_kernel)
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValidationError(f"scale must be a positive integer, got {self.scale}")
        self.scale = int(self.scale)
        if self.mosaic_block is not None:
            if self.mosaic_block < 1:
                raise ValidationError("mosaic_block must be >= 1")
            if self.scale != 1:
                raise ValidationError("mosaic and downsampling are mutually exclusive")
        if self.noise_model not in NOISE_MODELS:
            raise ValidationError(f"unknown noise model {self.noise_model!r}")
        if self.noise_level < 0:
            raise ValidationError(f"noise level must be >= 0, got {self.noise_level}")
        if self.jpeg_quality is not None and not 0 <= self.jpeg_quality <= 100:
            raise ValidationError(f"jpeg_quality must lie in [0, 100], got {self.jpeg_quality}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "blur_kernel": None if self.blur_kernel is None else self.blur_kernel.tolist(),
            "scale": self.scale,
            "mosaic_block": self.mosaic_block,
            "noise_model": self.noise_model,
            "noise_level": float(self.noise_level),
            "jpeg_quality": self.jpeg_quality,
            "seed": int(self.seed),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DegradationSpec":
        known = {"task", "blur_kernel", "scale", "mosaic_block", "noise_model",
                 "noise_level", "jpeg_quality", "seed", "meta"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown degradation spec keys: {unknown}")
        return cls(**d)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DegradationSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def save_spec(spec: DegradationSpec, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False))
    return path


def load_spec(path: str | Path) -> DegradationSpec:
    return DegradationSpec.from_dict(yaml.safe_load(Path(path).read_text()))


def _check_kernel(kernel: np.ndarray) -> None:
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValidationError(f"blur kernel must be odd-sized and square, got shape {kernel.shape}")
    if (kernel < 0).any():
        raise ValidationError("blur kernel entries must be non-negative")
    if abs(kernel.sum() - 1.0) > 1e-6:
        raise ValidationError(f"blur kernel must sum to 1, got {kernel.sum():.8f}")


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(2 * sigma)
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(length: int, angle: float, oversample: int = 16) -> np.ndarray:
    """Anti-aliased straight-line kernel of the given length (pixels) and angle (radians)."""
    size = length if length % 2 else length + 1
    c = size // 2
    k = np.zeros((size, size), dtype=np.float64)
    t = np.linspace(-(length - 1) / 2, (length - 1) / 2, oversample * length)
    xs = c + t * math.cos(angle)
    ys = c - t * math.sin(angle)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    for dx, dy, w in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                      (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi = np.clip(x0 + dx, 0, size - 1)
        yi = np.clip(y0 + dy, 0, size - 1)
        np.add.at(k, (yi, xi), w)
    return k / k.sum()


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def convolve_blur(img: torch.Tensor, kernel: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Per-channel 2D convolution with reflect padding; output shape equals input shape."""
    check_image_batch(img, check_range=False, channels=None)
    k = kernel.detach().cpu().numpy() if isinstance(kernel, torch.Tensor) else np.asarray(kernel, dtype=np.float64)
    _check_kernel(k)
    r = k.shape[0] // 2
    if r == 0:
        return img * float(k[0, 0])
    c = img.shape[1]
    # conv2d is a correlation; flip for a true convolution
    w = torch.as_tensor(k[::-1, ::-1].copy(), dtype=img.dtype).expand(c, 1, -1, -1)
    padded = F.pad(img, (r, r, r, r), mode="reflect")
    return F.conv2d(padded, w, groups=c)


def keys_cubic(t: np.ndarray, a: float = KEYS_A) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _symmetric_index(i: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    i = np.mod(i, period)
    return np.where(i < n, i, period - 1 - i)


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) Keys-cubic resampling matrix, antialiased when shrinking."""
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(n_out):
        x = (j + 0.5) / scale - 0.5
        taps = np.arange(math.floor(x - support), math.ceil(x + support) + 1)
        w = keys_cubic((x - taps) * stretch)
        w = w / w.sum()
        np.add.at(m[j], _symmetric_index(taps, n_in), w)
    return m


def resize_bicubic(img: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Separable Keys-cubic resize to ``size = (H, W)``; not clamped."""
    h, w = size
    mh = torch.as_tensor(_resize_matrix(img.shape[-2], h), dtype=img.dtype)
    mw = torch.as_tensor(_resize_matrix(img.shape[-1], w), dtype=img.dtype)
    return torch.einsum("ih,bchw,jw->bcij", mh, img, mw)


def downsample_bicubic(img: torch.Tensor, scale: int) -> torch.Tensor:
    check_image_batch(img, check_range=False, channels=None)
    if scale < 1 or int(scale) != scale:
        raise ValidationError(f"scale must be a positive integer, got {scale}")
    h, w = img.shape[-2:]
    if h % scale or w % scale:
        raise ValidationError(f"image size {h}x{w} is not divisible by scale {scale}")
    if scale == 1:
        return img.clone()
    return clamp_range(resize_bicubic(img, (h // scale, w // scale)))


def upsample_bicubic(img: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    return clamp_range(resize_bicubic(img, size))


def mosaic(img: torch.Tensor, block: int) -> torch.Tensor:
    check_image_batch(img, check_range=False, channels=None)
    h, w = img.shape[-2:]
    if block < 1 or h % block or w % block:
        raise ValidationError(f"mosaic block {block} must be >= 1 and divide {h}x{w}")
    if block == 1:
        return img.clone()
    mean = F.avg_pool2d(img, block)
    hi = F.max_pool2d(img, block)
    lo = -F.max_pool2d(-img, block)
    # constant tiles keep their exact value, which makes the op idempotent
    mean = torch.where(hi == lo, hi, mean)
    return F.interpolate(mean, scale_factor=block, mode="nearest")


def sub_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(index)])


def add_noise(img: torch.Tensor, model: str, level: float, seed: int) -> torch.Tensor:
    """Add i.i.d. noise; image ``b`` of the batch draws from sub-seed ``(seed, b)``."""
    check_image_batch(img, check_range=False, channels=None)
    if level < 0:
        raise ValidationError(f"noise level must be >= 0, got {level}")
    if model not in ("gaussian", "poisson", "laplacian"):
        raise ValidationError(f"unknown noise model {model!r}")
    if level == 0:
        return img.clone()
    x = img.detach().cpu().double().numpy()
    out = np.empty_like(x)
    for b in range(x.shape[0]):
        rng = np.random.default_rng(sub_seed(seed, b))
        if model == "gaussian":
            out[b] = x[b] + rng.normal(0.0, level, size=x[b].shape)
        elif model == "laplacian":
            out[b] = x[b] + rng.laplace(0.0, level / math.sqrt(2.0), size=x[b].shape)
        else:
            peak = 1.0 / level**2
            out[b] = rng.poisson(np.clip(x[b], 0, None) * peak) / peak
    return clamp_range(torch.from_numpy(out).to(img.dtype))


def jpeg_roundtrip(img: torch.Tensor, quality: int) -> torch.Tensor:
    check_image_batch(img, check_range=False)
    if not 0 <= quality <= 100:
        raise ValidationError(f"jpeg quality must lie in [0, 100], got {quality}")
    arr = (img.detach().cpu().double().clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    out = np.empty(arr.shape, dtype=np.float64)
    for b in range(arr.shape[0]):
        try:
            buf = io.BytesIO()
            Image.fromarray(arr[b].transpose(1, 2, 0)).save(buf, format="JPEG", quality=int(quality))
            buf.seek(0)
            dec = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64)
        except Exception as exc:  # codec errors surface as degradation errors
            raise DegradationError("jpeg", f"codec failure: {exc}") from exc
        out[b] = dec.transpose(2, 0, 1) / 255.0
    return torch.from_numpy(out).to(img.dtype)


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------


def apply(img: torch.Tensor, spec: DegradationSpec) -> torch.Tensor:
    """Run the active stages of ``spec`` in the fixed order blur, resample, noise, jpeg."""
    check_image_batch(img)
    out = img
    stages = []
    if spec.blur_kernel is not None:
        stages.append(("blur", lambda x: clamp_range(convolve_blur(x, spec.blur_kernel))))
    if spec.mosaic_block is not None:
        stages.append(("mosaic", lambda x: mosaic(x, spec.mosaic_block)))
    elif spec.scale > 1:
        stages.append(("downsample", lambda x: downsample_bicubic(x, spec.scale)))
    if spec.noise_model != "none":
        stages.append(("noise", lambda x: add_noise(x, spec.noise_model, spec.noise_level, spec.seed)))
    if spec.jpeg_quality is not None:
        stages.append(("jpeg", lambda x: jpeg_roundtrip(x, spec.jpeg_quality)))
    for name, fn in stages:
        try:
            out = fn(out)
        except DegradationError:
            raise
        except Exception as exc:
            raise DegradationError(name, str(exc)) from exc
    return out if stages else img.clone()


def _draw_noise(rng: np.random.Generator, noise_range: tuple[float, float]) -> tuple[str, float]:
    model = ("gaussian", "poisson", "laplacian")[rng.integers(3)]
    return model, float(rng.uniform(*noise_range))


def _draw_blur(rng: np.random.Generator) -> tuple[np.ndarray, dict[str, Any]]:
    if rng.integers(2) == 0:
        sigma = float(rng.uniform(*GAUSSIAN_SIGMA_RANGE))
        return gaussian_kernel(sigma), {"blur": "gaussian", "sigma": sigma}
    length = int(rng.integers(MOTION_LENGTH_RANGE[0], MOTION_LENGTH_RANGE[1] + 1))
    angle = float(rng.uniform(0.0, math.pi))
    return motion_kernel(length, angle), {"blur": "motion", "length": length, "angle": angle}


def sample_spec(task: str, rng_seed: int,
                noise_range: tuple[float, float] = NOISE_LEVEL_RANGE) -> DegradationSpec:
    """Draw a spec for one of the six task recipes, deterministically from ``rng_seed``."""
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}; expected one of {TASKS}")
    rng = np.random.default_rng(np.random.SeedSequence(int(rng_seed) & 0xFFFFFFFFFFFFFFFF))
    seed = int(rng.integers(2**31 - 1))
    if task == "super_resolution":
        return DegradationSpec(task, scale=SR_SCALE, seed=seed)
    if task == "hallucination":
        return DegradationSpec(task, mosaic_block=MOSAIC_BLOCK, seed=seed)
    if task == "denoise":
        model, level = _draw_noise(rng, noise_range)
        return DegradationSpec(task, noise_model=model, noise_level=level, seed=seed)
    if task == "deblur":
        kernel, meta = _draw_blur(rng)
        return DegradationSpec(task, blur_kernel=kernel, seed=seed, meta=meta)
    if task == "jpeg":
        q = int(rng.integers(JPEG_QUALITY_RANGE[0], JPEG_QUALITY_RANGE[1] + 1))
        return DegradationSpec(task, jpeg_quality=q, seed=seed)
    # dual_blind: every stage except the mosaic
    kernel, meta = _draw_blur(rng)
    model, level = _draw_noise(rng, noise_range)
    q = int(rng.integers(JPEG_QUALITY_RANGE[0], JPEG_QUALITY_RANGE[1] + 1))
    return DegradationSpec(task, blur_kernel=kernel, scale=SR_SCALE, noise_model=model,
                           noise_level=level, jpeg_quality=q, seed=seed, meta=meta)
