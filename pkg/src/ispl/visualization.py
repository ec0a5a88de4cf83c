"""Subspace panels and perception-distortion figures."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from . import degradation as dg  # noqa: E402
from .checkpoint import module_checksum  # noqa: E402
from .data import write_png  # noqa: E402
from .evaluation import metrics as M  # noqa: E402
from .types import ValidationError, check_image_batch  # noqa: E402

ISOLATION_CONSTANT = 0.5
DEFAULT_PD_SCALES = (2, 4, 8, 16)


@dataclass
class PanelGrid:
    isolated: list[torch.Tensor]      # top row: one subspace at a time
    accumulated: list[torch.Tensor]   # bottom row: levels 0..i enabled
    image: torch.Tensor               # tiled (3, 2H, nW)

    @property
    def shape(self) -> tuple[int, int]:
        return 2, len(self.isolated)


@torch.no_grad()
def subspace_panels(y: torch.Tensor, model, constant: float = ISOLATION_CONSTANT,
                    out_path: str | Path | None = None) -> PanelGrid:
    """2 x n grid: isolated subspaces on top, coarsest-first accumulation below."""
    check_image_batch(y, "y")
    if y.shape[0] != 1:
        raise ValidationError("subspace_panels takes a single image (batch size 1)")
    model.eval()
    n = model.n_layers
    top = [model.isolate_subspace(y, i, constant)[0] for i in range(n)]
    bottom = [model.accumulate(y, i, constant)[0] for i in range(n)]
    image = torch.cat([torch.cat(top, dim=-1), torch.cat(bottom, dim=-1)], dim=-2)
    if out_path is not None:
        write_png(out_path, image)
    return PanelGrid(top, bottom, image)


@dataclass
class PDPoint:
    distortion: float   # PSNR, dB
    perception: float   # FID
    label: str
    scale_factor: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.distortion):
            raise ValidationError("distortion must be finite")
        if not self.perception >= 0:
            raise ValidationError("perception must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@torch.no_grad()
def pd_sweep(model, hq: torch.Tensor, scales: Sequence[int] = DEFAULT_PD_SCALES, *, extractor,
             label_prefix: str = "x") -> list[PDPoint]:
    """Bicubic-downscale ``hq`` by each factor, restore with the frozen model, score PSNR and FID.

    Raises if the model parameters change during the sweep.
    """
    check_image_batch(hq, "hq")
    if len(hq) < 2:
        raise ValidationError("pd_sweep needs at least 2 images for FID")
    h, w = hq.shape[-2:]
    for s in scales:
        if s < 1 or h % s or w % s:
            raise ValidationError(f"scale {s} does not divide the image size {h}x{w}")
    model.eval()
    before = module_checksum(model)
    points = []
    for s in scales:
        lq = hq if s == 1 else dg.upsample_bicubic(dg.downsample_bicubic(hq, s), (h, w))
        out = model.restore_dynamic(lq.float())
        distortion = float(np.mean([M.psnr(out[i], hq[i]) for i in range(len(hq))]))
        points.append(PDPoint(distortion, M.fid(hq, out, extractor), f"{label_prefix}{s}", int(s)))
    if module_checksum(model) != before:
        raise RuntimeError("model parameters changed during the sweep")
    return points


def hypothetical_boundary(points: Sequence[PDPoint]) -> np.ndarray:
    """Monotone convex lower envelope of the points in the (PSNR, FID) plane.

    This is a drawn hypothesis, not a fitted law.

    Returns an ``(m, 2)`` array of vertices sorted by PSNR, or an empty array
    when fewer than 3 points are given.
    """
    if len(points) < 3:
        return np.empty((0, 2))
    pts = sorted({(p.distortion, p.perception) for p in points})
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    arr = np.array(hull)
    # a convex envelope is monotone on either side of its minimum; keep the
    # branch that spans more points, preferring the rising (trade-off) one
    k = int(np.argmin(arr[:, 1]))
    falling, rising = arr[:k + 1], arr[k:]
    return rising if len(rising) >= len(falling) else falling


def pd_plot(points: Sequence[PDPoint], out_path: str | Path) -> Path:
    """Scatter on the perception-distortion plane with an inverted PSNR axis (PNG or SVG)."""
    if not points:
        raise ValidationError("pd_plot needs at least one point")
    out_path = Path(out_path)
    fmt = out_path.suffix.lower().lstrip(".")
    if fmt not in ("png", "svg"):
        raise ValidationError("output must be .png or .svg")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "ispl", "svg.fonttype": "none", "font.family": "DejaVu Sans"}):
        fig, ax = plt.subplots(figsize=(5, 4), dpi=100)
        xs = [p.distortion for p in points]
        ys = [p.perception for p in points]
        ax.scatter(xs, ys, color="tab:blue", zorder=3)
        for p in points:
            ax.annotate(p.label, (p.distortion, p.perception), textcoords="offset points", xytext=(4, 4))
        boundary = hypothetical_boundary(points)
        if len(boundary) >= 2:
            ax.plot(boundary[:, 0], boundary[:, 1], "--", color="gray", label="hypothetical boundary")
            ax.legend(loc="best")
        if len(set(xs)) == 1:
            ax.set_xlim(xs[0] + 1, xs[0] - 1)
        else:
            ax.invert_xaxis()
        ax.set_xlabel("PSNR (dB), inverted")
        ax.set_ylabel("FID")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        metadata = {"Software": None} if fmt == "png" else {"Date": None, "Creator": None}
        fig.savefig(out_path, format=fmt, metadata=metadata)
        plt.close(fig)
    return out_path
