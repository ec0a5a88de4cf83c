"""S2S / S2R / R2R protocol runner, metric reports and the domain-gap statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from ..checkpoint import atomic_write_bytes
from ..types import ValidationError
from . import metrics as M

PROTOCOLS = ("S2S", "S2R", "R2R")
DOMAINS = ("synthetic", "real")
# the training domain each protocol presupposes
PROTOCOL_TRAIN_DOMAIN = {"S2S": "synthetic", "S2R": "synthetic", "R2R": "real"}
PER_IMAGE_METRICS = ("psnr", "ssim", "ms_ssim", "fed", "lle", "lpips_like")
REPORT_FORMAT = "ispl-report"


def normalize_protocol(protocol: str) -> str:
    p = str(protocol).upper()
    if p not in PROTOCOLS:
        raise ValidationError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    return p


@dataclass
class MetricReport:
    protocol: str
    model_id: str
    dataset_id: str
    per_image: list[dict]
    aggregate: dict
    flags: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def validate(self) -> "MetricReport":
        normalize_protocol(self.protocol)
        if not self.per_image:
            raise ValidationError("report has no images")
        for key in PER_IMAGE_METRICS:
            values = np.array([row[key] for row in self.per_image], dtype=np.float64)
            finite = values[~np.isnan(values)]
            expected = float(finite.mean()) if finite.size else math.nan
            got = self.aggregate.get(key)
            if got is None or not (math.isclose(got, expected, rel_tol=0, abs_tol=1e-9)
                                   or (math.isnan(got) and math.isnan(expected))):
                raise ValidationError(f"aggregate {key}={got} is not the mean of the per-image values ({expected})")
        if not self.aggregate.get("fid", -1.0) >= 0:
            raise ValidationError("aggregate fid must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, **asdict(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        d = dict(d)
        if d.pop("format", None) != REPORT_FORMAT:
            raise ValidationError("not a metric report document")
        return cls(**d).validate()

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        cols = ["image_id", *PER_IMAGE_METRICS, "niqe_external", "fid"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in self.per_image:
            writer.writerow([row["image_id"], *(_fmt(row[k]) for k in PER_IMAGE_METRICS),
                             _fmt(row.get("niqe_external")), ""])
        agg = self.aggregate
        writer.writerow(["aggregate", *(_fmt(agg[k]) for k in PER_IMAGE_METRICS),
                         _fmt(agg.get("niqe_external")), _fmt(agg["fid"])])
        return buf.getvalue()

    def save(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``<path>`` (JSON) and the flat CSV beside it."""
        path = Path(path)
        csv_path = path.with_suffix(".csv")
        atomic_write_bytes(path, self.to_json().encode())
        atomic_write_bytes(csv_path, self.to_csv().encode())
        return path, csv_path


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def load_report(path: str | Path) -> MetricReport:
    d = json.loads(Path(path).read_text())
    for row in d.get("per_image", []):
        for k in PER_IMAGE_METRICS:
            if row.get(k) is None:
                row[k] = math.nan
    for k, v in list(d.get("aggregate", {}).items()):
        if v is None:
            d["aggregate"][k] = math.nan
    return MetricReport.from_dict(d)


def load_niqe_scores(path: str | Path) -> dict[str, float]:
    """Two-column CSV ``image_id,score`` (a header row is optional)."""
    scores: dict[str, float] = {}
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                value = float(row[1])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValidationError(f"{path}:{lineno}: score {row[1]!r} is not a number") from None
            scores[row[0].strip()] = value
    return scores


def _restorer(model) -> Callable[[torch.Tensor], torch.Tensor]:
    if isinstance(model, torch.nn.Module):
        model.eval()
        if hasattr(model, "restore_dynamic"):
            return model.restore_dynamic
        return model
    if callable(model):
        return model
    raise ValidationError("model must be an nn.Module or a callable mapping LQ batches to restorations")


def _test_tensors(test_set) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    if hasattr(test_set, "tensors"):
        lq, hq = test_set.tensors()
        ids = list(getattr(test_set, "ids", [f"{i:05d}" for i in range(len(hq))]))
    else:
        lq, hq = test_set[:2]
        ids = list(test_set[2]) if len(test_set) > 2 else [f"{i:05d}" for i in range(len(hq))]
    if len(hq) == 0:
        raise ValidationError("empty test set")
    if len(hq) < 2:
        raise ValidationError("FID needs at least 2 test images")
    if lq.shape != hq.shape:
        raise ValidationError(f"LQ {tuple(lq.shape)} and HQ {tuple(hq.shape)} batches differ in shape")
    return lq.float(), hq.float(), ids


@torch.no_grad()
def run_protocol(model, train_domain: str, test_set, protocol: str, *, extractor, detector,
                 model_id: str = "model", dataset_id: str = "dataset",
                 niqe_scores: Mapping[str, float] | None = None, batch_size: int = 8) -> MetricReport:
    """Restore every LQ image of ``test_set`` and score it against its HQ partner.

    ``model`` is an ``ISPLModel`` (restored dynamically) or any callable taking
    an LQ batch. ``test_set`` is a ``PairedDataset`` or an ``(lq, hq[, ids])``
    tuple. ``train_domain`` must be the domain ``protocol`` trains on.
    """
    protocol = normalize_protocol(protocol)
    if train_domain not in DOMAINS:
        raise ValidationError(f"train_domain must be one of {DOMAINS}")
    if PROTOCOL_TRAIN_DOMAIN[protocol] != train_domain:
        raise ValidationError(f"protocol {protocol} needs a model trained on "
                              f"{PROTOCOL_TRAIN_DOMAIN[protocol]} data, got {train_domain}")
    lq, hq, ids = _test_tensors(test_set)
    restore = _restorer(model)
    out = torch.cat([restore(lq[i:i + batch_size]) for i in range(0, len(lq), batch_size)]).float()
    if out.shape != hq.shape:
        raise ValidationError(f"restorations have shape {tuple(out.shape)}, expected {tuple(hq.shape)}")

    flags: list[str] = []
    fed = M.fed(out, hq, extractor)
    lle = M.lle(out, hq, detector)
    lp = M.lpips_like(out, hq, extractor)
    scales = M.ms_ssim_scales(min(hq.shape[-2:]))
    if scales < len(M.MS_SSIM_WEIGHTS):
        flags.append(f"ms_ssim_scales_{scales}")
    if niqe_scores is not None:
        missing = [i for i in ids if i not in niqe_scores]
        if missing:
            raise ValidationError(f"NIQE scores missing for: {', '.join(missing)}")
    rows = []
    for i, image_id in enumerate(ids):
        row = {"image_id": image_id,
               "psnr": M.psnr(out[i], hq[i]),
               "ssim": M.ssim(out[i], hq[i]),
               "ms_ssim": M.ms_ssim(out[i], hq[i]),
               "fed": float(fed[i]),
               "lle": float(lle[i]),
               "lpips_like": float(lp[i])}
        if niqe_scores is not None:
            row["niqe_external"] = float(niqe_scores[image_id])
        rows.append(row)

    aggregate = {}
    for key in PER_IMAGE_METRICS:
        values = np.array([r[key] for r in rows])
        finite = values[~np.isnan(values)]
        aggregate[key] = float(finite.mean()) if finite.size else math.nan
    failures = int(np.isnan(lle).sum())
    if failures:
        flags.append("lle_detector_failures")
    if niqe_scores is not None:
        aggregate["niqe_external"] = float(np.mean([r["niqe_external"] for r in rows]))
    fid_flags: list[str] = []
    aggregate["fid"] = M.fid(hq, out, extractor, fid_flags)
    flags.extend(f"fid_{f}" for f in fid_flags)
    meta = {"train_domain": train_domain, "n_images": len(ids), "ms_ssim_scales": scales,
            "lle_failures": failures, "psnr_cap": M.PSNR_CAP}
    return MetricReport(protocol, model_id, dataset_id, rows, aggregate, flags, meta).validate()


# -- domain gap and generalization gain --------------------------------------------


def _perceptual(report, expected_protocol: str | None) -> tuple[float, float]:
    if isinstance(report, MetricReport):
        if expected_protocol and report.protocol != expected_protocol:
            raise ValidationError(f"expected a {expected_protocol} report, got {report.protocol}")
        agg = report.aggregate
    else:
        agg = report
    try:
        return float(agg["fid"]), float(agg["lpips_like"])
    except KeyError as exc:
        raise ValidationError(f"report lacks perceptual metric {exc}") from None


def domain_gap(s2s, s2r) -> float:
    """Mean over FID and LPIPS of S2R / S2S, as a multiplier."""
    a, b = _perceptual(s2s, "S2S"), _perceptual(s2r, "S2R")
    if any(v == 0 for v in a):
        raise ValidationError("S2S perceptual metric is zero; the gap is undefined")
    return float(np.mean([b[0] / a[0], b[1] / a[1]]))


def r2r_gain(s2r, r2r) -> float:
    """Mean over FID and LPIPS of (S2R - R2R) / S2R, in percent."""
    a, b = _perceptual(s2r, "S2R"), _perceptual(r2r, "R2R")
    if any(v == 0 for v in a):
        raise ValidationError("S2R perceptual metric is zero; the gain is undefined")
    return float(np.mean([(a[0] - b[0]) / a[0], (a[1] - b[1]) / a[1]]) * 100.0)


def summarize(reports: Sequence[MetricReport]) -> dict:
    """Aggregate table keyed by protocol, plus gap and gain where the protocols allow."""
    by_protocol = {r.protocol: r for r in reports}
    out: dict = {"reports": {p: dict(r.aggregate) for p, r in sorted(by_protocol.items())}}
    if {"S2S", "S2R"} <= set(by_protocol):
        out["domain_gap"] = domain_gap(by_protocol["S2S"], by_protocol["S2R"])
    if {"S2R", "R2R"} <= set(by_protocol):
        out["r2r_gain"] = r2r_gain(by_protocol["S2R"], by_protocol["R2R"])
    return out
