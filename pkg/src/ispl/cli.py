"""Command-line entry point: ``ispl <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every run writes a ``manifest.json`` (or ``<artifact>.manifest.json``) beside
its outputs with the config echo, seed, library versions and input hashes.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from . import degradation as dg
from .checkpoint import atomic_write_bytes, file_sha256, load_checkpoint
from .config import ExperimentConfig, load_config
from .data import PairedDataset, digest_paths, ingest, item_seed, list_images, read_image, write_png
from .evaluation.extractors import CentroidLandmarkDetector, build_extractor
from .evaluation.protocol import load_niqe_scores, load_report, run_protocol, summarize
from .training import build_models, load_generator, train
from .types import ValidationError

log = logging.getLogger("ispl")


def _versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"ispl": pkg, "python": platform.python_version(), "torch": torch.__version__,
            "numpy": np.__version__}


def write_manifest(path: Path, command: str, argv: Sequence[str], config: dict | None, seed: int | None,
                   inputs: dict[str, str], outputs: Sequence[Path]) -> Path:
    doc = {"command": command, "argv": list(argv), "config": config, "seed": seed,
           "versions": _versions(), "inputs": inputs, "outputs": sorted(str(p) for p in outputs)}
    atomic_write_bytes(path, (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode())
    return path


def resolve_dataset(data_dir: str | Path, task: str | None, seed: int, noise_range=dg.NOISE_LEVEL_RANGE
                    ) -> tuple[PairedDataset, str]:
    """Pick the ingestion mode from the directory layout.

    ``pairs.csv`` -> explicit pairs; ``lq/`` + ``hq/`` -> stem pairing;
    ``hq/`` alone or a flat image directory -> on-the-fly degradation with ``task``.
    Returns the dataset and a content digest of its files.
    """
    d = Path(data_dir)
    if not d.is_dir():
        raise ValidationError(f"data directory not found: {d}")
    if (d / "pairs.csv").is_file():
        ds = ingest(None, d, pairs_file=d / "pairs.csv")
        paths = [p for pair in zip(ds.lq, ds.hq) for p in pair]
    elif (d / "lq").is_dir() and (d / "hq").is_dir():
        ds = ingest(d / "lq", d / "hq")
        paths = list(ds.lq) + list(ds.hq)
    else:
        hq_dir = d / "hq" if (d / "hq").is_dir() else d
        ds = ingest(None, hq_dir, task=task, seed=seed, noise_range=noise_range)
        paths = list(ds.hq)
    return ds, digest_paths(paths)


# -- subcommands --------------------------------------------------------------------


def cmd_degrade(args) -> int:
    images = list_images(args.input)
    if not images:
        raise ValidationError(f"no images found in {args.input}")
    fixed = dg.load_spec(args.spec) if args.spec else None
    if fixed is None and args.task is None:
        raise ValidationError("degrade needs --task or --spec")
    out = Path(args.output)
    outputs = []
    for i, path in enumerate(images):
        s = item_seed(args.seed, i)
        if fixed is not None:
            spec = dg.DegradationSpec.from_dict({**fixed.to_dict(), "seed": s})
        else:
            spec = dg.sample_spec(args.task, s)
        lq = dg.apply(read_image(path)[None], spec)
        outputs.append(write_png(out / f"{path.stem}.png", lq))
        outputs.append(dg.save_spec(spec, out / "specs" / f"{path.stem}.yaml"))
    inputs = {"images": digest_paths(images)}
    if args.spec:
        inputs[str(args.spec)] = file_sha256(args.spec)
    write_manifest(out / "manifest.json", "degrade", args.argv, {"task": args.task, "spec": args.spec},
                   args.seed, inputs, outputs)
    print(f"wrote {len(images)} degraded images to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    data_dir = args.data or cfg.data.hq
    if data_dir is None:
        raise ValidationError("no training data: pass --data or set data.hq in the config")
    dataset, digest = resolve_dataset(data_dir, cfg.task, cfg.seed, cfg.noise_range)
    if dataset[0][1].shape[-1] != cfg.model.image_size:
        raise ValidationError(f"images are {tuple(dataset[0][1].shape[-2:])}, "
                              f"model.image_size is {cfg.model.image_size}")
    out = Path(args.out or cfg.output_dir)
    echo = cfg.to_dict()
    model, disc = build_models(cfg.model, cfg.seed)
    resume = load_checkpoint(args.resume) if args.resume else None
    final = train(dataset, model, cfg.schedule, cfg.weights, build_extractor(cfg.extractor, cfg.extractor_seed),
                  out, disc=disc, seed=cfg.seed, config_echo=echo, resume=resume, max_steps=args.max_steps)
    inputs = {"data": digest, str(args.config): file_sha256(args.config)}
    if args.resume:
        inputs[str(args.resume)] = file_sha256(args.resume)
    write_manifest(out / "manifest.json", "train", args.argv, echo, cfg.seed, inputs,
                   sorted(out.glob("*.ckpt")) + [out / "train_log.jsonl"])
    print(f"final checkpoint: {final}")
    return 0


def _checkpoint_setup(path):
    ckpt = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(ckpt.config)
    return ckpt, cfg, load_generator(ckpt)


def cmd_eval(args) -> int:
    ckpt, cfg, model = _checkpoint_setup(args.ckpt)
    dataset, digest = resolve_dataset(args.data, cfg.task, cfg.seed, cfg.noise_range)
    niqe = load_niqe_scores(args.niqe) if args.niqe else None
    report = run_protocol(model, cfg.domain, dataset, args.protocol,
                          extractor=build_extractor(cfg.extractor, cfg.extractor_seed),
                          detector=CentroidLandmarkDetector(), model_id=Path(args.ckpt).name,
                          dataset_id=Path(args.data).name, niqe_scores=niqe)
    json_path, csv_path = report.save(args.report)
    inputs = {"data": digest, str(args.ckpt): file_sha256(args.ckpt)}
    if args.niqe:
        inputs[str(args.niqe)] = file_sha256(args.niqe)
    write_manifest(json_path.with_suffix(".manifest.json"), "eval", args.argv, ckpt.config, cfg.seed, inputs,
                   [json_path, csv_path])
    agg = report.aggregate
    print(f"{report.protocol}: PSNR {agg['psnr']:.3f} dB  SSIM {agg['ssim']:.4f}  FID {agg['fid']:.4f}  "
          f"LPIPS-like {agg['lpips_like']:.4f}  -> {json_path}")
    return 0


def _fit_to_model(img: torch.Tensor, size: int) -> torch.Tensor:
    if tuple(img.shape[-2:]) == (size, size):
        return img
    return dg.resize_bicubic(img, (size, size)).clamp(0, 1)


def cmd_viz_subspaces(args) -> int:
    from .visualization import subspace_panels

    ckpt, cfg, model = _checkpoint_setup(args.ckpt)
    y = _fit_to_model(read_image(args.input)[None], cfg.model.image_size)
    grid = subspace_panels(y, model, constant=args.constant, out_path=args.out)
    out = Path(args.out)
    write_manifest(out.with_suffix(".manifest.json"), "viz-subspaces", args.argv, ckpt.config, cfg.seed,
                   {str(args.ckpt): file_sha256(args.ckpt), str(args.input): file_sha256(args.input)}, [out])
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} panel grid to {out}")
    return 0


def cmd_pd_sweep(args) -> int:
    from .visualization import pd_plot, pd_sweep

    try:
        scales = [int(s) for s in args.scales.split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"--scales must be comma-separated integers, got {args.scales!r}") from None
    ckpt, cfg, model = _checkpoint_setup(args.ckpt)
    d = Path(args.data)
    hq_dir = d / "hq" if (d / "hq").is_dir() else d
    paths = list_images(hq_dir)
    if not paths:
        raise ValidationError(f"no images found in {hq_dir}")
    hq = torch.stack([_fit_to_model(read_image(p)[None], cfg.model.image_size)[0] for p in paths])
    points = pd_sweep(model, hq, scales, extractor=build_extractor(cfg.extractor, cfg.extractor_seed))
    out = Path(args.out)
    pts_path = out / "pd_points.json"
    atomic_write_bytes(pts_path, (json.dumps([p.to_dict() for p in points], indent=1) + "\n").encode())
    fig = pd_plot(points, out / "pd_plane.png")
    write_manifest(out / "manifest.json", "pd-sweep", args.argv, ckpt.config, cfg.seed,
                   {str(args.ckpt): file_sha256(args.ckpt), "data": digest_paths(paths)}, [pts_path, fig])
    for p in points:
        print(f"{p.label}: PSNR {p.distortion:.3f} dB  FID {p.perception:.4f}")
    return 0


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.reports]
    summary = summarize(reports)
    text = json.dumps(summary, sort_keys=True, indent=1) + "\n"
    if args.out:
        out = Path(args.out)
        atomic_write_bytes(out, text.encode())
        write_manifest(out.with_suffix(".manifest.json"), "report", args.argv, None, None,
                       {str(p): file_sha256(p) for p in args.reports}, [out])
    sys.stdout.write(text)
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ispl", description="Implicit subspace prior restoration toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("degrade", help="synthesize LQ images from a directory of HQ images")
    p.add_argument("--task", choices=dg.TASKS)
    p.add_argument("--input", required=True, help="directory of HQ images")
    p.add_argument("--output", required=True, help="output directory for degraded PNGs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="YAML degradation spec applied to every image (seed is re-derived per image)")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train a model from a YAML experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="data directory (overrides data.hq)")
    p.add_argument("--out", help="checkpoint directory (overrides output_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation protocol and write a metric report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", required=True, type=str.upper, choices=("S2S", "S2R", "R2R"))
    p.add_argument("--report", required=True, help="report path (.json); a .csv is written beside it")
    p.add_argument("--niqe", help="external NIQE scores, CSV of image_id,score")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz-subspaces", help="emit the 2 x n subspace isolation / accumulation grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="LQ image")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--constant", type=float, default=0.5, help="value of the replacement guidance maps")
    p.set_defaults(func=cmd_viz_subspaces)

    p = sub.add_parser("pd-sweep", help="perception-distortion sweep over bicubic downscaling factors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory of HQ images")
    p.add_argument("--scales", default="2,4,8,16")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pd_sweep)

    p = sub.add_parser("report", help="combine metric reports into domain-gap / gain statistics")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("ispl: error: a subcommand is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"ispl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  top-level diagnostic
        log.debug("failure", exc_info=True)
        print(f"ispl {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
