"""Versioned ``.ckpt`` archives: a JSON header plus named ``.npy`` arrays in a zip.

Archives are byte-reproducible (fixed member timestamps, sorted members) and
written atomically via a temporary file and rename.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

FORMAT = "ispl-ckpt"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: dict[str, Any]
    arrays: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    def prefixed(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix.rstrip("/") + "/"
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def _to_numpy(v) -> np.ndarray:
    if isinstance(v, torch.Tensor):
        return v.detach().cpu().numpy()
    return np.asarray(v)


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, config: Mapping[str, Any], arrays: Mapping[str, Any],
                    meta: Mapping[str, Any] | None = None) -> Path:
    names = sorted(arrays)
    header = {"format": FORMAT, "version": VERSION, "config": dict(config),
              "meta": dict(meta or {}), "arrays": names}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write_member(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for name in names:
            npy = io.BytesIO()
            np.save(npy, _to_numpy(arrays[name]), allow_pickle=False)
            _write_member(zf, f"arrays/{name}.npy", npy.getvalue())
    atomic_write_bytes(path, buf.getvalue())
    return Path(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format") != FORMAT:
                raise CheckpointError(f"{path}: not an {FORMAT} archive")
            if header.get("version") != VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
            arrays = {n: np.load(io.BytesIO(zf.read(f"arrays/{n}.npy")), allow_pickle=False)
                      for n in header["arrays"]}
    except (zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return Checkpoint(header["config"], arrays, header.get("meta", {}))


def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: Mapping[str, np.ndarray]) -> None:
    own = module.state_dict()
    missing = sorted(set(own) - set(arrays))
    extra = sorted(set(arrays) - set(own))
    bad = sorted(k for k in set(own) & set(arrays) if tuple(own[k].shape) != tuple(arrays[k].shape))
    if missing or extra or bad:
        raise CheckpointError(f"parameter mismatch: missing={missing[:5]} unexpected={extra[:5]} shape={bad[:5]}")
    module.load_state_dict({k: torch.from_numpy(np.array(arrays[k])) for k in own})


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def module_checksum(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in sorted(module.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()
