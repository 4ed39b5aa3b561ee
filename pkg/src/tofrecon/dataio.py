"""File formats and atomic disk IO.

Array payloads are raw little-endian binaries next to a JSON sidecar
(``<name>.json``) describing shape, dtype, axis order and provenance:

* coil stacks / k-space: float32 (real, imag) pairs, coil-major then
  row-major (numpy complex64 C-order layout);
* masks: 8-bit {0,1} grids;
* volumes: float32, slab/slice-major.

All writes go to a temporary name in the target directory followed by an
atomic rename, so failures never leave partial outputs.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .masks import SamplingMask
from .validation import DataError, IOFormatError


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _check_payload(meta: dict, expected_format: str, path) -> None:
    if meta.get("format") != expected_format:
        raise IOFormatError(
            f"{path}: sidecar format {meta.get('format')!r} is not {expected_format!r}"
        )


def save_coil_stack(path, array, **extra) -> Path:
    """Write a complex coil stack (any shape ending in [C, H, W])."""
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.complex64))
    meta = {
        "format": "coilstack",
        "shape": list(arr.shape),
        "dtype": "complex64",
        "encoding": "float32-pairs-little-endian",
        "axes": "... coil row col",
        **extra,
    }
    path = Path(path)
    atomic_write_bytes(path, arr.astype("<c8").tobytes())
    save_json(_sidecar_path(path), meta)
    return path


def load_coil_stack(path):
    path = Path(path)
    meta = load_json(_sidecar_path(path))
    _check_payload(meta, "coilstack", path)
    raw = np.fromfile(path, dtype="<c8")
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise IOFormatError(f"{path}: payload has {raw.size} entries, sidecar says {shape}")
    return raw.reshape(shape), meta


def save_volume(path, array, **extra) -> Path:
    """Write a real volume (float32, slab/slice-major)."""
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
    meta = {
        "format": "volume",
        "shape": list(arr.shape),
        "dtype": "float32",
        "encoding": "float32-little-endian",
        "axes": "axial(coronal-index) row col" if arr.ndim == 3 else "... row col",
        **extra,
    }
    path = Path(path)
    atomic_write_bytes(path, arr.astype("<f4").tobytes())
    save_json(_sidecar_path(path), meta)
    return path


def load_volume(path):
    path = Path(path)
    meta = load_json(_sidecar_path(path))
    _check_payload(meta, "volume", path)
    raw = np.fromfile(path, dtype="<f4")
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise IOFormatError(f"{path}: payload has {raw.size} entries, sidecar says {shape}")
    return raw.reshape(shape), meta


def save_mask(path, mask: SamplingMask) -> Path:
    meta = {
        "format": "mask",
        "shape": list(mask.shape),
        "dtype": "uint8",
        "encoding": "uint8-binary",
        "axes": "row col",
        "accel": mask.accel,
        "acs_fraction": mask.acs_fraction,
        "pf_fraction": mask.pf_fraction,
        "seed": mask.seed,
        "pf_axis": "rows (frequency encode)",
    }
    path = Path(path)
    atomic_write_bytes(path, mask.numpy().tobytes())
    save_json(_sidecar_path(path), meta)
    return path


def load_mask(path) -> SamplingMask:
    path = Path(path)
    meta = load_json(_sidecar_path(path))
    _check_payload(meta, "mask", path)
    raw = np.fromfile(path, dtype=np.uint8)
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise IOFormatError(f"{path}: payload has {raw.size} entries, sidecar says {shape}")
    return SamplingMask(
        keep=torch.from_numpy(raw.reshape(shape).astype(np.float32)),
        accel=meta["accel"],
        acs_fraction=meta["acs_fraction"],
        pf_fraction=meta["pf_fraction"],
        seed=meta["seed"],
    )


def save_checkpoint(directory, weights: dict, config: dict) -> Path:
    """Write a checkpoint directory atomically: weights archive + config."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=directory.parent, prefix=f".{directory.name}."))
    try:
        torch.save(weights, tmp / "weights.pt")
        (tmp / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
        if directory.exists():
            raise IOFormatError(f"checkpoint {directory} already exists")
        os.replace(tmp, directory)
    except BaseException:
        if tmp.exists():
            for child in tmp.iterdir():
                child.unlink()
            tmp.rmdir()
        raise
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    weights_path = directory / "weights.pt"
    config_path = directory / "config.json"
    if not weights_path.exists() or not config_path.exists():
        raise DataError(f"{directory} is not a checkpoint directory")
    weights = torch.load(weights_path, map_location="cpu", weights_only=False)
    config = json.loads(config_path.read_text())
    return weights, config
