"""Shared input-validation helpers and the package error taxonomy.

Every user-facing entry point validates its inputs through these helpers so
that failures carry a machine-readable category (used by the CLI for exit
codes) and a human-readable message.
"""

from __future__ import annotations

import numpy as np
import torch


class TofreconError(Exception):
    """Base class for all package errors."""

    category = "internal"


class ConfigError(TofreconError, ValueError):
    """Invalid configuration value or combination."""

    category = "config"


class DataError(TofreconError, ValueError):
    """Malformed or inconsistent input data."""

    category = "data"


class GeometryError(TofreconError, ValueError):
    """Shape / axis / slab-geometry mismatch."""

    category = "geometry"


class IOFormatError(TofreconError, ValueError):
    """File payload does not match its sidecar metadata."""

    category = "io"


class TrainingError(TofreconError, RuntimeError):
    """Training aborted (non-finite loss or gradients)."""

    category = "training"


def as_tensor(x, dtype=None) -> torch.Tensor:
    """Convert numpy arrays (or tensors) to a torch tensor without copying when possible."""
    if isinstance(x, torch.Tensor):
        t = x
    else:
        t = torch.as_tensor(np.asarray(x))
    if dtype is not None:
        t = t.to(dtype)
    return t


def check_finite(x: torch.Tensor, name: str = "input") -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise DataError(f"{name} contains non-finite entries")
    return x


def check_complex(x: torch.Tensor, name: str = "input") -> torch.Tensor:
    if not x.is_complex():
        raise DataError(f"{name} must be complex-valued, got {x.dtype}")
    return x


def check_coil_stack(x, name: str = "coil stack") -> torch.Tensor:
    """Validate a complex multi-coil stack shaped [..., C, H, W]."""
    t = as_tensor(x)
    check_complex(t, name)
    if t.ndim < 3:
        raise DataError(f"{name} must have at least 3 dims [C, H, W], got shape {tuple(t.shape)}")
    if min(t.shape[-3:]) < 1:
        raise DataError(f"{name} has a degenerate axis: shape {tuple(t.shape)}")
    check_finite(t, name)
    return t


def check_mask_array(keep, name: str = "mask") -> torch.Tensor:
    t = as_tensor(keep)
    if t.ndim != 2:
        raise DataError(f"{name} must be 2-D [H, W], got shape {tuple(t.shape)}")
    t = t.to(torch.float32)
    if not torch.logical_or(t == 0, t == 1).all():
        raise DataError(f"{name} entries must be 0 or 1")
    return t


def check_spatial_match(x: torch.Tensor, mask: torch.Tensor, name: str = "input") -> None:
    if tuple(x.shape[-2:]) != tuple(mask.shape[-2:]):
        raise GeometryError(
            f"{name} spatial shape {tuple(x.shape[-2:])} does not match mask {tuple(mask.shape[-2:])}"
        )


def check_same_shape(a: torch.Tensor, b: torch.Tensor, names=("first", "second")) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise GeometryError(
            f"{names[0]} shape {tuple(a.shape)} does not match {names[1]} shape {tuple(b.shape)}"
        )


def check_odd(value: int, name: str = "depth") -> int:
    if value < 1 or value % 2 == 0:
        raise ConfigError(f"{name} must be a positive odd integer, got {value}")
    return value


def check_positive(value, name: str):
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value
