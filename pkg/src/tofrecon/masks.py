"""Cartesian undersampling mask generation.

Vendor acquisition patterns are proprietary, so acceleration masks are
realized as a seeded variable-density random pattern with a fully sampled
central autocalibration (ACS) block and an optional partial-Fourier cut
along the frequency-encode axis (array axis 0, rows).

Sampling outside the ACS block uses exact-count weighted sampling without
replacement, so the achieved acceleration equals the nominal one up to
integer rounding for every seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .validation import ConfigError, check_mask_array

# Gaussian width of the variable-density profile, in units of the
# half-extent of k-space. Center-weighted but with usable tails.
DENSITY_SIGMA = 0.35


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-space keep/discard pattern plus its generation metadata."""

    keep: torch.Tensor  # float32 [H, W], entries in {0, 1}
    accel: float
    acs_fraction: float
    pf_fraction: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "keep", check_mask_array(self.keep, "sampling mask"))

    @property
    def shape(self):
        return tuple(self.keep.shape)

    @property
    def achieved_acceleration(self) -> float:
        kept = float(self.keep.sum())
        if kept == 0:
            raise ConfigError("mask keeps no samples")
        return self.keep.numel() / kept

    def numpy(self) -> np.ndarray:
        return self.keep.numpy().astype(np.uint8)


def _acs_block(h: int, w: int, acs_fraction: float):
    acs_h = max(1, round(acs_fraction * h))
    acs_w = max(1, round(acs_fraction * w))
    r0 = h // 2 - acs_h // 2
    c0 = w // 2 - acs_w // 2
    return slice(r0, r0 + acs_h), slice(c0, c0 + acs_w)


def make_mask(
    h: int,
    w: int,
    accel: float,
    acs_fraction: float = 0.08,
    pf_fraction: float = 0.75,
    seed: int = 0,
) -> SamplingMask:
    """Build a seeded variable-density Cartesian mask.

    Parameters
    ----------
    h, w : int
        k-space grid size.
    accel : float
        Nominal acceleration; the mask keeps round(h*w/accel) samples.
    acs_fraction : float
        Side fraction of the fully sampled central block.
    pf_fraction : float
        Retained fraction along rows (frequency encode); rows at or beyond
        round(pf_fraction*h) are identically zero. 1.0 disables the cut.
    seed : int
        Generation seed; identical arguments and seed give identical masks.
    """
    if h < 1 or w < 1:
        raise ConfigError(f"mask size must be positive, got {h}x{w}")
    if accel < 1:
        raise ConfigError(f"acceleration must be >= 1, got {accel}")
    if not 0 < acs_fraction < 1:
        raise ConfigError(f"acs_fraction must be in (0, 1), got {acs_fraction}")
    if not 0.5 < pf_fraction <= 1:
        raise ConfigError(f"pf_fraction must be in (0.5, 1], got {pf_fraction}")

    n = h * w
    budget = int(round(n / accel))
    keep = np.zeros((h, w), dtype=np.float32)

    pf_rows = h if pf_fraction == 1.0 else int(round(pf_fraction * h))
    rs, cs = _acs_block(h, w, acs_fraction)
    if rs.stop > pf_rows:
        raise ConfigError(
            f"ACS block (rows {rs.start}:{rs.stop}) extends beyond the "
            f"partial-Fourier boundary at row {pf_rows}"
        )
    keep[rs, cs] = 1.0
    acs_count = int(keep.sum())
    if acs_count > budget:
        raise ConfigError(
            f"ACS block keeps {acs_count} samples but the acceleration budget is {budget}"
        )

    remaining = budget - acs_count
    rows, cols = np.mgrid[0:h, 0:w]
    allowed = (rows < pf_rows) & (keep == 0)
    candidates = np.flatnonzero(allowed)
    if remaining > candidates.size:
        raise ConfigError(
            f"budget {budget} exceeds the {candidates.size + acs_count} samples "
            f"available inside the partial-Fourier region"
        )

    if remaining > 0:
        # Gaussian variable density over normalized distance from DC.
        dr = (rows - h // 2) / (h / 2)
        dc = (cols - w // 2) / (w / 2)
        density = np.exp(-(dr**2 + dc**2) / (2 * DENSITY_SIGMA**2))
        weights = density.ravel()[candidates]
        weights = np.maximum(weights, 1e-12)
        rng = np.random.default_rng(seed)
        # Exponential-race weighted sampling without replacement: the k
        # smallest keys are a weighted draw of exactly k candidates.
        keys = rng.exponential(size=candidates.size) / weights
        chosen = candidates[np.argpartition(keys, remaining - 1)[:remaining]]
        keep.ravel()[chosen] = 1.0

    return SamplingMask(
        keep=torch.from_numpy(keep),
        accel=accel,
        acs_fraction=acs_fraction,
        pf_fraction=pf_fraction,
        seed=seed,
    )
