"""Volume bookkeeping for overlapping-slab acquisitions.

Covers slab splitting/assembly, per-slice k-space resizing, maximum
intensity projection, depth windowing for the volumetric refinement stage,
and reorientation between viewing planes. Volumes are real tensors shaped
[Z, H, W]; the axis convention is Z=axial, H rows=coronal index,
W cols=sagittal index.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .fourier import fft2c, ifft2c
from .validation import ConfigError, GeometryError, as_tensor, check_finite, check_odd

PLANE_AXES = {"axial": 0, "coronal": 1, "sagittal": 2}


@dataclass
class SlabVolume:
    """Stack of real-valued slices grouped into overlapping slabs.

    ``data`` is [S, D, H, W]; ``overlap`` is the number of slices shared by
    adjacent slabs in acquisition space; ``keep_center`` is the number of
    central slices each slab contributes to the assembled volume.
    """

    data: torch.Tensor
    overlap: int
    keep_center: int

    def __post_init__(self):
        self.data = as_tensor(self.data)
        if self.data.ndim != 4:
            raise GeometryError(f"slab data must be [S, D, H, W], got shape {tuple(self.data.shape)}")
        d = self.data.shape[1]
        if not 0 <= self.overlap < d:
            raise GeometryError(f"overlap must be in [0, {d}), got {self.overlap}")
        if not 1 <= self.keep_center <= d:
            raise GeometryError(f"keep_center must be in [1, {d}], got {self.keep_center}")
        if (d - self.keep_center) % 2 != 0:
            raise GeometryError(
                f"slab depth {d} minus keep_center {self.keep_center} must be even "
                "so the kept block is centered"
            )
        check_finite(self.data, "slab data")
        if (self.data < 0).any():
            raise GeometryError("slab data must be nonnegative (post-SSoS domain)")

    @property
    def n_slabs(self) -> int:
        return self.data.shape[0]

    @property
    def slab_depth(self) -> int:
        return self.data.shape[1]


def split_into_slabs(volume, n_slabs: int, slab_depth: int, overlap: int) -> SlabVolume:
    """Cut a [Z, H, W] volume into overlapping slabs along the leading axis.

    Slab i covers slices [i*stride, i*stride + slab_depth) with
    stride = slab_depth - overlap; the volume must span them exactly.
    keep_center is set to the stride so the assembled centers tile without
    duplication or gaps.
    """
    vol = as_tensor(volume)
    if vol.ndim != 3:
        raise GeometryError(f"volume must be [Z, H, W], got shape {tuple(vol.shape)}")
    stride = slab_depth - overlap
    if stride < 1:
        raise GeometryError(f"overlap {overlap} must be smaller than slab depth {slab_depth}")
    needed = (n_slabs - 1) * stride + slab_depth
    if vol.shape[0] != needed:
        raise GeometryError(
            f"{n_slabs} slabs of depth {slab_depth} with overlap {overlap} need "
            f"{needed} slices, volume has {vol.shape[0]}"
        )
    slabs = torch.stack([vol[i * stride : i * stride + slab_depth] for i in range(n_slabs)])
    return SlabVolume(data=slabs, overlap=overlap, keep_center=stride)


def assemble_volume(slabs: SlabVolume) -> torch.Tensor:
    """Concatenate the central keep_center slices of each slab, in slab order."""
    d = slabs.slab_depth
    lo = (d - slabs.keep_center) // 2
    return slabs.data[:, lo : lo + slabs.keep_center].reshape(
        slabs.n_slabs * slabs.keep_center, *slabs.data.shape[2:]
    )


def _pad_crop_center_1d(k: torch.Tensor, target: int, axis: int) -> torch.Tensor:
    """Center a k-space axis on a new grid, keeping real images real.

    When padding an even-length axis, the unpaired Nyquist bin is halved and
    mirrored into the newly available +N/2 slot so the spectrum stays
    Hermitian-symmetric; cropping folds the +N/2 slot back. This makes
    crop(pad(k)) exact and real-input interpolation real-valued.
    """
    size = k.shape[axis]
    if target == size:
        return k

    def sl(index_or_slice):
        s = [slice(None)] * k.ndim
        s[axis] = index_or_slice
        return tuple(s)

    if target > size:
        shape = list(k.shape)
        shape[axis] = target
        out = torch.zeros(shape, dtype=k.dtype, device=k.device)
        lo = target // 2 - size // 2
        out[sl(slice(lo, lo + size))] = k
        if size % 2 == 0:
            nyq = out[sl(lo)] / 2
            out[sl(lo)] = nyq
            out[sl(lo + size)] = nyq
        return out

    lo = size // 2 - target // 2
    out = k[sl(slice(lo, lo + target))].clone()
    if target % 2 == 0:
        out[sl(0)] = out[sl(0)] + k[sl(lo + target)]
    return out


def resize_zeropad_crop(volume, target_h: int, target_w: int) -> torch.Tensor:
    """Resize each slice through k-space zero padding / center cropping.

    The k-space grid is symmetrically padded or cropped about DC, scaled so
    image intensities are preserved, and transformed back; the magnitude is
    returned. Input [Z, H, W] (or a single [H, W] slice), real-valued.
    """
    if target_h < 1 or target_w < 1:
        raise ConfigError(f"resize targets must be >= 1, got {target_h}x{target_w}")
    vol = as_tensor(volume)
    single = vol.ndim == 2
    if single:
        vol = vol.unsqueeze(0)
    if vol.ndim != 3:
        raise GeometryError(f"volume must be [Z, H, W], got shape {tuple(vol.shape)}")
    h, w = vol.shape[-2:]
    k = fft2c(vol.to(torch.promote_types(vol.dtype, torch.float32)) + 0j)
    k = _pad_crop_center_1d(k, target_h, -2)
    k = _pad_crop_center_1d(k, target_w, -1)
    scale = (target_h * target_w / (h * w)) ** 0.5
    out = ifft2c(k).abs() * scale
    return out[0] if single else out


def mip(volume, axis: int = 0) -> torch.Tensor:
    """Maximum intensity projection: pointwise max along the given axis."""
    vol = as_tensor(volume)
    if not -vol.ndim <= axis < vol.ndim:
        raise GeometryError(f"axis {axis} out of range for shape {tuple(vol.shape)}")
    return vol.amax(dim=axis)


def depth_windows(volume, depth: int = 7, stride: int = 1) -> torch.Tensor:
    """Slice-centered depth windows with edge-replicated boundaries.

    Returns [N, depth, H, W] with one window centered on every stride-th
    slice; stride=1 yields one window per slice, so the center slices of the
    windows reproduce the volume exactly.
    """
    check_odd(depth, "depth")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    vol = as_tensor(volume)
    if vol.ndim != 3:
        raise GeometryError(f"volume must be [Z, H, W], got shape {tuple(vol.shape)}")
    half = depth // 2
    z = vol.shape[0]
    idx = torch.arange(-half, z + half).clamp(0, z - 1)
    padded = vol[idx]
    centers = range(0, z, stride)
    return torch.stack([padded[c : c + depth] for c in centers])


def depth_maxpool(window) -> torch.Tensor:
    """Pointwise max over the depth axis of a [..., depth, H, W] window.

    Identical to a maximum intensity projection of the window along depth.
    """
    w = as_tensor(window)
    if w.ndim < 3:
        raise GeometryError(f"window must be [..., depth, H, W], got shape {tuple(w.shape)}")
    return w.amax(dim=-3)


def center_slice(window) -> torch.Tensor:
    """Return the central slice of an odd-depth [..., depth, H, W] window."""
    w = as_tensor(window)
    if w.ndim < 3:
        raise GeometryError(f"window must be [..., depth, H, W], got shape {tuple(w.shape)}")
    depth = w.shape[-3]
    check_odd(depth, "window depth")
    return w.select(-3, depth // 2)


def reorient_volume(volume, plane: str) -> torch.Tensor:
    """Reorder a [Z, H, W] volume so the requested plane's slices lead.

    axial is the identity; coronal yields [H, Z, W]; sagittal yields
    [W, Z, H]. Inverse: :func:`restack_volume` with the same plane.
    """
    vol = as_tensor(volume)
    if vol.ndim != 3:
        raise GeometryError(f"volume must be [Z, H, W], got shape {tuple(vol.shape)}")
    if plane not in PLANE_AXES:
        raise ConfigError(f"plane must be one of {sorted(PLANE_AXES)}, got {plane!r}")
    if plane == "axial":
        return vol
    if plane == "coronal":
        return vol.permute(1, 0, 2)
    return vol.permute(2, 0, 1)


def restack_volume(slices, plane: str) -> torch.Tensor:
    """Inverse of :func:`reorient_volume`."""
    vol = as_tensor(slices)
    if vol.ndim != 3:
        raise GeometryError(f"stack must be 3-D, got shape {tuple(vol.shape)}")
    if plane not in PLANE_AXES:
        raise ConfigError(f"plane must be one of {sorted(PLANE_AXES)}, got {plane!r}")
    if plane == "axial":
        return vol
    if plane == "coronal":
        return vol.permute(1, 0, 2)
    return vol.permute(1, 2, 0)
