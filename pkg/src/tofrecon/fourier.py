"""Multi-coil MR physics operators.

Centered orthonormal 2-D Fourier transforms, the image-domain undersampling
forward operator, k-space fidelity, and square-root sum-of-squares (SSoS)
coil combination. All functions operate on the trailing two spatial axes,
accept arbitrary leading (batch / coil) axes, and are differentiable.

Conventions: DC sits at the array center (H//2, W//2); transforms are
orthonormal in both directions, which makes the forward operator an
orthogonal projection (idempotent and self-adjoint).
"""

from __future__ import annotations

import torch

from .validation import (
    DataError,
    as_tensor,
    check_coil_stack,
    check_finite,
    check_spatial_match,
    check_same_shape,
)

_SPATIAL = (-2, -1)


def _mask_tensor(mask) -> torch.Tensor:
    # Accept SamplingMask or a raw [H, W] array.
    keep = getattr(mask, "keep", mask)
    return as_tensor(keep)


def _spatial_input(x, name: str) -> torch.Tensor:
    t = as_tensor(x)
    if t.ndim < 2:
        raise DataError(f"{name} must have at least 2 dims [H, W], got shape {tuple(t.shape)}")
    return check_finite(t, name)


def fft2c(x) -> torch.Tensor:
    """Centered orthonormal 2-D FFT over the trailing two axes."""
    x = _spatial_input(x, "fft2c input")
    return torch.fft.fftshift(
        torch.fft.fft2(torch.fft.ifftshift(x, dim=_SPATIAL), norm="ortho"),
        dim=_SPATIAL,
    )


def ifft2c(k) -> torch.Tensor:
    """Centered orthonormal 2-D inverse FFT; exact inverse of :func:`fft2c`."""
    k = _spatial_input(k, "ifft2c input")
    return torch.fft.fftshift(
        torch.fft.ifft2(torch.fft.ifftshift(k, dim=_SPATIAL), norm="ortho"),
        dim=_SPATIAL,
    )


def forward_operator(x, mask) -> torch.Tensor:
    """Image-domain undersampling operator: inverse FFT of the masked k-space.

    Linear, idempotent and self-adjoint (an orthogonal projection) because the
    transforms are orthonormal and the mask is a 0/1 diagonal in k-space.
    """
    x = check_coil_stack(x, "forward operator input")
    keep = _mask_tensor(mask)
    check_spatial_match(x, keep, "forward operator input")
    if bool((keep == 1).all()):
        # Full mask: the projection is the identity; skipping the transform
        # pair keeps it exact instead of round-tripping through the FFT.
        return x
    return ifft2c(keep.to(x.real.dtype) * fft2c(x))


def ssos(x, coil_axis: int = -3) -> torch.Tensor:
    """Square-root sum-of-squares coil combination; real and nonnegative."""
    x = check_coil_stack(x, "ssos input")
    return (x.real.square() + x.imag.square()).sum(dim=coil_axis).sqrt()


def kspace_residual(x_ref, x_rec, mask) -> torch.Tensor:
    """Squared Frobenius norm of the masked k-space difference, summed over coils.

    Leading batch axes (beyond [C, H, W]) are preserved; a plain coil stack
    yields a 0-dim tensor.
    """
    x_ref = check_coil_stack(x_ref, "k-space residual reference")
    x_rec = check_coil_stack(x_rec, "k-space residual reconstruction")
    check_same_shape(x_ref, x_rec, ("reference", "reconstruction"))
    keep = _mask_tensor(mask)
    check_spatial_match(x_ref, keep, "k-space residual input")
    diff = keep.to(x_ref.real.dtype) * (fft2c(x_ref) - fft2c(x_rec))
    return (diff.real.square() + diff.imag.square()).sum(dim=(-3, -2, -1))
