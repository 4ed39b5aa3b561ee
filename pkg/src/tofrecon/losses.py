"""Training objectives for both reconstruction stages.

Stage I couples a known undersampling forward operator with a single
generator: cycle consistency and the adversarial term are measured in the
coil-combined (SSoS) image domain, plus an identity regularizer and a
squared-Frobenius k-space fidelity term. Stage II is a symmetric two-
generator objective over depth windows whose real/fake critic on the target
domain is the double-headed projection discriminator.

Reported totals always equal the documented weighted sums of their
components; expectations over the two unpaired domains are realized as
minibatch means. Image-domain norms are mean-absolute; k-space fidelity is
a squared Frobenius norm.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .fourier import forward_operator, kspace_residual, ssos
from .networks import apply_to_complex, projection_score
from .validation import (
    ConfigError,
    DataError,
    GeometryError,
    check_coil_stack,
    check_same_shape,
)


@dataclass
class Stage1Weights:
    """Hyper-parameters of the stage-I composite objective."""

    cycle: float = 100.0
    identity: float = 0.5
    freq: float = 1.0

    def __post_init__(self):
        if min(self.cycle, self.identity, self.freq) < 0:
            raise ConfigError("stage-I loss weights must be nonnegative")


@dataclass
class LossReport:
    """Per-term breakdown of one optimization step.

    Fields may hold 0-dim tensors during training (so totals stay
    differentiable) or plain floats after :meth:`detached`.
    """

    cycle: object = 0.0
    disc_g: object = 0.0
    disc_d: object = 0.0
    identity: object = 0.0
    freq: object = 0.0
    total_g: object = 0.0
    total_d: object = 0.0
    step: int = 0

    def detached(self) -> "LossReport":
        def to_float(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)

        return LossReport(
            cycle=to_float(self.cycle), disc_g=to_float(self.disc_g),
            disc_d=to_float(self.disc_d), identity=to_float(self.identity),
            freq=to_float(self.freq), total_g=to_float(self.total_g),
            total_d=to_float(self.total_d), step=self.step,
        )

    def to_dict(self) -> dict:
        d = self.detached()
        return {
            "step": d.step, "cycle": d.cycle, "disc_g": d.disc_g, "disc_d": d.disc_d,
            "identity": d.identity, "freq": d.freq, "total_g": d.total_g, "total_d": d.total_d,
        }


def _mean_abs(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().mean()


def _critic_mean(critic, images: torch.Tensor) -> torch.Tensor:
    # Critics consume [B, 1, H, W] single-channel image batches.
    return critic(images.unsqueeze(1)).mean()


def stage1_generator_loss(g, critic, x_batch, y_batch, mask, weights: Stage1Weights,
                          step: int = 0) -> LossReport:
    """Composite stage-I generator objective on unpaired batches.

    ``x_batch`` are fully sampled coil stacks [B, C, H, W], ``y_batch`` are
    undersampled (zero-filled) coil stacks; ``g`` maps stacked real/imag
    channel tensors to same-shaped tensors; ``critic`` scores SSoS images.
    """
    x = check_coil_stack(x_batch, "x batch")
    y = check_coil_stack(y_batch, "y batch")
    if x.shape[-3:] != y.shape[-3:]:
        raise GeometryError(
            f"x slices {tuple(x.shape[-3:])} and y slices {tuple(y.shape[-3:])} disagree"
        )

    g_y = apply_to_complex(g, y)
    f_x = forward_operator(x, mask)
    g_f_x = apply_to_complex(g, f_x)
    g_x = apply_to_complex(g, x)

    cycle = _mean_abs(ssos(y), ssos(forward_operator(g_y, mask))) + _mean_abs(ssos(x), ssos(g_f_x))
    adv = -_critic_mean(critic, ssos(g_y))
    identity = _mean_abs(ssos(x), ssos(g_x))
    freq = kspace_residual(x, g_f_x, mask).mean()
    total_g = weights.cycle * cycle + adv + weights.identity * identity + weights.freq * freq
    return LossReport(cycle=cycle, disc_g=adv, identity=identity, freq=freq,
                      total_g=total_g, step=step)


def stage1_discriminator_loss(critic, x_batch, fake_ssos) -> torch.Tensor:
    """Negated critic objective: mean(critic(fake)) - mean(critic(ssos(x))).

    The critic ascends the difference of means; this returns the quantity to
    *minimize*. ``fake_ssos`` is a detached [B, H, W] batch of generated
    SSoS images.
    """
    x = check_coil_stack(x_batch, "x batch")
    real = ssos(x)
    fake = torch.as_tensor(fake_ssos) if not torch.is_tensor(fake_ssos) else fake_ssos
    if real.shape[-2:] != fake.shape[-2:]:
        raise GeometryError(
            f"real images {tuple(real.shape[-2:])} and fakes {tuple(fake.shape[-2:])} disagree"
        )
    return _critic_mean(critic, fake) - _critic_mean(critic, real)


def stage2_losses(g, f, phi1, phi2_max, psi, x_windows, y_windows,
                  cycle_weight: float = 10.0, lam1: float = 5.0, lam2: float = 3.0,
                  step: int = 0) -> LossReport:
    """Symmetric two-generator objective over depth windows.

    ``x_windows`` come from the clean volume domain, ``y_windows`` from the
    stage-I reconstruction domain, both [B, depth, H, W]. ``phi1``/
    ``phi2_max`` are the projection critic's volume and max-pool heads
    (``phi2_max`` may be None when the projection head is disabled);
    ``psi`` is the critic on the measurement-domain windows.

    Returns a report carrying both the generator total (cycle + adversarial)
    and the discriminator total (negated difference of critic means).
    """
    x = torch.as_tensor(x_windows) if not torch.is_tensor(x_windows) else x_windows
    y = torch.as_tensor(y_windows) if not torch.is_tensor(y_windows) else y_windows
    if x.ndim != 4 or y.ndim != 4:
        raise GeometryError("windows must be [B, depth, H, W]")
    if x.shape[1] != y.shape[1]:
        raise GeometryError(f"window depths disagree: {x.shape[1]} vs {y.shape[1]}")

    g_y = g(y)
    f_x = f(x)
    cycle = _mean_abs(x, g(f_x)) + _mean_abs(y, f(g_y))

    adv_g = -projection_score(phi1, phi2_max, g_y, lam1, lam2) - psi(f_x).mean()

    disc_gap = projection_score(phi1, phi2_max, x, lam1, lam2) \
        - projection_score(phi1, phi2_max, g_y.detach(), lam1, lam2) \
        + psi(y).mean() - psi(f_x.detach()).mean()

    total_g = cycle_weight * cycle + adv_g
    total_d = -disc_gap
    return LossReport(cycle=cycle, disc_g=adv_g, disc_d=total_d,
                      total_g=total_g, total_d=total_d, step=step)


def gradient_check(loss_fn, params, eps: float = 1e-4, num_coords: int = 32,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` is a zero-argument callable returning a scalar loss built
    from ``params`` (a sequence of leaf tensors with requires_grad). At
    least ``num_coords`` coordinates are sampled across all parameters;
    run in double precision for meaningful tolerances.
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    params = list(params)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise DataError("loss is non-finite at the evaluation point")
    grads = torch.autograd.grad(loss, params)

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = torch.Generator().manual_seed(seed)
    n = min(max(num_coords, 32), total)
    coords = torch.randperm(total, generator=rng)[:n]

    worst = 0.0
    with torch.no_grad():
        for flat_index in coords.tolist():
            pi = 0
            while flat_index >= sizes[pi]:
                flat_index -= sizes[pi]
                pi += 1
            p = params[pi].reshape(-1)
            orig = p[flat_index].item()
            p[flat_index] = orig + eps
            with torch.enable_grad():
                hi = float(loss_fn())
            p[flat_index] = orig - eps
            with torch.enable_grad():
                lo = float(loss_fn())
            p[flat_index] = orig
            numeric = (hi - lo) / (2 * eps)
            analytic = float(grads[pi].reshape(-1)[flat_index])
            # Absolute floor keeps near-zero gradient pairs from blowing up
            # the relative error through finite-difference roundoff.
            denom = max(abs(numeric) + abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
