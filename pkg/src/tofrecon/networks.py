"""Network zoo: configurable U-Net generators, spectrally normalized
patch discriminators, and the double-headed projection discriminator.

All networks are built from declarative config dataclasses so checkpoints
can store the exact construction recipe next to the weights. Complex coil
stacks enter the slice generator as stacked real/imaginary channels (2C
real channels for C coils); no complex-valued layers are used.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as nnf
from torch.nn.utils.parametrizations import spectral_norm

from .geometry import depth_maxpool
from .validation import ConfigError, check_odd

ATTENTION_KINDS = ("full_unet", "conv1x1", "none")


def _norm_groups(channels: int, groups: int) -> int:
    g = min(groups, channels)
    while channels % g:
        g -= 1
    return g


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """[..., C, H, W] complex -> [..., 2C, H, W] real (real block, imag block)."""
    return torch.cat([x.real, x.imag], dim=-3)


def channels_to_complex(x: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`complex_to_channels`."""
    real, imag = x.chunk(2, dim=-3)
    return torch.complex(real, imag)


def apply_to_complex(net, x: torch.Tensor) -> torch.Tensor:
    """Run a real-channel network on a complex coil stack."""
    return channels_to_complex(net(complex_to_channels(x)))


class _DoubleConv(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, groups: int):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.GroupNorm(_norm_groups(out_ch, groups), out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.GroupNorm(_norm_groups(out_ch, groups), out_ch),
            nn.ReLU(inplace=True),
        )


class UNet(nn.Module):
    """Encoder/decoder with skip connections.

    Downsampling is a stride-2 3x3 convolution, upsampling is bilinear
    interpolation followed by a channel-reducing convolution. Channel width
    doubles per stage from ``base_channels``. Spatial dims must be divisible
    by 2**stages.
    """

    def __init__(self, in_channels: int, out_channels: int, stages: int = 4,
                 base_channels: int = 64, groups: int = 8):
        super().__init__()
        widths = [base_channels * 2**i for i in range(stages + 1)]
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        ch = in_channels
        for width in widths[:-1]:
            self.enc.append(_DoubleConv(ch, width, groups))
            self.down.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
            ch = width
        self.bottleneck = _DoubleConv(widths[-2], widths[-1], groups)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        ch = widths[-1]
        for width in reversed(widths[:-1]):
            self.up.append(nn.Conv2d(ch, width, 3, padding=1))
            self.dec.append(_DoubleConv(2 * width, width, groups))
            ch = width
        self.final = nn.Conv2d(base_channels, out_channels, 1)

    def forward(self, x):
        skips = []
        for enc, down in zip(self.enc, self.down):
            x = enc(x)
            skips.append(x)
            x = down(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = nnf.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        return self.final(x)


class GatedUNet(nn.Module):
    """Residual U-Net with an adaptive attention gate.

    output = input + tanh(A(input)) * U(input), where U is the body U-Net
    and A the attention module (an identically shaped U-Net or a single 1x1
    convolution). Zeroing A's weights collapses the gate to zero and reduces
    the network to the identity.
    """

    def __init__(self, body: UNet, attention: nn.Module):
        super().__init__()
        self.body = body
        self.attention = attention

    def forward(self, x):
        return x + torch.tanh(self.attention(x)) * self.body(x)


@dataclass
class GeneratorConfig:
    """Recipe for a slice/window generator."""

    in_channels: int
    out_channels: int
    stages: int = 4
    base_channels: int = 64
    attention: str = "none"
    groupnorm_groups: int = 8

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigError(f"generator stages must be >= 1, got {self.stages}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("generator channel counts must be positive")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if self.attention != "none" and self.in_channels != self.out_channels:
            raise ConfigError("attention-gated generators require in_channels == out_channels")

    def build(self) -> nn.Module:
        body = UNet(self.in_channels, self.out_channels, self.stages,
                    self.base_channels, self.groupnorm_groups)
        if self.attention == "none":
            return body
        if self.attention == "full_unet":
            gate = UNet(self.in_channels, self.out_channels, self.stages,
                        self.base_channels, self.groupnorm_groups)
        else:
            gate = nn.Conv2d(self.in_channels, self.out_channels, 1)
        return GatedUNet(body, gate)


class PatchDiscriminator(nn.Module):
    """PatchGAN critic: stride-2 4x4 conv stages ending in a 1-channel
    patch-score map, spectrally normalized per layer."""

    def __init__(self, in_channels: int, stages: int = 3, base_channels: int = 64,
                 kernel: int = 4, leaky_slope: float = 0.2, use_spectral_norm: bool = True):
        super().__init__()
        wrap = spectral_norm if use_spectral_norm else (lambda m: m)
        layers = []
        ch = in_channels
        for i in range(stages):
            width = base_channels * 2**i
            layers += [
                wrap(nn.Conv2d(ch, width, kernel, stride=2, padding=1)),
                nn.InstanceNorm2d(width),
                nn.LeakyReLU(leaky_slope, inplace=True),
            ]
            ch = width
        # 3x3 stride-1 projection keeps the patch-map size of the last stage.
        layers.append(wrap(nn.Conv2d(ch, 1, 3, padding=1)))
        self.model = nn.Sequential(*layers)
        if use_spectral_norm:
            converge_spectral_norm(self, passes=30)

    def forward(self, x):
        return self.model(x)


@dataclass
class DiscriminatorConfig:
    """Recipe for a patch critic."""

    in_channels: int
    stages: int = 3
    base_channels: int = 64
    kernel: int = 4
    leaky_slope: float = 0.2
    spectral_norm: bool = True

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigError(f"discriminator stages must be >= 1, got {self.stages}")
        if self.in_channels < 1:
            raise ConfigError("discriminator in_channels must be positive")

    def build(self) -> PatchDiscriminator:
        return PatchDiscriminator(self.in_channels, self.stages, self.base_channels,
                                  self.kernel, self.leaky_slope, self.spectral_norm)


class ProjectionDiscriminator(nn.Module):
    """Double-headed critic over depth windows.

    The volume head scores the window with depth as channels; the projection
    head scores the depth-wise max-pooled image. The combined score is
    lam1 * mean(volume head) + lam2 * mean(projection head).
    """

    def __init__(self, volume_head: PatchDiscriminator,
                 mip_head: PatchDiscriminator | None, lam1: float, lam2: float):
        super().__init__()
        self.volume_head = volume_head
        self.mip_head = mip_head
        self.lam1 = lam1
        self.lam2 = lam2

    def forward(self, window):
        return projection_score(self.volume_head, self.mip_head, window, self.lam1, self.lam2)


@dataclass
class ProjectionDiscriminatorConfig:
    depth: int
    lam1: float = 5.0
    lam2: float = 3.0
    base_channels: int = 64
    use_mip_head: bool = True

    def __post_init__(self):
        if self.lam1 <= 0 or self.lam2 <= 0:
            raise ConfigError("projection discriminator weights must be positive")

    def build(self) -> ProjectionDiscriminator:
        body = DiscriminatorConfig(in_channels=self.depth, base_channels=self.base_channels).build()
        head = None
        if self.use_mip_head:
            head = DiscriminatorConfig(in_channels=1, base_channels=self.base_channels).build()
        return ProjectionDiscriminator(body, head, self.lam1, self.lam2)


def projection_score(phi1, phi2_max, window, lam1: float, lam2: float) -> torch.Tensor:
    """Combined projection-discriminator score of a [B, depth, H, W] window."""
    if window.ndim != 4:
        raise ConfigError(f"window must be [B, depth, H, W], got shape {tuple(window.shape)}")
    score = lam1 * phi1(window).mean()
    if phi2_max is not None and lam2 != 0:
        pooled = depth_maxpool(window).unsqueeze(1)
        score = score + lam2 * phi2_max(pooled).mean()
    return score


def build_stage1_generator(coils: int, base_channels: int = 64, stages: int = 4,
                           attention: str = "full_unet") -> nn.Module:
    """Slice generator over stacked real/imag coil channels (2C in/out)."""
    if coils < 1:
        raise ConfigError(f"coil count must be >= 1, got {coils}")
    return GeneratorConfig(in_channels=2 * coils, out_channels=2 * coils, stages=stages,
                           base_channels=base_channels, attention=attention).build()


def build_stage2_generator_g(depth: int, base_channels: int = 32, stages: int = 3) -> nn.Module:
    """Window refiner: depth slices as channels, 1x1-conv attention gate."""
    check_odd(depth, "depth")
    return GeneratorConfig(in_channels=depth, out_channels=depth, stages=stages,
                           base_channels=base_channels, attention="conv1x1").build()


def build_stage2_generator_f(depth: int, base_channels: int = 8, stages: int = 2) -> nn.Module:
    """Deliberately small reverse mapping for the window-domain cycle."""
    check_odd(depth, "depth")
    return GeneratorConfig(in_channels=depth, out_channels=depth, stages=stages,
                           base_channels=base_channels, attention="none").build()


def build_patchgan(in_channels: int, base_channels: int = 64, stages: int = 3) -> PatchDiscriminator:
    return DiscriminatorConfig(in_channels=in_channels, stages=stages,
                               base_channels=base_channels).build()


def _spectral_weight_modules(network: nn.Module):
    for name, module in network.named_modules():
        parametrizations = getattr(module, "parametrizations", None)
        if parametrizations is not None and "weight" in parametrizations:
            yield name, module


def converge_spectral_norm(network: nn.Module, passes: int = 30) -> None:
    """Run extra power-iteration passes so normalization is tight at build time."""
    was_training = network.training
    network.train()
    with torch.no_grad():
        for _ in range(passes):
            for _, module in _spectral_weight_modules(network):
                _ = module.weight
    network.train(was_training)


def top_singular_value(weight: torch.Tensor, iterations: int = 50) -> float:
    """Power-iteration estimate of a layer weight's top singular value.

    Convolution kernels are flattened to [out, in*kh*kw], matching the
    matrix the normalization acts on. Runs in double precision from a
    deterministic start vector.
    """
    mat = weight.detach().double().reshape(weight.shape[0], -1)
    gen = torch.Generator().manual_seed(0)
    v = torch.randn(mat.shape[1], generator=gen, dtype=torch.float64)
    v /= v.norm()
    for _ in range(iterations):
        u = mat @ v
        u /= u.norm().clamp_min(1e-30)
        v = mat.t() @ u
        v /= v.norm().clamp_min(1e-30)
    return float((mat @ v).norm())


def spectral_audit(network: nn.Module, iterations: int = 50) -> dict[str, float]:
    """Per-layer top singular values of the effective (normalized) weights."""
    report = {}
    was_training = network.training
    network.eval()
    with torch.no_grad():
        for name, module in _spectral_weight_modules(network):
            report[name] = top_singular_value(module.weight, iterations)
    network.train(was_training)
    if not report:
        raise ConfigError("network has no spectrally normalized layers to audit")
    return report
