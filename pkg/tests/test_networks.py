import numpy as np
import pytest
import torch
import torch.nn as nn

from tofrecon import (
    DiscriminatorConfig,
    GeneratorConfig,
    ProjectionDiscriminatorConfig,
    build_patchgan,
    build_stage1_generator,
    build_stage2_generator_f,
    build_stage2_generator_g,
    projection_score,
    spectral_audit,
)
from tofrecon.networks import (
    GatedUNet,
    apply_to_complex,
    channels_to_complex,
    complex_to_channels,
    count_parameters,
    top_singular_value,
)
from tofrecon.validation import ConfigError


class TestChannelPacking:
    def test_round_trip(self, rng):
        x = torch.from_numpy(
            rng.standard_normal((2, 3, 8, 8)) + 1j * rng.standard_normal((2, 3, 8, 8))
        )
        packed = complex_to_channels(x)
        assert packed.shape == (2, 6, 8, 8)
        assert torch.equal(channels_to_complex(packed), x)

    def test_identity_network_passthrough(self, rng):
        x = torch.from_numpy(
            rng.standard_normal((1, 2, 4, 4)) + 1j * rng.standard_normal((1, 2, 4, 4))
        )
        assert torch.equal(apply_to_complex(lambda t: t, x), x)


class TestStage1Generator:
    def test_paper_scale_channel_count(self):
        # 30 coils -> 60 stacked real/imag channels in and out.
        cfg = GeneratorConfig(in_channels=60, out_channels=60, stages=4,
                              base_channels=64, attention="full_unet")
        net = cfg.build()
        assert net.body.final.out_channels == 60
        assert net.body.enc[0][0].in_channels == 60

    def test_desk_scale_channel_rule(self):
        net = build_stage1_generator(4, base_channels=8, stages=4)
        x = torch.randn(1, 8, 64, 64)
        assert net(x).shape == (1, 8, 64, 64)

    def test_shape_preserving_on_64(self):
        net = build_stage1_generator(2, base_channels=8, stages=4)
        x = torch.randn(2, 4, 64, 64)
        assert net(x).shape == x.shape

    def test_channel_doubling_reaches_16x_base(self):
        net = build_stage1_generator(1, base_channels=8, stages=4)
        assert net.body.bottleneck[0].out_channels == 8 * 16

    def test_zeroed_attention_reduces_to_identity(self):
        torch.manual_seed(0)
        net = build_stage1_generator(2, base_channels=8, stages=2)
        x = torch.randn(1, 4, 16, 16)
        assert not torch.allclose(net(x), x)
        for p in net.attention.parameters():
            nn.init.zeros_(p)
        assert torch.allclose(net(x), x)


class TestStage2Generators:
    def test_depth_channel_rule(self):
        for depth in (1, 7):
            g = build_stage2_generator_g(depth, base_channels=8)
            x = torch.randn(1, depth, 32, 32)
            assert g(x).shape == x.shape

    def test_g_smaller_than_stage1(self):
        stage1 = build_stage1_generator(4)  # paper defaults: base 64, 4 stages
        g = build_stage2_generator_g(7)  # base 32, 3 stages
        assert count_parameters(g) < count_parameters(stage1)

    def test_f_much_smaller_than_g(self):
        g = build_stage2_generator_g(7)
        f = build_stage2_generator_f(7)
        assert count_parameters(f) < 0.1 * count_parameters(g)

    def test_f_shape_preserving(self):
        f = build_stage2_generator_f(7)
        x = torch.randn(2, 7, 16, 16)
        assert f(x).shape == x.shape

    def test_even_depth_rejected(self):
        with pytest.raises(ConfigError):
            build_stage2_generator_g(4)

    def test_attention_requires_matching_channels(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(in_channels=4, out_channels=2, attention="conv1x1")


class TestPatchgan:
    def test_patch_map_shape_64(self):
        disc = build_patchgan(1)
        out = disc(torch.randn(2, 1, 64, 64))
        assert out.shape == (2, 1, 8, 8)

    def test_spectral_audit_fresh(self):
        disc = build_patchgan(1, base_channels=16)
        report = spectral_audit(disc)
        assert len(report) == 4  # 3 stages + final projection
        assert all(sigma <= 1.0 + 1e-2 for sigma in report.values())

    def test_rescaled_weight_renormalizes(self):
        disc = build_patchgan(1, base_channels=16)
        # Scale the underlying (original) weight of the first conv by 10.
        conv = disc.model[0]
        with torch.no_grad():
            conv.parametrizations.weight.original.mul_(10.0)
        disc.train()
        with torch.no_grad():
            for _ in range(20):
                _ = conv.weight
        report = spectral_audit(disc)
        assert all(sigma <= 1.0 + 1e-2 for sigma in report.values())

    def test_unit_conv_singular_value(self):
        w = torch.zeros(1, 1, 1, 1)
        w[0, 0, 0, 0] = 1.0
        assert abs(top_singular_value(w) - 1.0) < 1e-10


class TestProjectionDiscriminator:
    def _window(self, rng, depth=5):
        return torch.from_numpy(rng.random((2, depth, 32, 32))).float()

    def test_lam2_zero_reduces_to_volume_head(self, rng):
        torch.manual_seed(1)
        proj = ProjectionDiscriminatorConfig(depth=5, base_channels=8).build()
        w = self._window(rng)
        body_only = projection_score(proj.volume_head, proj.mip_head, w, proj.lam1, 0.0)
        expected = proj.lam1 * proj.volume_head(w).mean()
        assert torch.allclose(body_only, expected)

    def test_lam1_zero_depends_only_on_depth_max(self, rng):
        torch.manual_seed(1)
        proj = ProjectionDiscriminatorConfig(depth=5, base_channels=8).build()
        proj.eval()
        w = self._window(rng)
        # Shuffling slices changes the volume but not the depth-wise max.
        shuffled = w[:, torch.randperm(5)]
        a = projection_score(proj.volume_head, proj.mip_head, w, 0.0, proj.lam2)
        b = projection_score(proj.volume_head, proj.mip_head, shuffled, 0.0, proj.lam2)
        assert torch.allclose(a, b)

    def test_default_weights(self):
        proj = ProjectionDiscriminatorConfig(depth=7, base_channels=8).build()
        assert proj.lam1 == 5.0 and proj.lam2 == 3.0

    def test_forward_matches_functional(self, rng):
        torch.manual_seed(2)
        proj = ProjectionDiscriminatorConfig(depth=5, base_channels=8).build()
        proj.eval()
        w = self._window(rng)
        assert torch.allclose(
            proj(w),
            projection_score(proj.volume_head, proj.mip_head, w, proj.lam1, proj.lam2),
        )

    def test_head_can_be_disabled(self, rng):
        proj = ProjectionDiscriminatorConfig(depth=1, use_mip_head=False).build()
        assert proj.mip_head is None
        w = torch.from_numpy(rng.random((1, 1, 32, 32))).float()
        assert torch.isfinite(proj(w))


class TestSpectralAuditAfterTraining:
    def test_bound_holds_after_100_steps(self, rng):
        torch.manual_seed(3)
        disc = build_patchgan(1, base_channels=16)
        opt = torch.optim.SGD(disc.parameters(), lr=1e-3)
        real = torch.from_numpy(rng.random((4, 1, 32, 32))).float()
        fake = torch.from_numpy(rng.random((4, 1, 32, 32))).float()
        for _ in range(100):
            opt.zero_grad()
            loss = disc(fake).mean() - disc(real).mean()
            loss.backward()
            opt.step()
        report = spectral_audit(disc)
        assert all(sigma <= 1.0 + 1e-2 for sigma in report.values())
