import numpy as np
import pytest
import torch

from tofrecon import fft2c, forward_operator, ifft2c, kspace_residual, make_mask, ssos
from tofrecon.validation import DataError, GeometryError

from conftest import dft2c_oracle, idft2c_oracle, random_coil_stack


class TestFFT:
    def test_center_impulse_gives_constant_plane(self):
        x = torch.zeros(1, 4, 4, dtype=torch.complex128)
        x[0, 2, 2] = 1.0
        k = fft2c(x)
        assert torch.allclose(k, torch.full_like(k, 0.25), atol=1e-12)

    def test_parseval(self, rng):
        x = random_coil_stack(rng, 3, 8, 8)
        assert abs(fft2c(x).norm().item() - x.norm().item()) < 1e-10

    def test_matches_dft_matrix_oracle(self, rng):
        for _ in range(5):
            x = random_coil_stack(rng, 1, 4, 4)
            expected = dft2c_oracle(x.numpy())
            assert np.max(np.abs(fft2c(x).numpy() - expected)) < 1e-10

    def test_inverse_matches_oracle(self, rng):
        for _ in range(5):
            k = random_coil_stack(rng, 1, 4, 4)
            expected = idft2c_oracle(k.numpy())
            assert np.max(np.abs(ifft2c(k).numpy() - expected)) < 1e-10

    def test_round_trip(self, rng):
        x = random_coil_stack(rng, 2, 16, 16)
        back = ifft2c(fft2c(x))
        assert (back - x).norm().item() / x.norm().item() < 1e-6

    def test_zero_kspace_gives_zero_image(self):
        k = torch.zeros(2, 8, 8, dtype=torch.complex128)
        assert ifft2c(k).abs().max().item() == 0.0

    def test_rejects_non_finite(self):
        x = torch.ones(1, 4, 4, dtype=torch.complex128)
        x[0, 0, 0] = float("nan")
        with pytest.raises(DataError):
            fft2c(x)
        with pytest.raises(DataError):
            ifft2c(x)


class TestForwardOperator:
    def test_all_ones_mask_is_identity(self, rng):
        x = random_coil_stack(rng, 2, 8, 8)
        mask = make_mask(8, 8, accel=1, pf_fraction=1.0)
        assert (forward_operator(x, mask) - x).abs().max().item() < 1e-12

    def test_idempotent(self, rng):
        mask = make_mask(16, 16, accel=4, pf_fraction=1.0, seed=3)
        for _ in range(10):
            x = random_coil_stack(rng, 2, 16, 16)
            once = forward_operator(x, mask)
            twice = forward_operator(once, mask)
            assert (twice - once).norm().item() / once.norm().item() < 1e-6

    def test_linear(self, rng):
        mask = make_mask(16, 16, accel=4, pf_fraction=1.0, seed=3)
        for _ in range(10):
            x = random_coil_stack(rng, 2, 16, 16)
            y = random_coil_stack(rng, 2, 16, 16)
            a, b = rng.standard_normal(2)
            lhs = forward_operator(a * x + b * y, mask)
            rhs = a * forward_operator(x, mask) + b * forward_operator(y, mask)
            assert (lhs - rhs).norm().item() / rhs.norm().item() < 1e-6

    def test_self_adjoint(self, rng):
        mask = make_mask(16, 16, accel=4, pf_fraction=1.0, seed=3)
        for _ in range(10):
            x = random_coil_stack(rng, 2, 16, 16)
            y = random_coil_stack(rng, 2, 16, 16)
            lhs = (forward_operator(x, mask).conj() * y).sum()
            rhs = (x.conj() * forward_operator(y, mask)).sum()
            assert abs(lhs - rhs).item() / abs(rhs).item() < 1e-6

    def test_shape_mismatch_rejected(self, rng):
        x = random_coil_stack(rng, 2, 8, 8)
        mask = make_mask(16, 16, accel=4, pf_fraction=1.0)
        with pytest.raises(GeometryError):
            forward_operator(x, mask)


class TestSsos:
    def test_single_coil_is_magnitude(self, rng):
        x = random_coil_stack(rng, 1, 8, 8)
        assert torch.allclose(ssos(x), x[0].abs(), atol=1e-12)

    def test_pythagorean_two_coils(self):
        x = torch.zeros(2, 3, 3, dtype=torch.complex128)
        x[0] = 3.0
        x[1] = 4.0j
        assert torch.allclose(ssos(x), torch.full((3, 3), 5.0, dtype=torch.float64))

    def test_coil_permutation_invariant(self, rng):
        x = random_coil_stack(rng, 4, 8, 8)
        perm = torch.from_numpy(rng.permutation(4))
        assert torch.allclose(ssos(x), ssos(x[perm]), atol=1e-12)

    def test_zero_iff_zero(self, rng):
        x = torch.zeros(3, 4, 4, dtype=torch.complex128)
        assert ssos(x).abs().max().item() == 0.0
        x[1, 2, 2] = 1e-3
        assert ssos(x).max().item() > 0

    def test_one_lipschitz_pointwise(self, rng):
        for _ in range(1000):
            x = random_coil_stack(rng, 3, 2, 2)
            y = random_coil_stack(rng, 3, 2, 2)
            gap = (ssos(x) - ssos(y)).abs()
            dist = (x - y).abs().square().sum(dim=0).sqrt()
            assert (gap <= dist + 1e-12).all()


class TestKspaceResidual:
    def test_zero_for_identical(self, rng):
        x = random_coil_stack(rng, 2, 8, 8)
        mask = make_mask(8, 8, accel=2, pf_fraction=1.0)
        assert kspace_residual(x, x.clone(), mask).item() == 0.0

    def test_zero_mask_gives_zero(self, rng):
        x = random_coil_stack(rng, 2, 8, 8)
        y = random_coil_stack(rng, 2, 8, 8)
        zero = torch.zeros(8, 8)
        assert kspace_residual(x, y, zero).item() == 0.0

    def test_full_mask_matches_dft_oracle(self, rng):
        x = random_coil_stack(rng, 2, 4, 4)
        y = random_coil_stack(rng, 2, 4, 4)
        got = kspace_residual(x, y, torch.ones(4, 4)).item()
        diff = dft2c_oracle(x.numpy()) - dft2c_oracle(y.numpy())
        expected = float(np.sum(np.abs(diff) ** 2))
        assert abs(got - expected) < 1e-8

    def test_shape_mismatch_rejected(self, rng):
        x = random_coil_stack(rng, 2, 8, 8)
        y = random_coil_stack(rng, 3, 8, 8)
        with pytest.raises(GeometryError):
            kspace_residual(x, y, torch.ones(8, 8))
