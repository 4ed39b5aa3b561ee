import numpy as np
import pytest
import torch

from tofrecon import (
    SlabVolume,
    assemble_volume,
    center_slice,
    depth_maxpool,
    depth_windows,
    mip,
    reorient_volume,
    resize_zeropad_crop,
    restack_volume,
    split_into_slabs,
)
from tofrecon.validation import ConfigError, GeometryError


def watermark_volume(z, h=4, w=4):
    # Slice i has constant value i, so assembly provenance is readable.
    return torch.arange(z, dtype=torch.float64)[:, None, None].expand(z, h, w).clone()


class TestSlabs:
    def test_single_slab_full_keep_is_identity(self):
        vol = watermark_volume(6)
        slabs = SlabVolume(data=vol.unsqueeze(0), overlap=0, keep_center=6)
        assert torch.equal(assemble_volume(slabs), vol)

    def test_watermarks_tile_without_duplication(self):
        # 2 slabs, depth 12, overlap 4: centers cover slices 2..17 exactly once.
        vol = watermark_volume(20)
        slabs = split_into_slabs(vol, n_slabs=2, slab_depth=12, overlap=4)
        assembled = assemble_volume(slabs)
        marks = assembled[:, 0, 0].tolist()
        assert marks == list(range(2, 18))
        assert len(set(marks)) == len(marks)

    def test_discarded_end_slices_never_appear(self):
        vol = watermark_volume(20)
        slabs = split_into_slabs(vol, 2, 12, 4)
        marks = set(assemble_volume(slabs)[:, 0, 0].tolist())
        assert marks.isdisjoint({0.0, 1.0, 18.0, 19.0})

    def test_output_length_is_slabs_times_keep(self):
        vol = watermark_volume(39)  # 3 slabs depth 21, overlap 12 -> stride 9
        slabs = split_into_slabs(vol, 3, 21, 12)
        assert slabs.keep_center == 9
        assert assemble_volume(slabs).shape[0] == 3 * 9

    def test_uneven_keep_is_explicit_and_validated(self):
        # Depth 21 with keep 7 is valid (centered); keep 8 is not.
        data = torch.zeros(6, 21, 4, 4)
        sv = SlabVolume(data=data, overlap=14, keep_center=7)
        assert assemble_volume(sv).shape[0] == 42
        with pytest.raises(GeometryError):
            SlabVolume(data=data, overlap=14, keep_center=8)

    def test_inconsistent_geometry_rejected(self):
        vol = watermark_volume(20)
        with pytest.raises(GeometryError):
            split_into_slabs(vol, 2, 12, 3)  # needs 21 slices
        with pytest.raises(GeometryError):
            SlabVolume(data=torch.zeros(2, 4, 3, 3), overlap=4, keep_center=2)
        with pytest.raises(GeometryError):
            SlabVolume(data=-torch.ones(1, 4, 3, 3), overlap=0, keep_center=2)


class TestResize:
    def test_identity_target(self, rng):
        vol = torch.from_numpy(rng.random((3, 16, 16)))
        out = resize_zeropad_crop(vol, 16, 16)
        assert (out - vol).abs().max().item() < 1e-6

    def test_pad_then_crop_round_trip(self, rng):
        # The k-space crop/pad pair is exact; the magnitude step transfers
        # that exactness to images whose interpolation stays nonnegative,
        # so use a smooth volume with a positive floor.
        from scipy.ndimage import gaussian_filter

        vol = torch.from_numpy(gaussian_filter(rng.random((2, 16, 16)), 1.2) + 0.1)
        up = resize_zeropad_crop(vol, 32, 24)
        back = resize_zeropad_crop(up, 16, 16)
        assert (back - vol).abs().max().item() < 1e-6
        assert up.shape == (2, 32, 24)

    def test_constant_image_stays_constant(self):
        vol = torch.full((1, 16, 16), 0.7, dtype=torch.float64)
        up = resize_zeropad_crop(vol, 32, 32)
        assert (up - 0.7).abs().max().item() < 1e-6

    def test_rejects_bad_targets(self):
        with pytest.raises(ConfigError):
            resize_zeropad_crop(torch.zeros(1, 8, 8), 0, 8)


class TestMip:
    def test_single_slice_is_identity(self, rng):
        vol = torch.from_numpy(rng.random((1, 8, 8)))
        assert torch.equal(mip(vol, axis=0), vol[0])

    def test_known_column_maxima(self):
        vol = torch.zeros(5, 4, 4)
        expected = torch.zeros(4, 4)
        rng = np.random.default_rng(0)
        for r in range(4):
            for c in range(4):
                z = rng.integers(0, 5)
                v = float(rng.random() + 0.5)
                vol[z, r, c] = v
                expected[r, c] = v
        assert torch.equal(mip(vol, axis=0), expected)

    def test_dominates_every_slice(self, rng):
        vol = torch.from_numpy(rng.random((6, 8, 8)))
        proj = mip(vol, axis=0)
        assert (proj.unsqueeze(0) >= vol).all()

    def test_commutes_with_positive_scaling(self, rng):
        vol = torch.from_numpy(rng.random((6, 8, 8)))
        assert torch.allclose(mip(3.5 * vol, 0), 3.5 * mip(vol, 0))

    def test_bad_axis(self):
        with pytest.raises(GeometryError):
            mip(torch.zeros(2, 3, 4), axis=5)


class TestDepthWindows:
    def test_depth_one_windows_are_slices(self, rng):
        vol = torch.from_numpy(rng.random((5, 4, 4)))
        wins = depth_windows(vol, depth=1)
        assert wins.shape == (5, 1, 4, 4)
        assert torch.equal(wins[:, 0], vol)

    def test_boundary_replication(self, rng):
        vol = torch.from_numpy(rng.random((10, 4, 4)))
        wins = depth_windows(vol, depth=7)
        assert wins.shape == (10, 7, 4, 4)
        first = wins[0]
        for i in range(4):  # slice 0 replicated 3 extra times
            assert torch.equal(first[i], vol[0])
        assert torch.equal(first[4], vol[1])

    def test_center_maps_to_source_slice(self, rng):
        vol = torch.from_numpy(rng.random((9, 4, 4)))
        wins = depth_windows(vol, depth=5)
        for i in range(9):
            assert torch.equal(wins[i, 2], vol[i])

    def test_round_trip_identity(self, rng):
        vol = torch.from_numpy(rng.random((8, 6, 6)))
        wins = depth_windows(vol, depth=7)
        assert torch.equal(torch.stack([center_slice(w) for w in wins]), vol)
        assert torch.equal(center_slice(wins), vol)

    def test_even_depth_rejected(self):
        with pytest.raises(ConfigError):
            depth_windows(torch.zeros(4, 4, 4), depth=4)


class TestDepthMaxpool:
    def test_depth_one_identity(self, rng):
        w = torch.from_numpy(rng.random((1, 4, 4)))
        assert torch.equal(depth_maxpool(w), w[0])

    def test_single_bright_slice(self):
        w = torch.zeros(7, 4, 4)
        w[3] = torch.arange(16.0).reshape(4, 4)
        assert torch.equal(depth_maxpool(w), w[3])

    def test_equals_mip_along_depth(self, rng):
        w = torch.from_numpy(rng.random((2, 7, 4, 4)))
        assert torch.equal(depth_maxpool(w), mip(w, axis=-3))

    def test_center_slice_indexing(self, rng):
        w = torch.from_numpy(rng.random((7, 4, 4)))
        assert torch.equal(center_slice(w), w[3])
        single = torch.from_numpy(rng.random((1, 4, 4)))
        assert torch.equal(center_slice(single), single[0])


class TestReorientation:
    def test_round_trips(self, rng):
        vol = torch.from_numpy(rng.random((3, 5, 7)))
        for plane in ("axial", "coronal", "sagittal"):
            stacked = reorient_volume(vol, plane)
            assert torch.equal(restack_volume(stacked, plane), vol)

    def test_marked_voxel_lands_in_expected_slice(self):
        vol = torch.zeros(3, 5, 7)
        vol[1, 2, 3] = 1.0
        assert reorient_volume(vol, "coronal")[2, 1, 3] == 1.0
        assert reorient_volume(vol, "sagittal")[3, 1, 2] == 1.0

    def test_unknown_plane(self):
        with pytest.raises(ConfigError):
            reorient_volume(torch.zeros(2, 2, 2), "oblique")
