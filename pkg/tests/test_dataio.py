import json

import numpy as np
import pytest
import torch

from tofrecon import dataio, make_mask
from tofrecon.validation import DataError, IOFormatError


class TestCoilStackFormat:
    def test_round_trip(self, tmp_path, rng):
        arr = (rng.standard_normal((2, 3, 4, 4)) + 1j * rng.standard_normal((2, 3, 4, 4)))
        arr = arr.astype(np.complex64)
        path = dataio.save_coil_stack(tmp_path / "stack.bin", arr, seed=5)
        back, meta = dataio.load_coil_stack(path)
        assert np.array_equal(back, arr)
        assert meta["seed"] == 5
        assert meta["encoding"] == "float32-pairs-little-endian"

    def test_payload_is_interleaved_float32_pairs(self, tmp_path):
        arr = np.array([[[1 + 2j, 3 - 4j]]], dtype=np.complex64)
        path = dataio.save_coil_stack(tmp_path / "stack.bin", arr)
        raw = np.fromfile(path, dtype="<f4")
        assert raw.tolist() == [1.0, 2.0, 3.0, -4.0]

    def test_size_mismatch_detected(self, tmp_path):
        arr = np.zeros((1, 2, 2), dtype=np.complex64)
        path = dataio.save_coil_stack(tmp_path / "stack.bin", arr)
        sidecar = json.loads((tmp_path / "stack.json").read_text())
        sidecar["shape"] = [2, 2, 2]
        (tmp_path / "stack.json").write_text(json.dumps(sidecar))
        with pytest.raises(IOFormatError):
            dataio.load_coil_stack(path)

    def test_wrong_format_detected(self, tmp_path):
        arr = np.zeros((2, 2), dtype=np.float32)
        path = dataio.save_volume(tmp_path / "vol.bin", arr)
        with pytest.raises(IOFormatError):
            dataio.load_coil_stack(path)


class TestVolumeFormat:
    def test_round_trip(self, tmp_path, rng):
        arr = rng.random((3, 4, 5)).astype(np.float32)
        path = dataio.save_volume(tmp_path / "vol.bin", arr, keep_center=4)
        back, meta = dataio.load_volume(path)
        assert np.array_equal(back, arr)
        assert meta["keep_center"] == 4

    def test_little_endian_float32(self, tmp_path):
        arr = np.array([[1.5, -2.0]], dtype=np.float32)
        path = dataio.save_volume(tmp_path / "vol.bin", arr)
        assert np.fromfile(path, dtype="<f4").tolist() == [1.5, -2.0]


class TestMaskFormat:
    def test_round_trip_preserves_metadata(self, tmp_path):
        mask = make_mask(16, 16, accel=4, acs_fraction=0.1, pf_fraction=0.75, seed=3)
        path = dataio.save_mask(tmp_path / "mask.bin", mask)
        back = dataio.load_mask(path)
        assert torch.equal(back.keep, mask.keep)
        assert back.accel == 4 and back.seed == 3
        raw = np.fromfile(path, dtype=np.uint8)
        assert set(np.unique(raw)) <= {0, 1}


class TestAtomicWrites:
    def test_no_temp_files_left(self, tmp_path):
        dataio.atomic_write_text(tmp_path / "a.txt", "hello")
        assert (tmp_path / "a.txt").read_text() == "hello"
        assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]

    def test_overwrite_is_atomic(self, tmp_path):
        target = tmp_path / "b.txt"
        dataio.atomic_write_text(target, "one")
        dataio.atomic_write_text(target, "two")
        assert target.read_text() == "two"


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        weights = {"w": torch.arange(4.0)}
        config = {"kind": "stage1", "note": "test"}
        ckpt = dataio.save_checkpoint(tmp_path / "epoch_0000", weights, config)
        back_w, back_c = dataio.load_checkpoint(ckpt)
        assert torch.equal(back_w["w"], weights["w"])
        assert back_c == config

    def test_existing_directory_rejected(self, tmp_path):
        dataio.save_checkpoint(tmp_path / "epoch_0000", {"w": torch.zeros(1)}, {})
        with pytest.raises(IOFormatError):
            dataio.save_checkpoint(tmp_path / "epoch_0000", {"w": torch.zeros(1)}, {})

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(DataError):
            dataio.load_checkpoint(tmp_path / "empty")


class TestDatasetManifest:
    def test_manifest_contents(self, micro_dataset):
        root, manifest = micro_dataset
        assert manifest["kind"] == "tofrecon-dataset"
        domains = [s["domain"] for s in manifest["subjects"]]
        assert domains.count("x") == 2 and domains.count("y") == 2
        assert domains.count("test") == 2
        x_ids = {s["id"] for s in manifest["subjects"] if s["domain"] == "x"}
        y_ids = {s["id"] for s in manifest["subjects"] if s["domain"] == "y"}
        assert x_ids.isdisjoint(y_ids)
        for entry in manifest["subjects"]:
            for key in ("full", "under", "label", "vessels"):
                if key in entry:
                    assert (root / entry[key]).exists()

    def test_x_subjects_have_no_undersampled_files(self, micro_dataset):
        _, manifest = micro_dataset
        for entry in manifest["subjects"]:
            if entry["domain"] == "x":
                assert "under" not in entry
            if entry["domain"] == "y":
                assert "full" not in entry

    def test_manifest_reproducible(self, micro_dataset, tmp_path):
        from tofrecon.phantom import DatasetGeometry, build_unpaired_dataset

        root, manifest = micro_dataset
        geom = DatasetGeometry(h=32, w=32, coils=2, n_slabs=2, slab_depth=6,
                               overlap=2, n_vessels=2)
        again = build_unpaired_dataset(tmp_path, n_subjects=4, n_test=2, split_seed=0,
                                       accel=4, geometry=geom, noise_sigma=0.01)
        assert again == manifest
        a = (root / "subjects/s00_full.bin") if (root / "subjects/s00_full.bin").exists() \
            else (root / manifest["subjects"][0]["full"])
        b = tmp_path / manifest["subjects"][0]["full"]
        assert a.read_bytes() == b.read_bytes()
