import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """Tiny unpaired dataset shared by trainer/estimator/CLI tests."""
    from tofrecon.phantom import DatasetGeometry, build_unpaired_dataset

    root = tmp_path_factory.mktemp("micro-data")
    geom = DatasetGeometry(h=32, w=32, coils=2, n_slabs=2, slab_depth=6,
                           overlap=2, n_vessels=2)
    manifest = build_unpaired_dataset(root, n_subjects=4, n_test=2, split_seed=0,
                                      accel=4, geometry=geom, noise_sigma=0.01)
    return root, manifest


def micro_stage1_settings(**overrides):
    from tofrecon.losses import Stage1Weights
    from tofrecon.training import Stage1Settings, TrainConfig

    train = dict(epochs=2, batch_size=2, seed=0, checkpoint_every=1, lr=1e-4)
    train.update(overrides.pop("train", {}))
    return Stage1Settings(
        train=TrainConfig(**train), loss=Stage1Weights(),
        gen_base_channels=8, gen_stages=3, gen_attention="conv1x1",
        disc_base_channels=8, **overrides)


def micro_stage2_settings(**overrides):
    from tofrecon.training import Stage2Settings, TrainConfig

    train = dict(epochs=1, batch_size=2, seed=0, checkpoint_every=1,
                 lr_decay_epoch=None, optimizer="adam", lookahead=False)
    train.update(overrides.pop("train", {}))
    defaults = dict(depth=3, g_base_channels=8, g_stages=2, f_base_channels=4,
                    f_stages=1, disc_base_channels=8)
    defaults.update(overrides)
    return Stage2Settings(train=TrainConfig(**train), **defaults)


@pytest.fixture(scope="session")
def micro_stage1_run(micro_dataset, tmp_path_factory):
    from tofrecon.training import train_stage1

    root, _ = micro_dataset
    out = tmp_path_factory.mktemp("micro-stage1")
    result = train_stage1(root / "manifest.json", micro_stage1_settings(), out)
    return result


@pytest.fixture(scope="session")
def micro_stage2_run(micro_dataset, micro_stage1_run, tmp_path_factory):
    from tofrecon import pipeline
    from tofrecon.phantom import load_manifest
    from tofrecon.training import train_stage2

    root, _ = micro_dataset
    manifest, base = load_manifest(root / "manifest.json")
    x_vols, y_vols = pipeline.build_stage2_volumes(manifest, base,
                                                   micro_stage1_run.checkpoint_dir)
    out = tmp_path_factory.mktemp("micro-stage2")
    result = train_stage2(x_vols, y_vols, micro_stage2_settings(), out)
    return result


def dft2c_oracle(x: np.ndarray) -> np.ndarray:
    """Naive O(N^2) centered orthonormal 2-D DFT (even dims).

    Independent of any FFT library: explicit DFT-matrix products with DC at
    index N//2 on both axes.
    """
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape[-2:]

    def dft_matrix(n):
        k = np.arange(n) - n // 2
        r = np.arange(n) - n // 2
        return np.exp(-2j * np.pi * np.outer(k, r) / n) / np.sqrt(n)

    eh, ew = dft_matrix(h), dft_matrix(w)
    return np.einsum("ur,...rc,vc->...uv", eh, x, ew)


def idft2c_oracle(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.complex128)
    h, w = k.shape[-2:]

    def idft_matrix(n):
        kk = np.arange(n) - n // 2
        r = np.arange(n) - n // 2
        return np.exp(2j * np.pi * np.outer(r, kk) / n) / np.sqrt(n)

    eh, ew = idft_matrix(h), idft_matrix(w)
    return np.einsum("ru,...uv,cv->...rc", eh, k, ew)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_coil_stack(rng, c=2, h=4, w=4):
    data = rng.standard_normal((c, h, w)) + 1j * rng.standard_normal((c, h, w))
    return torch.from_numpy(data)
