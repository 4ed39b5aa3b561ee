"""Scikit-learn style wrappers around the two trainable stages.

``Stage1Reconstructor`` fits the slice reconstruction network on an
unpaired dataset manifest and transforms undersampled coil stacks into
coil-combined images. ``Stage2Refiner`` fits the window refinement networks
on two unpaired volume collections and transforms volumes. Both follow the
estimator contract: constructor arguments are stored verbatim (so
``get_params`` / ``set_params`` / ``clone`` work), ``fit`` returns ``self``,
and fitted attributes carry a trailing underscore.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .losses import Stage1Weights
from .training import (
    Stage1Settings,
    Stage2Settings,
    TrainConfig,
    load_stage1_checkpoint,
    load_stage2_checkpoint,
    reconstruct_slices,
    refine_volume,
    train_stage1,
    train_stage2,
)
from .validation import DataError


def _work_dir(work_dir) -> Path:
    if work_dir is None:
        return Path(tempfile.mkdtemp(prefix="tofrecon-run-"))
    path = Path(work_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


class Stage1Reconstructor(BaseEstimator):
    """Unpaired slice reconstruction as a fit/transform estimator.

    ``fit`` consumes a dataset manifest (path or ``(manifest, base)`` pair)
    and trains the generator; ``transform`` maps undersampled coil stacks
    ``[N, C, H, W]`` (or a single stack) to coil-combined images
    ``[N, H, W]``.
    """

    def __init__(self, base_channels=64, stages=4, attention="full_unet",
                 disc_base_channels=64, cycle_weight=100.0, identity_weight=0.5,
                 freq_weight=1.0, epochs=100, lr=1e-4, lr_decay_epoch=60,
                 batch_size=4, max_steps=None, optimizer="radam", lookahead=True,
                 checkpoint_every=1, seed=0, work_dir=None):
        self.base_channels = base_channels
        self.stages = stages
        self.attention = attention
        self.disc_base_channels = disc_base_channels
        self.cycle_weight = cycle_weight
        self.identity_weight = identity_weight
        self.freq_weight = freq_weight
        self.epochs = epochs
        self.lr = lr
        self.lr_decay_epoch = lr_decay_epoch
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.optimizer = optimizer
        self.lookahead = lookahead
        self.checkpoint_every = checkpoint_every
        self.seed = seed
        self.work_dir = work_dir

    def _settings(self) -> Stage1Settings:
        return Stage1Settings(
            train=TrainConfig(
                epochs=self.epochs, lr=self.lr, lr_decay_epoch=self.lr_decay_epoch,
                batch_size=self.batch_size, seed=self.seed, max_steps=self.max_steps,
                optimizer=self.optimizer, lookahead=self.lookahead,
                checkpoint_every=self.checkpoint_every,
            ),
            loss=Stage1Weights(cycle=self.cycle_weight, identity=self.identity_weight,
                               freq=self.freq_weight),
            gen_base_channels=self.base_channels,
            gen_stages=self.stages,
            gen_attention=self.attention,
            disc_base_channels=self.disc_base_channels,
        )

    def fit(self, X, y=None):
        result = train_stage1(X, self._settings(), _work_dir(self.work_dir))
        self.result_ = result
        self.checkpoint_dir_ = result.checkpoint_dir
        self.generator_, self.critic_, self.config_ = load_stage1_checkpoint(
            result.checkpoint_dir)
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "Stage1Reconstructor":
        est = cls()
        est.generator_, est.critic_, est.config_ = load_stage1_checkpoint(path)
        est.checkpoint_dir_ = Path(path)
        return est

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "generator_"):
            raise NotFittedError("Stage1Reconstructor is not fitted")
        arr = np.asarray(X)
        if arr.ndim not in (3, 4):
            raise DataError(f"expected [N, C, H, W] or [C, H, W] coil stacks, got {arr.shape}")
        out = reconstruct_slices(self.generator_, arr)
        return out[0] if arr.ndim == 3 else out


class Stage2Refiner(BaseEstimator):
    """Unpaired volumetric refinement as a fit/transform estimator.

    ``fit`` takes ``X = (clean_volumes, reconstructed_volumes)``, two
    unpaired collections of [Z, H, W] arrays; ``transform`` refines a volume
    (or list of volumes) slice-window by slice-window.
    """

    def __init__(self, depth=7, cycle_weight=10.0, lam1=5.0, lam2=3.0,
                 use_mip_head=True, g_base_channels=32, g_stages=3,
                 f_base_channels=8, f_stages=2, disc_base_channels=64,
                 epochs=100, lr=1e-4, batch_size=2, max_steps=None,
                 optimizer="adam", lookahead=False, checkpoint_every=1,
                 seed=0, work_dir=None):
        self.depth = depth
        self.cycle_weight = cycle_weight
        self.lam1 = lam1
        self.lam2 = lam2
        self.use_mip_head = use_mip_head
        self.g_base_channels = g_base_channels
        self.g_stages = g_stages
        self.f_base_channels = f_base_channels
        self.f_stages = f_stages
        self.disc_base_channels = disc_base_channels
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.optimizer = optimizer
        self.lookahead = lookahead
        self.checkpoint_every = checkpoint_every
        self.seed = seed
        self.work_dir = work_dir

    def _settings(self) -> Stage2Settings:
        return Stage2Settings(
            train=TrainConfig(
                epochs=self.epochs, lr=self.lr, lr_decay_epoch=None,
                batch_size=self.batch_size, seed=self.seed, max_steps=self.max_steps,
                optimizer=self.optimizer, lookahead=self.lookahead,
                checkpoint_every=self.checkpoint_every,
            ),
            depth=self.depth, cycle_weight=self.cycle_weight,
            lam1=self.lam1, lam2=self.lam2, use_mip_head=self.use_mip_head,
            g_base_channels=self.g_base_channels, g_stages=self.g_stages,
            f_base_channels=self.f_base_channels, f_stages=self.f_stages,
            disc_base_channels=self.disc_base_channels,
        )

    def fit(self, X, y=None):
        try:
            clean_volumes, recon_volumes = X
        except (TypeError, ValueError) as err:
            raise DataError(
                "fit expects X = (clean_volumes, reconstructed_volumes)") from err
        result = train_stage2(clean_volumes, recon_volumes, self._settings(),
                              _work_dir(self.work_dir))
        self.result_ = result
        self.checkpoint_dir_ = result.checkpoint_dir
        self.generator_, self.reverse_generator_, self.config_ = load_stage2_checkpoint(
            result.checkpoint_dir)
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "Stage2Refiner":
        est = cls()
        est.generator_, est.reverse_generator_, est.config_ = load_stage2_checkpoint(path)
        est.checkpoint_dir_ = Path(path)
        est.depth = est.config_["settings"]["depth"]
        return est

    def transform(self, X):
        if not hasattr(self, "generator_"):
            raise NotFittedError("Stage2Refiner is not fitted")
        depth = self.config_["settings"]["depth"]
        if isinstance(X, (list, tuple)):
            return [refine_volume(self.generator_, vol, depth) for vol in X]
        return refine_volume(self.generator_, np.asarray(X), depth)
