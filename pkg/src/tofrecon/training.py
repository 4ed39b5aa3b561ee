"""Optimization loops for the two reconstruction stages.

Stage I alternates one critic update and one generator update per batch of
unpaired slices, with rectified-moment optimization wrapped in lookahead
averaging and a step learning-rate decay. Stage II trains both window
generators and both critics jointly with plain adaptive moments and a
constant learning rate.

Every input is divided by its own scalar standard deviation before entering
a network. Runs are fully deterministic in the config seed: data order,
initialization and the loss log are reproducible bit for bit, and
checkpoints carry the RNG states needed to resume exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .fourier import ssos
from .geometry import depth_windows
from .losses import LossReport, Stage1Weights, stage1_discriminator_loss, stage1_generator_loss, stage2_losses
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    ProjectionDiscriminatorConfig,
    apply_to_complex,
    spectral_audit,
)
from .optim import NonFiniteGradientError, build_optimizer, set_learning_rate
from .phantom import load_manifest, load_stage1_slices
from .validation import ConfigError, DataError, TrainingError


@dataclass
class TrainConfig:
    """Shared optimization schedule parameters."""

    epochs: int = 100
    lr: float = 1e-4
    lr_decay_epoch: int | None = 60
    lr_decay_factor: float = 0.1
    batch_size: int = 4
    seed: int = 0
    max_steps: int | None = None
    checkpoint_every: int = 1
    optimizer: str = "radam"
    lookahead: bool = True
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    beta1: float = 0.5
    beta2: float = 0.999
    # Critic learning rate as a fraction of the generator's (two-time-scale
    # updates); 1.0 trains both at the same rate.
    disc_lr_factor: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def lr_at_epoch(self, epoch: int) -> float:
        if self.lr_decay_epoch is not None and epoch >= self.lr_decay_epoch:
            return self.lr * self.lr_decay_factor
        return self.lr


@dataclass
class Stage1Settings:
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: Stage1Weights = field(default_factory=Stage1Weights)
    gen_base_channels: int = 64
    gen_stages: int = 4
    gen_attention: str = "full_unet"
    disc_base_channels: int = 64
    run_id: str = "stage1"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Stage1Settings":
        data = dict(data)
        train = TrainConfig(**data.pop("train", {}))
        loss = Stage1Weights(**data.pop("loss", {}))
        return cls(train=train, loss=loss, **data)


@dataclass
class Stage2Settings:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr_decay_epoch=None, batch_size=2, optimizer="adam", lookahead=False))
    depth: int = 7
    cycle_weight: float = 10.0
    lam1: float = 5.0
    lam2: float = 3.0
    use_mip_head: bool = True
    g_base_channels: int = 32
    g_stages: int = 3
    f_base_channels: int = 8
    f_stages: int = 2
    disc_base_channels: int = 64
    run_id: str = "stage2"

    def __post_init__(self):
        if self.depth < 1 or self.depth % 2 == 0:
            raise ConfigError(f"depth must be a positive odd integer, got {self.depth}")
        if self.depth == 1:
            # A single-slice window has no depth axis to pool over.
            self.use_mip_head = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Stage2Settings":
        data = dict(data)
        train = TrainConfig(**data.pop("train", {}))
        return cls(train=train, **data)


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint_dir: Path
    loss_log: Path
    steps: int
    aborted: bool = False


def sample_std(t: torch.Tensor) -> torch.Tensor:
    """Scalar standard deviation over all real/imag entries of one sample."""
    if t.is_complex():
        t = torch.view_as_real(t)
    return t.std(correction=0).clamp_min(1e-12)


def standardize_batch(batch: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Divide each sample by its own std; returns (standardized, stds)."""
    stds = torch.stack([sample_std(sample) for sample in batch])
    shape = (-1,) + (1,) * (batch.ndim - 1)
    return batch / stds.reshape(shape).to(batch.dtype), stds


class _LossLogWriter:
    """Accumulates JSONL records; flushes atomically per epoch and on close."""

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.records: list[str] = []
        self._epoch_start = 0

    def add(self, record: dict) -> None:
        self.records.append(json.dumps(record, sort_keys=True))

    def flush_epoch(self, epoch_dir: Path) -> None:
        segment = self.records[self._epoch_start:]
        dataio.atomic_write_text(epoch_dir / "losses.jsonl", "".join(r + "\n" for r in segment))
        self._epoch_start = len(self.records)

    def close(self) -> None:
        dataio.atomic_write_text(self.run_dir / "losses.jsonl",
                                 "".join(r + "\n" for r in self.records))


def _rng_payload(data_rng: np.random.Generator) -> dict:
    return {
        "torch_rng": torch.get_rng_state(),
        "data_rng": data_rng.bit_generator.state,
    }


def _restore_rng(payload: dict, data_rng: np.random.Generator) -> None:
    torch.set_rng_state(payload["torch_rng"])
    data_rng.bit_generator.state = payload["data_rng"]


def _finite_or_abort(report: LossReport, context: str) -> None:
    for name in ("total_g", "total_d"):
        value = getattr(report, name)
        value = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite {name} at {context}")


def train_stage1(manifest, settings: Stage1Settings, out_dir, resume_from=None) -> TrainResult:
    """Train the slice reconstruction stage from a dataset manifest.

    Writes ``{out_dir}/{run_id}/epoch_{n}/`` checkpoints (weights archive,
    config snapshot, loss log segment) plus a cumulative loss log, and
    returns the final checkpoint. A non-finite loss aborts the run, keeping
    the last good checkpoint.
    """
    if isinstance(manifest, (str, Path)):
        manifest, base = load_manifest(manifest)
    else:
        manifest, base = manifest

    cfg = settings.train
    x_all, y_all, mask = load_stage1_slices(manifest, Path(base))
    coils, h, w = x_all.shape[-3:]
    if min(len(x_all), len(y_all)) < cfg.batch_size:
        raise ConfigError(
            f"batch size {cfg.batch_size} exceeds the smaller domain "
            f"({min(len(x_all), len(y_all))} slices)"
        )

    torch.manual_seed(cfg.seed)
    generator = GeneratorConfig(
        in_channels=2 * coils, out_channels=2 * coils, stages=settings.gen_stages,
        base_channels=settings.gen_base_channels, attention=settings.gen_attention,
    ).build()
    critic = DiscriminatorConfig(
        in_channels=1, base_channels=settings.disc_base_channels
    ).build()
    opt_g = build_optimizer(generator.parameters(), cfg.optimizer, cfg.lr,
                            (cfg.beta1, cfg.beta2), cfg.lookahead,
                            cfg.lookahead_k, cfg.lookahead_alpha)
    opt_d = build_optimizer(critic.parameters(), cfg.optimizer, cfg.lr,
                            (cfg.beta1, cfg.beta2), cfg.lookahead,
                            cfg.lookahead_k, cfg.lookahead_alpha)

    data_rng = np.random.default_rng(cfg.seed + 1)
    step = 0
    start_epoch = 0
    if resume_from is not None:
        weights, _ = dataio.load_checkpoint(resume_from)
        generator.load_state_dict(weights["generator"])
        critic.load_state_dict(weights["critic"])
        opt_g.load_state_dict(weights["opt_g"])
        opt_d.load_state_dict(weights["opt_d"])
        _restore_rng(weights, data_rng)
        step = weights["step"]
        start_epoch = weights["epoch"] + 1

    run_dir = Path(out_dir) / settings.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    config_snapshot = {
        "kind": "stage1",
        "settings": settings.to_dict(),
        "data": {"coils": int(coils), "h": int(h), "w": int(w),
                 "accel": manifest["accel"], "mask": manifest["mask"]},
    }
    log = _LossLogWriter(run_dir)
    mask_tensor = mask.keep

    def checkpoint(epoch: int) -> Path:
        payload = {
            "generator": generator.state_dict(),
            "critic": critic.state_dict(),
            "opt_g": opt_g.state_dict(),
            "opt_d": opt_d.state_dict(),
            "step": step,
            "epoch": epoch,
            **_rng_payload(data_rng),
        }
        epoch_dir = run_dir / f"epoch_{epoch:04d}"
        dataio.save_checkpoint(epoch_dir, payload, {**config_snapshot, "epoch": epoch, "step": step})
        log.flush_epoch(epoch_dir)
        return epoch_dir

    steps_per_epoch = min(len(x_all), len(y_all)) // cfg.batch_size
    last_ckpt = None
    aborted = False
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr_now = cfg.lr_at_epoch(epoch)
            set_learning_rate(opt_g, lr_now)
            set_learning_rate(opt_d, lr_now * cfg.disc_lr_factor)
            x_order = data_rng.permutation(len(x_all))
            y_order = data_rng.permutation(len(y_all))
            for b in range(steps_per_epoch):
                sel_x = x_order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                sel_y = y_order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                x, _ = standardize_batch(torch.from_numpy(x_all[sel_x]))
                y, _ = standardize_batch(torch.from_numpy(y_all[sel_y]))

                with torch.no_grad():
                    fake = ssos(apply_to_complex(generator, y))
                d_loss = stage1_discriminator_loss(critic, x, fake)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

                report = stage1_generator_loss(generator, critic, x, y,
                                               mask_tensor, settings.loss, step)
                opt_g.zero_grad()
                report.total_g.backward()
                opt_g.step()

                record = report.detached()
                record.disc_d = float(d_loss.detach())
                record.total_d = float(d_loss.detach())
                _finite_or_abort(record, f"step {step}")
                log.add({**record.to_dict(), "epoch": epoch, "lr": lr_now})
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    last_ckpt = checkpoint(epoch)
                    return TrainResult(run_dir, last_ckpt, run_dir / "losses.jsonl", step)
            if (epoch + 1 == cfg.epochs) or (epoch % cfg.checkpoint_every == 0):
                last_ckpt = checkpoint(epoch)
    except (TrainingError, NonFiniteGradientError, DataError) as err:
        aborted = True
        if last_ckpt is None:
            raise
        log.add({"aborted": True, "reason": str(err), "step": step})
    finally:
        log.close()
    return TrainResult(run_dir, last_ckpt, run_dir / "losses.jsonl", step, aborted)


def load_stage1_checkpoint(path):
    """Rebuild the stage-I generator (and critic) from a checkpoint dir."""
    weights, config = dataio.load_checkpoint(path)
    if config.get("kind") != "stage1":
        raise DataError(f"{path} is not a stage-1 checkpoint")
    settings = Stage1Settings.from_dict(config["settings"])
    coils = config["data"]["coils"]
    generator = GeneratorConfig(
        in_channels=2 * coils, out_channels=2 * coils, stages=settings.gen_stages,
        base_channels=settings.gen_base_channels, attention=settings.gen_attention,
    ).build()
    generator.load_state_dict(weights["generator"])
    generator.eval()
    critic = DiscriminatorConfig(in_channels=1, base_channels=settings.disc_base_channels).build()
    critic.load_state_dict(weights["critic"])
    critic.eval()
    return generator, critic, config


def reconstruct_slices(generator, slices, batch_size: int = 8) -> np.ndarray:
    """Apply the slice generator to undersampled stacks; returns SSoS images.

    Each input is standardized by its own std and the output is scaled back,
    so reconstructions live on the input intensity scale.
    """
    arr = np.asarray(slices)
    if arr.ndim == 3:
        arr = arr[None]
    out = np.zeros(arr.shape[:1] + arr.shape[-2:], dtype=np.float32)
    generator.eval()
    with torch.no_grad():
        for lo in range(0, len(arr), batch_size):
            chunk = torch.from_numpy(arr[lo:lo + batch_size])
            std_batch, stds = standardize_batch(chunk)
            recon = ssos(apply_to_complex(generator, std_batch))
            out[lo:lo + batch_size] = (recon * stds.reshape(-1, 1, 1)).numpy()
    return out


def _window_pool(volumes, depth: int) -> np.ndarray:
    pools = []
    for vol in volumes:
        wins = depth_windows(torch.as_tensor(np.asarray(vol, dtype=np.float32)), depth)
        pools.append(wins.numpy())
    return np.concatenate(pools)


def train_stage2(x_volumes, y_volumes, settings: Stage2Settings, out_dir,
                 resume_from=None) -> TrainResult:
    """Train the window refinement stage on unpaired volume collections.

    ``x_volumes`` are clean-domain volumes, ``y_volumes`` stage-I
    reconstructions; both are cut into slice-centered depth windows that are
    sampled independently each step. The double-headed projection critic
    scores the clean domain (its max-pool head is disabled at depth 1), and
    a per-epoch singular-value audit of every critic layer is stored next to
    each checkpoint.
    """
    cfg = settings.train
    x_pool = _window_pool(x_volumes, settings.depth)
    y_pool = _window_pool(y_volumes, settings.depth)
    if min(len(x_pool), len(y_pool)) < cfg.batch_size:
        raise ConfigError("batch size exceeds the window pool")
    h, w = x_pool.shape[-2:]
    if y_pool.shape[-2:] != (h, w):
        raise ConfigError("x and y volumes disagree in slice shape")

    torch.manual_seed(cfg.seed)
    gen_g = GeneratorConfig(in_channels=settings.depth, out_channels=settings.depth,
                            stages=settings.g_stages, base_channels=settings.g_base_channels,
                            attention="conv1x1").build()
    gen_f = GeneratorConfig(in_channels=settings.depth, out_channels=settings.depth,
                            stages=settings.f_stages, base_channels=settings.f_base_channels,
                            attention="none").build()
    proj = ProjectionDiscriminatorConfig(
        depth=settings.depth, lam1=settings.lam1, lam2=settings.lam2,
        base_channels=settings.disc_base_channels, use_mip_head=settings.use_mip_head,
    ).build()
    psi = DiscriminatorConfig(in_channels=settings.depth,
                              base_channels=settings.disc_base_channels).build()

    opt_g = build_optimizer(
        list(gen_g.parameters()) + list(gen_f.parameters()), cfg.optimizer, cfg.lr,
        (cfg.beta1, cfg.beta2), cfg.lookahead, cfg.lookahead_k, cfg.lookahead_alpha)
    opt_d = build_optimizer(
        list(proj.parameters()) + list(psi.parameters()), cfg.optimizer, cfg.lr,
        (cfg.beta1, cfg.beta2), cfg.lookahead, cfg.lookahead_k, cfg.lookahead_alpha)

    data_rng = np.random.default_rng(cfg.seed + 1)
    step = 0
    start_epoch = 0
    if resume_from is not None:
        weights, _ = dataio.load_checkpoint(resume_from)
        gen_g.load_state_dict(weights["generator_g"])
        gen_f.load_state_dict(weights["generator_f"])
        proj.load_state_dict(weights["projection_critic"])
        psi.load_state_dict(weights["y_critic"])
        opt_g.load_state_dict(weights["opt_g"])
        opt_d.load_state_dict(weights["opt_d"])
        _restore_rng(weights, data_rng)
        step = weights["step"]
        start_epoch = weights["epoch"] + 1

    run_dir = Path(out_dir) / settings.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    config_snapshot = {
        "kind": "stage2",
        "settings": settings.to_dict(),
        "data": {"h": int(h), "w": int(w)},
        "mip_head_enabled": settings.use_mip_head,
    }
    log = _LossLogWriter(run_dir)

    def audit() -> dict:
        report = {}
        report.update({f"volume_head.{k}": v for k, v in spectral_audit(proj.volume_head).items()})
        if proj.mip_head is not None:
            report.update({f"mip_head.{k}": v for k, v in spectral_audit(proj.mip_head).items()})
        report.update({f"y_critic.{k}": v for k, v in spectral_audit(psi).items()})
        return report

    def checkpoint(epoch: int) -> Path:
        payload = {
            "generator_g": gen_g.state_dict(),
            "generator_f": gen_f.state_dict(),
            "projection_critic": proj.state_dict(),
            "y_critic": psi.state_dict(),
            "opt_g": opt_g.state_dict(),
            "opt_d": opt_d.state_dict(),
            "step": step,
            "epoch": epoch,
            **_rng_payload(data_rng),
        }
        epoch_dir = run_dir / f"epoch_{epoch:04d}"
        dataio.save_checkpoint(epoch_dir, payload, {**config_snapshot, "epoch": epoch, "step": step})
        dataio.save_json(epoch_dir / "spectral_audit.json", audit())
        log.flush_epoch(epoch_dir)
        return epoch_dir

    # One epoch passes once over the smaller unpaired window pool.
    steps_per_epoch = min(len(x_pool), len(y_pool)) // cfg.batch_size
    phi2 = proj.mip_head if settings.use_mip_head else None
    last_ckpt = None
    aborted = False
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr_now = cfg.lr_at_epoch(epoch)
            set_learning_rate(opt_g, lr_now)
            set_learning_rate(opt_d, lr_now * cfg.disc_lr_factor)
            x_order = data_rng.permutation(len(x_pool))
            y_order = data_rng.permutation(len(y_pool))
            for b in range(steps_per_epoch):
                sel_x = x_order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                sel_y = y_order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                x, _ = standardize_batch(torch.from_numpy(x_pool[sel_x]))
                y, _ = standardize_batch(torch.from_numpy(y_pool[sel_y]))

                report = stage2_losses(gen_g, gen_f, proj.volume_head, phi2, psi,
                                       x, y, settings.cycle_weight,
                                       settings.lam1, settings.lam2, step)
                # Both totals come from one shared forward pass evaluated at
                # the pre-update parameters. The generator branch must run
                # backward before the critic step mutates the spectrally
                # normalized weights its graph references; the critic branch
                # only sees detached fakes, so the generator step cannot
                # invalidate it.
                opt_g.zero_grad()
                report.total_g.backward()
                opt_g.step()
                opt_d.zero_grad()
                report.total_d.backward()
                opt_d.step()

                record = report.detached()
                _finite_or_abort(record, f"step {step}")
                log.add({**record.to_dict(), "epoch": epoch, "lr": lr_now})
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    last_ckpt = checkpoint(epoch)
                    return TrainResult(run_dir, last_ckpt, run_dir / "losses.jsonl", step)
            if (epoch + 1 == cfg.epochs) or (epoch % cfg.checkpoint_every == 0):
                last_ckpt = checkpoint(epoch)
    except (TrainingError, NonFiniteGradientError, DataError) as err:
        aborted = True
        if last_ckpt is None:
            raise
        log.add({"aborted": True, "reason": str(err), "step": step})
    finally:
        log.close()
    return TrainResult(run_dir, last_ckpt, run_dir / "losses.jsonl", step, aborted)


def load_stage2_checkpoint(path):
    """Rebuild the stage-II networks from a checkpoint directory."""
    weights, config = dataio.load_checkpoint(path)
    if config.get("kind") != "stage2":
        raise DataError(f"{path} is not a stage-2 checkpoint")
    settings = Stage2Settings.from_dict(config["settings"])
    gen_g = GeneratorConfig(in_channels=settings.depth, out_channels=settings.depth,
                            stages=settings.g_stages, base_channels=settings.g_base_channels,
                            attention="conv1x1").build()
    gen_g.load_state_dict(weights["generator_g"])
    gen_g.eval()
    gen_f = GeneratorConfig(in_channels=settings.depth, out_channels=settings.depth,
                            stages=settings.f_stages, base_channels=settings.f_base_channels,
                            attention="none").build()
    gen_f.load_state_dict(weights["generator_f"])
    gen_f.eval()
    return gen_g, gen_f, config


def refine_volume(gen_g, volume, depth: int, batch_size: int = 8) -> np.ndarray:
    """Refine a volume window by window, keeping only center slices.

    Every slice gets a window centered on it; each window is standardized,
    refined, scaled back, and contributes exactly its center slice to the
    output, so the result has the volume's shape.
    """
    vol = np.asarray(volume, dtype=np.float32)
    wins = depth_windows(torch.from_numpy(vol), depth).numpy()
    centers = np.zeros_like(vol)
    gen_g.eval()
    with torch.no_grad():
        for lo in range(0, len(wins), batch_size):
            chunk = torch.from_numpy(wins[lo:lo + batch_size])
            std_chunk, stds = standardize_batch(chunk)
            refined = gen_g(std_chunk) * stds.reshape(-1, 1, 1, 1)
            centers[lo:lo + batch_size] = refined[:, depth // 2].numpy()
    return centers
