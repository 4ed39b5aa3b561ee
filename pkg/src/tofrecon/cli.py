"""Command-line pipeline.

Every subcommand takes ``--config <file>`` (JSON, all defaults
overridable), ``--seed <int>`` and ``--out <dir>``. Success exits 0; any
failure prints one machine-parsable line ``error: <category>: <message>``
to stderr and exits with the category's code. Inputs are validated before
any file is written and all writes are atomic, so failed commands leave no
partial outputs.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import dataio, pipeline
from .losses import Stage1Weights
from .masks import make_mask
from .metrics import psnr, ssim, vessel_continuity
from .phantom import DatasetGeometry, build_unpaired_dataset, load_manifest
from .training import Stage1Settings, Stage2Settings, train_stage1, train_stage2
from .validation import ConfigError, DataError, TofreconError

EXIT_CODES = {
    "config": 2,
    "data": 3,
    "geometry": 4,
    "io": 5,
    "training": 6,
    "internal": 70,
}


def _fail(category: str, message: str):
    click.echo(f"error: {category}: {message}", err=True)
    sys.exit(EXIT_CODES.get(category, EXIT_CODES["internal"]))


def common_options(fn):
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="JSON config file; omitted keys use defaults.")
    @click.option("--seed", type=int, default=None, help="Override the config seed.")
    @click.option("--out", "out_dir", type=click.Path(), required=True,
                  help="Output directory.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except TofreconError as err:
            _fail(err.category, str(err))
        except FileNotFoundError as err:
            _fail("io", str(err))
        except json.JSONDecodeError as err:
            _fail("config", f"invalid JSON config: {err}")
        except Exception as err:  # noqa: BLE001 - single CLI failure funnel
            _fail("internal", f"{type(err).__name__}: {err}")

    return wrapper


def _load_config(config_path) -> dict:
    if config_path is None:
        return {}
    cfg = dataio.load_json(config_path)
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing required key {key!r}")
    return cfg[key]


@click.group()
def main():
    """Unpaired two-stage reconstruction toolkit for accelerated 3D
    angiography volumes."""


@main.command()
@common_options
def phantom(config_path, seed, out_dir):
    """Generate an unpaired synthetic dataset (phantoms, coil maps, k-space)."""
    cfg = _load_config(config_path)
    geometry = DatasetGeometry(**cfg.pop("geometry", {}))
    if seed is not None:
        cfg["split_seed"] = seed
    manifest = build_unpaired_dataset(out_dir, geometry=geometry, **cfg)
    click.echo(f"wrote dataset with {len(manifest['subjects'])} subjects to {out_dir}")


@main.command()
@common_options
def mask(config_path, seed, out_dir):
    """Generate an undersampling mask."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    sampling = make_mask(**{"h": 64, "w": 64, "accel": 4, **cfg})
    path = dataio.save_mask(Path(out_dir) / "mask.bin", sampling)
    click.echo(f"wrote {path} (achieved acceleration "
               f"{sampling.achieved_acceleration:.2f})")


@main.command()
@common_options
def undersample(config_path, seed, out_dir):
    """Apply a stored mask to stored k-space data."""
    cfg = _load_config(config_path)
    result = pipeline.undersample_kspace(
        _require(cfg, "input"), _require(cfg, "mask"),
        Path(out_dir) / cfg.get("output_name", "undersampled.bin"))
    click.echo(f"wrote {result['output']} ({result['kept_samples']} samples kept)")


@main.command("train-stage1")
@common_options
def train_stage1_cmd(config_path, seed, out_dir):
    """Train the slice reconstruction stage on a dataset manifest."""
    cfg = _load_config(config_path)
    manifest = _require(cfg, "manifest")
    settings = Stage1Settings.from_dict(cfg.get("settings", {}))
    if seed is not None:
        settings.train.seed = seed
    result = train_stage1(manifest, settings, out_dir)
    if result.aborted:
        click.echo(f"aborted; last good checkpoint {result.checkpoint_dir}")
        sys.exit(EXIT_CODES["training"])
    click.echo(f"finished {result.steps} steps; checkpoint {result.checkpoint_dir}")


@main.command("train-stage2")
@common_options
def train_stage2_cmd(config_path, seed, out_dir):
    """Train the volumetric refinement stage on stage-I reconstructions."""
    cfg = _load_config(config_path)
    manifest_path = _require(cfg, "manifest")
    stage1_ckpt = _require(cfg, "stage1_checkpoint")
    settings = Stage2Settings.from_dict(cfg.get("settings", {}))
    if seed is not None:
        settings.train.seed = seed
    manifest, base = load_manifest(manifest_path)
    x_vols, y_vols = pipeline.build_stage2_volumes(manifest, base, stage1_ckpt)
    result = train_stage2(x_vols, y_vols, settings, out_dir)
    if result.aborted:
        click.echo(f"aborted; last good checkpoint {result.checkpoint_dir}")
        sys.exit(EXIT_CODES["training"])
    click.echo(f"finished {result.steps} steps; checkpoint {result.checkpoint_dir}")


@main.command()
@common_options
def reconstruct(config_path, seed, out_dir):
    """Run the full reconstruction pipeline on one undersampled stack."""
    cfg = _load_config(config_path)
    job = pipeline.ReconJob(
        input_path=_require(cfg, "input"),
        mask_path=_require(cfg, "mask"),
        stage1_checkpoint=_require(cfg, "stage1_checkpoint"),
        stage2_checkpoint=cfg.get("stage2_checkpoint"),
        depth=cfg.get("depth", 7),
        resize_h=cfg.get("resize_h"),
        resize_w=cfg.get("resize_w"),
        label_path=cfg.get("label"),
        out_dir=out_dir,
    )
    result = pipeline.run_recon_job(job)
    click.echo(f"wrote {result['volume']} shape={result['shape']}")


@main.command()
@common_options
def evaluate(config_path, seed, out_dir):
    """Compute PSNR/SSIM (and vessel continuity) for a reconstruction."""
    cfg = _load_config(config_path)
    recon, _ = dataio.load_volume(_require(cfg, "recon"))
    label, _ = dataio.load_volume(_require(cfg, "label"))
    vessels = None
    if "vessels" in cfg:
        vessel_arr, _ = dataio.load_volume(cfg["vessels"])
        vessels = vessel_arr.astype(bool)
    records = pipeline.evaluate_volume(recon, label, cfg.get("identifier", "volume"),
                                       vessels, cfg.get("vessel_floor", 0.85))
    payload = [r.__dict__ for r in records]
    dataio.save_json(Path(out_dir) / "metrics.json", payload)
    lines = ["image_type,psnr,ssim"]
    for r in records:
        lines.append(f"{r.image_type},{r.psnr:.4f},{r.ssim:.6f}")
    dataio.atomic_write_text(Path(out_dir) / "metrics.csv", "\n".join(lines) + "\n")
    for r in records:
        click.echo(f"{r.image_type}: psnr={r.psnr:.2f} ssim={r.ssim:.4f}")


@main.command("ablate-depth")
@common_options
def ablate_depth_cmd(config_path, seed, out_dir):
    """Train the refinement stage at several window depths and tabulate."""
    cfg = _load_config(config_path)
    settings = Stage2Settings.from_dict(cfg.get("settings", {}))
    if seed is not None:
        settings.train.seed = seed
    report = pipeline.ablate_depth(
        _require(cfg, "manifest"), _require(cfg, "stage1_checkpoint"),
        settings, out_dir, depths=tuple(cfg.get("depths", (1, 3, 5, 7, 9))))
    click.echo(f"wrote ablation table for depths {report['depths']} to {out_dir}")


@main.command("export-mip")
@common_options
def export_mip_cmd(config_path, seed, out_dir):
    """Export maximum intensity projections of a stored volume."""
    cfg = _load_config(config_path)
    volume, _ = dataio.load_volume(_require(cfg, "volume"))
    written = pipeline.export_mip(volume, cfg.get("axes", ["axial"]), out_dir)
    click.echo("wrote " + ", ".join(str(p) for p in written))


@main.command("compare-arms")
@common_options
def compare_arms_cmd(config_path, seed, out_dir):
    """Evaluate zero-filled / stage-I / stage-I+II arms on test subjects."""
    cfg = _load_config(config_path)
    report = pipeline.compare_arms(
        _require(cfg, "manifest"), _require(cfg, "stage1_checkpoint"),
        _require(cfg, "stage2_checkpoint"), out_dir,
        stage2_nomip_ckpt=cfg.get("stage2_nomip_checkpoint"))
    click.echo(f"wrote arm comparison ({len(report['records'])} records) to {out_dir}")


if __name__ == "__main__":
    main()
