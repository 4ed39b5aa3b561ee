"""End-to-end reconstruction workflows.

Glues the trained networks to the geometry plumbing: slab-wise slice
reconstruction, volume assembly and resizing, window refinement, projection
export, evaluation against held-out labels, the arm comparison report, and
the slice-depth ablation harness.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import dataio
from .fourier import ssos
from .geometry import SlabVolume, assemble_volume, mip, resize_zeropad_crop
from .metrics import MetricRecord, psnr, ssim, vessel_continuity
from .phantom import load_manifest, manifest_subjects
from .training import (
    Stage2Settings,
    load_stage1_checkpoint,
    load_stage2_checkpoint,
    reconstruct_slices,
    refine_volume,
    train_stage2,
)
from .validation import ConfigError, DataError, GeometryError

MIP_AXES = {"axial": 0, "coronal": 1, "sagittal": 2}


@dataclass
class ReconJob:
    """One reconstruction request: input stack, networks, output location."""

    input_path: Path
    mask_path: Path
    stage1_checkpoint: Path
    out_dir: Path
    stage2_checkpoint: Path | None = None
    depth: int = 7
    resize_h: int | None = None
    resize_w: int | None = None
    label_path: Path | None = None

    def __post_init__(self):
        for name in ("input_path", "mask_path", "stage1_checkpoint"):
            p = Path(getattr(self, name))
            setattr(self, name, p)
            if not p.exists():
                raise DataError(f"{name} {p} does not exist")
        if self.stage2_checkpoint is not None:
            self.stage2_checkpoint = Path(self.stage2_checkpoint)
            if not self.stage2_checkpoint.exists():
                raise DataError(f"stage2_checkpoint {self.stage2_checkpoint} does not exist")
        if self.label_path is not None:
            self.label_path = Path(self.label_path)
            if not self.label_path.exists():
                raise DataError(f"label_path {self.label_path} does not exist")
        if self.depth < 1 or self.depth % 2 == 0:
            raise ConfigError(f"depth must be a positive odd integer, got {self.depth}")
        self.out_dir = Path(self.out_dir)


def _slab_volume_from_slices(images: np.ndarray, meta: dict) -> np.ndarray:
    """Reassemble [S*D, H, W] slice images into the kept-center volume."""
    n_slabs = int(meta["n_slabs"])
    slab_depth = int(meta["slab_depth"])
    overlap = int(meta["overlap"])
    keep = int(meta["keep_center"])
    stacked = images.reshape(n_slabs, slab_depth, *images.shape[-2:])
    slabs = SlabVolume(data=torch.from_numpy(stacked), overlap=overlap, keep_center=keep)
    return assemble_volume(slabs).numpy()


def zero_filled_volume(under: np.ndarray, meta: dict) -> np.ndarray:
    flat = under.reshape(-1, *under.shape[-3:])
    images = ssos(torch.from_numpy(flat)).numpy()
    return _slab_volume_from_slices(images, meta)


def stage1_volume(generator, under: np.ndarray, meta: dict) -> np.ndarray:
    flat = under.reshape(-1, *under.shape[-3:])
    images = reconstruct_slices(generator, flat)
    return _slab_volume_from_slices(images, meta)


def run_recon_job(job: ReconJob) -> dict:
    """Execute one reconstruction; returns a result summary dict.

    Applies the slice generator to every slab slice, combines coils,
    assembles the kept slab centers, optionally resizes, optionally refines
    window-wise keeping center slices, then writes the volume, its axial
    projection, and metrics when a label is available.
    """
    under, meta = dataio.load_coil_stack(job.input_path)
    if under.ndim != 5:
        raise GeometryError(
            f"reconstruction input must be [slabs, slices, coils, h, w], got {under.shape}"
        )
    dataio.load_mask(job.mask_path)  # validates mask/sidecar consistency
    generator, _, stage1_cfg = load_stage1_checkpoint(job.stage1_checkpoint)
    if stage1_cfg["data"]["coils"] != under.shape[2]:
        raise GeometryError(
            f"checkpoint expects {stage1_cfg['data']['coils']} coils, input has {under.shape[2]}"
        )

    volume = stage1_volume(generator, under, meta)
    if job.resize_h or job.resize_w:
        th = job.resize_h or volume.shape[-2]
        tw = job.resize_w or volume.shape[-1]
        volume = resize_zeropad_crop(torch.from_numpy(volume), th, tw).numpy()

    arms = {"stage1": volume}
    if job.stage2_checkpoint is not None:
        gen_g, _, stage2_cfg = load_stage2_checkpoint(job.stage2_checkpoint)
        depth = stage2_cfg["settings"]["depth"]
        arms["stage2"] = refine_volume(gen_g, volume, depth)

    final = arms.get("stage2", arms["stage1"])
    out_dir = Path(job.out_dir)
    dataio.save_volume(out_dir / "reconstruction.bin", final,
                       arms=sorted(arms), stage2="stage2" in arms)
    export_mip(final, ["axial"], out_dir)

    result = {"volume": str(out_dir / "reconstruction.bin"), "shape": list(final.shape)}
    if job.label_path is not None:
        label, _ = dataio.load_volume(job.label_path)
        records = [m.__dict__ for m in evaluate_volume(final, label, identifier=job.input_path.stem)]
        dataio.save_json(out_dir / "metrics.json", records)
        result["metrics"] = records
    return result


def export_mip(volume, axes, out_dir) -> list[Path]:
    """Write one 8-bit grayscale projection per axis plus raw float copies.

    Pixel values are round(255 * v / max(volume)).
    """
    axes = list(axes)
    bad = [a for a in axes if a not in MIP_AXES]
    if bad:
        raise ConfigError(f"unknown projection axes {bad}; valid: {sorted(MIP_AXES)}")
    vol = torch.as_tensor(np.asarray(volume, dtype=np.float32))
    peak = float(vol.max())
    if peak <= 0:
        raise DataError("volume has no positive intensities to project")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for axis_name in axes:
        proj = mip(vol, MIP_AXES[axis_name]).numpy()
        raw_path = dataio.save_volume(out_dir / f"mip_{axis_name}.bin", proj,
                                      projection_axis=axis_name)
        png = np.round(255.0 * proj / peak).astype(np.uint8)
        png_path = out_dir / f"mip_{axis_name}.png"
        image = Image.fromarray(png, mode="L")
        tmp = png_path.with_name(png_path.name + ".tmp")
        image.save(tmp, format="PNG")
        tmp.replace(png_path)
        written += [raw_path, png_path]
    return written


def evaluate_volume(recon: np.ndarray, label: np.ndarray, identifier: str = "",
                    vessels: np.ndarray | None = None, vessel_floor: float = 0.85):
    """MRA (per-slice average) and axial-MIP metric records for one volume."""
    if recon.shape != label.shape:
        raise GeometryError(f"recon {recon.shape} does not match label {label.shape}")
    slice_psnr = [psnr(r, l) for r, l in zip(recon, label)]
    slice_ssim = [ssim(r, l) for r, l in zip(recon, label)]
    records = [MetricRecord(psnr=float(np.mean(slice_psnr)), ssim=float(np.mean(slice_ssim)),
                            image_type="MRA", identifier=identifier)]
    mip_r = recon.max(axis=0)
    mip_l = label.max(axis=0)
    mip_record = MetricRecord(psnr=psnr(mip_r, mip_l), ssim=ssim(mip_r, mip_l),
                              image_type="MIP", identifier=identifier)
    if vessels is not None:
        projected = vessels.any(axis=0)
        mip_record.constants["vessel_continuity"] = vessel_continuity(
            mip_r, projected, 0.5 * vessel_floor)
        mip_record.constants["vessel_continuity_label"] = vessel_continuity(
            mip_l, projected, 0.5 * vessel_floor)
    records.append(mip_record)
    return records


def _load_test_subject(entry: dict, base: Path):
    under, meta = dataio.load_coil_stack(base / entry["under"])
    label, _ = dataio.load_volume(base / entry["label"])
    vessels, _ = dataio.load_volume(base / entry["vessels"])
    return under, meta, label, vessels.astype(bool)


def build_stage2_volumes(manifest: dict, base: Path, stage1_ckpt) -> tuple[list, list]:
    """Unpaired stage-II training volumes: clean X volumes, stage-I Y volumes."""
    generator, _, _ = load_stage1_checkpoint(stage1_ckpt)
    x_vols, y_vols = [], []
    for entry in manifest_subjects(manifest, "x"):
        full, meta = dataio.load_coil_stack(base / entry["full"])
        images = ssos(torch.from_numpy(full.reshape(-1, *full.shape[-3:]))).numpy()
        x_vols.append(_slab_volume_from_slices(images, meta))
    for entry in manifest_subjects(manifest, "y"):
        under, meta = dataio.load_coil_stack(base / entry["under"])
        y_vols.append(stage1_volume(generator, under, meta))
    if not x_vols or not y_vols:
        raise DataError("manifest lacks x or y subjects for stage-II training")
    return x_vols, y_vols


def _manifest_hash(base: Path) -> str:
    return hashlib.sha256((base / "manifest.json").read_bytes()).hexdigest()


def compare_arms(manifest_path, stage1_ckpt, stage2_ckpt, out_dir,
                 stage2_nomip_ckpt=None) -> dict:
    """Evaluate zero-filled / stage-I / stage-I+II arms on held-out subjects.

    Adds a projection-head-free stage-II arm when a checkpoint trained
    without the max-pool head is supplied. Every arm sees identical inputs;
    the dataset manifest hash is recorded per arm.
    """
    manifest, base = load_manifest(manifest_path)
    tests = manifest_subjects(manifest, "test")
    if not tests:
        raise DataError("manifest has no held-out test subjects")
    generator, _, _ = load_stage1_checkpoint(stage1_ckpt)
    gen_g, _, stage2_cfg = load_stage2_checkpoint(stage2_ckpt)
    depth = stage2_cfg["settings"]["depth"]
    arms = {"zero_filled": None, "stage1": None, "stage1+2": None}
    nomip = None
    if stage2_nomip_ckpt is not None:
        nomip, _, nomip_cfg = load_stage2_checkpoint(stage2_nomip_ckpt)
        if nomip_cfg.get("mip_head_enabled", True):
            raise ConfigError("stage2_nomip_ckpt was trained with the max-pool head enabled")
        arms["stage1+2_no_maxpool_head"] = None

    vessel_floor = manifest.get("vessel_floor", 0.85)
    digest = _manifest_hash(base)
    report = {"manifest_hash": {arm: digest for arm in arms}, "records": []}
    for entry in tests:
        under, meta, label, vessels = _load_test_subject(entry, base)
        volumes = {
            "zero_filled": zero_filled_volume(under, meta),
            "stage1": stage1_volume(generator, under, meta),
        }
        volumes["stage1+2"] = refine_volume(gen_g, volumes["stage1"], depth)
        if nomip is not None:
            nomip_depth = nomip_cfg["settings"]["depth"]
            volumes["stage1+2_no_maxpool_head"] = refine_volume(
                nomip, volumes["stage1"], nomip_depth)
        for arm, vol in volumes.items():
            for record in evaluate_volume(vol, label, entry["id"], vessels, vessel_floor):
                report["records"].append({"arm": arm, **record.__dict__})

    out_dir = Path(out_dir)
    dataio.save_json(out_dir / "arms_report.json", report)
    _write_arm_csv(out_dir / "arms_report.csv", report["records"])
    return report


def _write_arm_csv(path, records) -> None:
    lines = ["arm,identifier,image_type,psnr,ssim"]
    for r in records:
        lines.append(f"{r['arm']},{r['identifier']},{r['image_type']},"
                     f"{r['psnr']:.4f},{r['ssim']:.6f}")
    dataio.atomic_write_text(path, "\n".join(lines) + "\n")


def ablate_depth(manifest_path, stage1_ckpt, base_settings: Stage2Settings, out_dir,
                 depths=(1, 3, 5, 7, 9)) -> dict:
    """Train the refinement stage once per window depth and tabulate metrics.

    Depth 1 has no depth axis to pool over, so its run trains without the
    projection head (recorded in the run log). Emits a CSV shaped as
    2 image types x 2 metrics rows by one column per depth.
    """
    manifest, base = load_manifest(manifest_path)
    x_vols, y_vols = build_stage2_volumes(manifest, base, stage1_ckpt)
    generator, _, _ = load_stage1_checkpoint(stage1_ckpt)
    tests = manifest_subjects(manifest, "test")
    if not tests:
        raise DataError("manifest has no held-out test subjects")
    out_dir = Path(out_dir)

    table = {"MIP": {"PSNR": {}, "SSIM": {}}, "MRA": {"PSNR": {}, "SSIM": {}}}
    run_log = {}
    for depth in depths:
        settings = replace(base_settings, depth=int(depth), run_id=f"depth_{depth}",
                           use_mip_head=(depth > 1))
        result = train_stage2(x_vols, y_vols, settings, out_dir)
        gen_g, _, _ = load_stage2_checkpoint(result.checkpoint_dir)
        run_log[str(depth)] = {
            "checkpoint": str(result.checkpoint_dir),
            "steps": result.steps,
            "mip_head_enabled": settings.use_mip_head,
        }
        mra_psnr, mra_ssim, mip_psnr, mip_ssim = [], [], [], []
        for entry in tests:
            under, meta, label, _ = _load_test_subject(entry, base)
            refined = refine_volume(gen_g, stage1_volume(generator, under, meta), depth)
            mra, mip_rec = evaluate_volume(refined, label, entry["id"])
            mra_psnr.append(mra.psnr)
            mra_ssim.append(mra.ssim)
            mip_psnr.append(mip_rec.psnr)
            mip_ssim.append(mip_rec.ssim)
        table["MRA"]["PSNR"][str(depth)] = float(np.mean(mra_psnr))
        table["MRA"]["SSIM"][str(depth)] = float(np.mean(mra_ssim))
        table["MIP"]["PSNR"][str(depth)] = float(np.mean(mip_psnr))
        table["MIP"]["SSIM"][str(depth)] = float(np.mean(mip_ssim))

    report = {"depths": [int(d) for d in depths], "table": table, "runs": run_log}
    dataio.save_json(out_dir / "ablation.json", report)
    _write_ablation_csv(out_dir / "ablation.csv", report)
    return report


def _write_ablation_csv(path, report) -> None:
    depths = [str(d) for d in report["depths"]]
    lines = ["image_type,metric," + ",".join(depths)]
    for image_type in ("MIP", "MRA"):
        for metric in ("PSNR", "SSIM"):
            row = report["table"][image_type][metric]
            fmt = "{:.2f}" if metric == "PSNR" else "{:.4f}"
            lines.append(f"{image_type},{metric}," + ",".join(fmt.format(row[d]) for d in depths))
    dataio.atomic_write_text(path, "\n".join(lines) + "\n")


def undersample_kspace(input_path, mask_path, out_path) -> dict:
    """Apply a sampling mask to stored k-space and write the result.

    The input is interpreted as k-space on the mask's grid; masking is a
    plain elementwise multiply, and the output sidecar records the mask
    provenance.
    """
    data, meta = dataio.load_coil_stack(input_path)
    mask = dataio.load_mask(mask_path)
    keep = mask.numpy().astype(np.float32)
    if data.shape[-2:] != keep.shape:
        raise GeometryError(
            f"k-space {data.shape} does not match mask {keep.shape}"
        )
    masked = (data * keep).astype(np.complex64)
    extra = {k: v for k, v in meta.items()
             if k not in ("format", "shape", "dtype", "encoding")}
    extra.update({"mask_file": str(mask_path), "mask_seed": mask.seed,
                  "mask_accel": mask.accel})
    out = dataio.save_coil_stack(out_path, masked, **extra)
    return {"output": str(out), "kept_samples": int(keep.sum())}
