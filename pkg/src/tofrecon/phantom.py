"""Synthetic vessel phantoms, smooth coil sensitivities, and simulated
multi-coil acquisitions.

These stand in for patient data: bright curved tubes (vessels) over a dim
smooth background, acquired through seeded coil maps and undersampling
masks. Every generator is a pure function of its seed. Each phantom carries
its vessel mask so vessel-visibility claims can be checked programmatically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .fourier import forward_operator
from .geometry import assemble_volume, reorient_volume, split_into_slabs
from .masks import make_mask
from .validation import ConfigError, DataError, GeometryError, as_tensor

BACKGROUND_CEIL = 0.35
VESSEL_FLOOR = 0.85


@dataclass
class Phantom:
    """Vessel phantom volume in [0, 1] with its binary vessel mask."""

    volume: np.ndarray  # float32 [Z, H, W]
    vessel_mask: np.ndarray  # bool [Z, H, W]
    seed: int
    vessel_floor: float = VESSEL_FLOOR


@dataclass
class CoilMaps:
    """Smooth complex coil sensitivities, jointly normalized to unit SSoS."""

    maps: np.ndarray  # complex64 [C, H, W]
    seed: int


def _smooth_background(rng: np.random.Generator, z: int, h: int, w: int) -> np.ndarray:
    zz, yy, xx = np.mgrid[0:z, 0:h, 0:w].astype(np.float64)
    vol = np.full((z, h, w), 0.02)
    for _ in range(8):
        cz, cy, cx = rng.uniform(0, z), rng.uniform(0, h), rng.uniform(0, w)
        sz = rng.uniform(0.15, 0.45) * z
        sy = rng.uniform(0.15, 0.45) * h
        sx = rng.uniform(0.15, 0.45) * w
        amp = rng.uniform(0.03, 0.12)
        vol += amp * np.exp(
            -((zz - cz) ** 2 / (2 * sz**2) + (yy - cy) ** 2 / (2 * sy**2) + (xx - cx) ** 2 / (2 * sx**2))
        )
    return np.minimum(vol, BACKGROUND_CEIL)


def _ball_offsets(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    g = np.mgrid[-r : r + 1, -r : r + 1, -r : r + 1]
    inside = (g**2).sum(axis=0) <= radius**2
    return np.stack([g[0][inside], g[1][inside], g[2][inside]], axis=1)


def _trace_vessel(rng: np.random.Generator, shape, radius: float) -> np.ndarray:
    """Rasterize one smooth random tube; returns its boolean mask."""
    z, h, w = shape
    mask = np.zeros(shape, dtype=bool)
    # Start on a random face, heading inward with some transverse motion.
    pos = np.array([rng.uniform(0, z), rng.uniform(0, h), rng.uniform(0, w)])
    axis = rng.integers(0, 3)
    pos[axis] = 0.0 if rng.random() < 0.5 else shape[axis] - 1.0
    direction = rng.normal(size=3)
    direction[axis] = 1.5 if pos[axis] == 0.0 else -1.5
    direction /= np.linalg.norm(direction)
    offsets = _ball_offsets(radius)
    max_steps = int(4 * (z + h + w))
    step = 0.5
    for _ in range(max_steps):
        center = np.rint(pos).astype(int)
        pts = offsets + center
        ok = ((pts >= 0) & (pts < np.array(shape))).all(axis=1)
        pts = pts[ok]
        mask[pts[:, 0], pts[:, 1], pts[:, 2]] = True
        direction = direction + 0.12 * rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        pos = pos + step * direction
        if ((pos < -radius) | (pos > np.array(shape) + radius - 1)).any():
            break
    return mask


def gen_phantom(z: int, h: int, w: int, n_vessels: int = 4, seed: int = 0) -> Phantom:
    """Generate a smooth background plus bright curved tubes, seeded.

    Vessel intensities are drawn from [0.85, 1.0] so they dominate the
    background (capped at 0.35) the way inflowing blood dominates static
    tissue in flow-weighted scans.
    """
    if min(z, h, w) < 8:
        raise ConfigError(f"phantom dims must be >= 8, got {(z, h, w)}")
    if n_vessels < 0:
        raise ConfigError(f"n_vessels must be >= 0, got {n_vessels}")
    rng = np.random.default_rng(seed)
    vol = _smooth_background(rng, z, h, w)
    vessel_mask = np.zeros((z, h, w), dtype=bool)
    for _ in range(n_vessels):
        radius = rng.uniform(1.0, 3.0)
        intensity = rng.uniform(VESSEL_FLOOR, 1.0)
        tube = _trace_vessel(rng, (z, h, w), radius)
        vol = np.where(tube, np.maximum(vol, intensity), vol)
        vessel_mask |= tube
    return Phantom(
        volume=np.clip(vol, 0.0, 1.0).astype(np.float32),
        vessel_mask=vessel_mask,
        seed=seed,
    )


def gen_coilmaps(c: int, h: int, w: int, seed: int = 0) -> CoilMaps:
    """Smooth complex coil profiles normalized so SSoS is 1 everywhere."""
    if c < 1:
        raise ConfigError(f"coil count must be >= 1, got {c}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    maps = np.zeros((c, h, w), dtype=np.complex128)
    for i in range(c):
        angle = 2 * np.pi * i / c + rng.uniform(-0.3, 0.3)
        cy = h / 2 + 0.55 * h * np.sin(angle)
        cx = w / 2 + 0.55 * w * np.cos(angle)
        sigma = 0.6 * max(h, w) * rng.uniform(0.9, 1.1)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        ramp = rng.uniform(-0.02, 0.02) * (yy - h / 2) + rng.uniform(-0.02, 0.02) * (xx - w / 2)
        maps[i] = mag * np.exp(1j * (ramp + rng.uniform(0, 2 * np.pi)))
    norm = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    maps /= norm
    return CoilMaps(maps=maps.astype(np.complex64), seed=seed)


def simulate_slice(
    phantom_slice,
    maps: CoilMaps | np.ndarray,
    mask,
    noise_sigma: float = 0.0,
    noise_seed: int = 0,
):
    """Simulate one multi-coil acquisition of a real-valued slice.

    Returns (fully_sampled, undersampled) complex coil stacks [C, H, W]; the
    undersampled stack is the zero-filled image of the masked k-space.
    Optional complex white noise with std ``noise_sigma`` times the slice
    peak is added to the fully sampled stack before undersampling.
    """
    sl = np.asarray(phantom_slice, dtype=np.float64)
    m = maps.maps if isinstance(maps, CoilMaps) else np.asarray(maps)
    if sl.ndim != 2:
        raise GeometryError(f"phantom slice must be 2-D, got shape {sl.shape}")
    if m.ndim != 3 or m.shape[1:] != sl.shape:
        raise GeometryError(f"coil maps {m.shape} do not match slice {sl.shape}")
    full = (m.astype(np.complex128) * sl[None]).astype(np.complex64)
    if noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        scale = noise_sigma * float(sl.max()) / np.sqrt(2.0)
        noise = rng.normal(size=full.shape) + 1j * rng.normal(size=full.shape)
        full = (full + scale * noise).astype(np.complex64)
    under = forward_operator(torch.from_numpy(full), mask).numpy().astype(np.complex64)
    return full, under


def split_subjects(n_subjects: int, split_seed: int = 0):
    """Disjoint X (fully sampled) / Y (undersampled) subject id split."""
    if n_subjects < 2:
        raise ConfigError(f"need at least 2 subjects for an unpaired split, got {n_subjects}")
    rng = np.random.default_rng(split_seed)
    ids = rng.permutation(n_subjects)
    half = n_subjects // 2
    return sorted(int(i) for i in ids[:half]), sorted(int(i) for i in ids[half:])


@dataclass
class DatasetGeometry:
    """Desk-scale acquisition geometry for synthetic studies."""

    h: int = 64
    w: int = 64
    coils: int = 4
    n_slabs: int = 2
    slab_depth: int = 12
    overlap: int = 4
    n_vessels: int = 4
    plane: str = "axial"

    @property
    def stride(self) -> int:
        return self.slab_depth - self.overlap

    @property
    def z_acq(self) -> int:
        # Slices the acquisition must cover so slabs tile exactly.
        return (self.n_slabs - 1) * self.stride + self.slab_depth

    @property
    def z(self) -> int:
        # Assembled volume depth: each slab contributes its central stride.
        return self.n_slabs * self.stride


def _simulate_subject(subject_seed: int, geom: DatasetGeometry, mask, noise_sigma: float):
    """Simulate one subject: slab coil stacks plus clean label volumes."""
    phantom = gen_phantom(geom.z_acq, geom.h, geom.w, geom.n_vessels, seed=subject_seed)
    maps = gen_coilmaps(geom.coils, geom.h, geom.w, seed=subject_seed + 1)
    acq = reorient_volume(torch.from_numpy(phantom.volume), geom.plane)
    vessels = reorient_volume(torch.from_numpy(phantom.vessel_mask.astype(np.float32)), geom.plane)
    slabs = split_into_slabs(acq, geom.n_slabs, geom.slab_depth, geom.overlap)

    full = np.zeros((geom.n_slabs, geom.slab_depth, geom.coils, geom.h, geom.w), np.complex64)
    under = np.zeros_like(full)
    for s in range(geom.n_slabs):
        for d in range(geom.slab_depth):
            full[s, d], under[s, d] = simulate_slice(
                slabs.data[s, d].numpy(), maps, mask,
                noise_sigma=noise_sigma, noise_seed=subject_seed * 1013 + s * 101 + d,
            )
    label = assemble_volume(slabs).numpy()
    vessel_label = assemble_volume(
        split_into_slabs(vessels, geom.n_slabs, geom.slab_depth, geom.overlap)
    ).numpy() > 0.5
    return full, under, label, vessel_label, phantom


def build_unpaired_dataset(
    out_dir,
    n_subjects: int = 12,
    split_seed: int = 0,
    accel: float = 4,
    n_test: int = 4,
    acs_fraction: float = 0.08,
    pf_fraction: float = 0.75,
    noise_sigma: float = 0.01,
    geometry: DatasetGeometry | None = None,
) -> dict:
    """Write an unpaired synthetic dataset and return its manifest.

    Training subjects are split into disjoint X (fully sampled stacks kept)
    and Y (undersampled stacks kept) domains; no phantom contributes to
    both. Held-out test subjects store undersampled stacks plus clean label
    and vessel volumes. Fully deterministic in ``split_seed``.
    """
    from . import dataio  # local import: dataio does not depend on phantom

    geom = geometry or DatasetGeometry()
    out_dir = Path(out_dir)
    x_ids, y_ids = split_subjects(n_subjects, split_seed)
    mask = make_mask(geom.h, geom.w, accel, acs_fraction, pf_fraction, seed=split_seed)
    dataio.save_mask(out_dir / "mask.bin", mask)

    subjects = []
    roles = [("x", i) for i in x_ids] + [("y", i) for i in y_ids] + [
        ("test", n_subjects + i) for i in range(n_test)
    ]
    for domain, index in roles:
        sid = f"s{index:02d}"
        subject_seed = split_seed * 100003 + index * 997 + 1
        full, under, label, vessel_label, _ = _simulate_subject(
            subject_seed, geom, mask, noise_sigma
        )
        entry = {"id": sid, "domain": domain, "seed": subject_seed}
        base = out_dir / "subjects"
        slab_meta = {
            "axes": "slab slice coil row col",
            "seed": subject_seed,
            "n_slabs": geom.n_slabs,
            "slab_depth": geom.slab_depth,
            "overlap": geom.overlap,
            "keep_center": geom.stride,
        }
        if domain == "x":
            entry["full"] = str(Path("subjects") / f"{sid}_full.bin")
            dataio.save_coil_stack(base / f"{sid}_full.bin", full, **slab_meta)
        else:
            entry["under"] = str(Path("subjects") / f"{sid}_under.bin")
            dataio.save_coil_stack(base / f"{sid}_under.bin", under,
                                   accel=accel, **slab_meta)
        if domain == "test":
            entry["label"] = str(Path("subjects") / f"{sid}_label.bin")
            entry["vessels"] = str(Path("subjects") / f"{sid}_vessels.bin")
            dataio.save_volume(base / f"{sid}_label.bin", label, seed=subject_seed)
            dataio.save_volume(base / f"{sid}_vessels.bin", vessel_label.astype(np.float32),
                               seed=subject_seed, content="vessel mask (0/1)")
        subjects.append(entry)

    manifest = {
        "kind": "tofrecon-dataset",
        "split_seed": split_seed,
        "accel": accel,
        "acs_fraction": acs_fraction,
        "pf_fraction": pf_fraction,
        "noise_sigma": noise_sigma,
        "vessel_floor": VESSEL_FLOOR,
        "geometry": asdict(geom),
        "mask": "mask.bin",
        "subjects": subjects,
    }
    dataio.save_json(out_dir / "manifest.json", manifest)
    return manifest


def load_manifest(path):
    """Read a dataset manifest; returns (manifest dict, base directory)."""
    from . import dataio

    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = dataio.load_json(path)
    if manifest.get("kind") != "tofrecon-dataset":
        raise DataError(f"{path} is not a dataset manifest")
    return manifest, path.parent


def manifest_subjects(manifest: dict, domain: str):
    return [s for s in manifest["subjects"] if s["domain"] == domain]


def load_stage1_slices(manifest: dict, base: Path):
    """Flatten slab stacks into per-domain slice arrays for stage-I training.

    Returns (x_slices [Nx, C, H, W], y_slices [Ny, C, H, W], mask).
    """
    from . import dataio

    xs, ys = [], []
    for entry in manifest_subjects(manifest, "x"):
        arr, _ = dataio.load_coil_stack(base / entry["full"])
        xs.append(arr.reshape(-1, *arr.shape[-3:]))
    for entry in manifest_subjects(manifest, "y"):
        arr, _ = dataio.load_coil_stack(base / entry["under"])
        ys.append(arr.reshape(-1, *arr.shape[-3:]))
    if not xs or not ys:
        raise DataError("manifest must contain both x-domain and y-domain subjects")
    mask = dataio.load_mask(base / manifest["mask"])
    return np.concatenate(xs), np.concatenate(ys), mask
