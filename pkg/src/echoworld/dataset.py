"""Dataset generation and loading: seeded phantom scans split train/test.

Each scan plays the role of one patient: it gets its own phantom seed, so
the train/test split never shares a phantom. The manifest records scan ids,
seeds and config hashes; downstream commands validate those hashes before
consuming the data.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, config_hash, section_hash
from .phantom import (
    ImageSpec,
    PhantomConfig,
    TrajectoryConfig,
    build_phantom,
    generate_scan,
)
from .scan_store import GENERATOR_VERSION, PLANE_IDS, Scan, load_scan, save_scan

__all__ = [
    "TEST_SEED_OFFSET",
    "phantom_config_from",
    "image_spec_from",
    "generate_dataset",
    "load_split",
    "load_manifest",
    "validate_data_compat",
]

TEST_SEED_OFFSET = 10_000
MANIFEST_FILE = "manifest.json"


def phantom_config_from(cfg: ExperimentConfig) -> PhantomConfig:
    p = cfg.phantom
    return PhantomConfig(
        resolution=p.resolution,
        extent_mm=p.extent_mm,
        base_intensity=p.base_intensity,
        smooth_sigma_vox=p.smooth_sigma_vox,
    )


def image_spec_from(cfg: ExperimentConfig) -> ImageSpec:
    return ImageSpec(
        height=cfg.encoder.image_size,
        width=cfg.encoder.image_size,
        extent_mm=cfg.phantom.image_extent_mm,
        noise=cfg.phantom.noise,
    )


def _make_scan(cfg: ExperimentConfig, scan_seed: int) -> Scan:
    phantom = build_phantom(phantom_config_from(cfg), seed=scan_seed)
    rng = np.random.default_rng(scan_seed)
    order = tuple(PLANE_IDS[i] for i in rng.permutation(len(PLANE_IDS)))
    traj = TrajectoryConfig(
        duration=cfg.phantom.scan_duration,
        fps=cfg.phantom.scan_fps,
        visit_order=order,
        jitter_trans_mm=(cfg.phantom.jitter_trans_mm,) * 3,
        jitter_rot_deg=(cfg.phantom.jitter_rot_deg,) * 3,
        smoothing_window=cfg.phantom.smoothing_window,
        seed=scan_seed,
    )
    return generate_scan(phantom, traj, image_spec_from(cfg))


def generate_dataset(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    n_train: int,
    n_test: int,
    seed: int,
    force: bool = False,
) -> dict:
    """Write train/ and test/ scan directories plus a manifest."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    if n_train <= 0 or n_test <= 0:
        raise ConfigError("train and test scan counts must be positive")
    train_seeds = [seed + i for i in range(n_train)]
    test_seeds = [seed + TEST_SEED_OFFSET + j for j in range(n_test)]
    if set(train_seeds) & set(test_seeds):
        raise ConfigError(
            "train and test phantom-seed ranges overlap; scans would share patients"
        )
    splits = {"train": train_seeds, "test": test_seeds}
    manifest: dict = {
        "seed": seed,
        "generator_version": GENERATOR_VERSION,
        "config_hash": config_hash(cfg),
        "phantom_hash": section_hash(cfg, "phantom"),
        "image_size": cfg.encoder.image_size,
    }
    for split, seeds in splits.items():
        ids = []
        for s in seeds:
            scan = _make_scan(cfg, s)
            save_scan(scan, out / split / scan.scan_id)
            ids.append(scan.scan_id)
        manifest[f"{split}_scans"] = ids
        manifest[f"{split}_seeds"] = seeds
    with open(out / MANIFEST_FILE, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_manifest(data_root: str | Path) -> dict:
    path = Path(data_root) / MANIFEST_FILE
    if not path.exists():
        raise ConfigError(f"no dataset manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def load_split(data_root: str | Path, split: str) -> list[Scan]:
    manifest = load_manifest(data_root)
    ids = manifest.get(f"{split}_scans")
    if ids is None:
        raise ConfigError(f"manifest has no split {split!r}")
    return [load_scan(Path(data_root) / split / scan_id) for scan_id in ids]


def validate_data_compat(cfg: ExperimentConfig, data_root: str | Path) -> None:
    """Refuse to pair a dataset with an incompatible phantom/image config."""
    manifest = load_manifest(data_root)
    if manifest.get("phantom_hash") != section_hash(cfg, "phantom"):
        raise ConfigError(
            "dataset phantom configuration does not match the current config"
        )
    if manifest.get("image_size") != cfg.encoder.image_size:
        raise ConfigError(
            f"dataset image size {manifest.get('image_size')} does not match "
            f"encoder image size {cfg.encoder.image_size}"
        )
