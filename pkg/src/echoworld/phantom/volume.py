"""Procedural heart-phantom volume: a seeded stand-in for clinical anatomy.

The phantom is a scalar intensity field on a regular grid. Chambers are
dark ellipsoids, walls/septa bright shells and slabs, vessels mid-bright
tubes, so that slices taken from different probe poses look visually
distinct. Same (config, seed) always regenerates a bit-identical volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..pose_algebra import rotation_matrix

__all__ = [
    "Ellipsoid",
    "Shell",
    "Tube",
    "HeartLayout",
    "PhantomConfig",
    "Phantom",
    "PhantomError",
    "default_heart_layout",
    "rasterize_structures",
    "build_phantom",
]

MIN_RESOLUTION = 32
MIN_STRUCTURES = 6
MIN_INTENSITY_STD = 0.05


class PhantomError(Exception):
    """Raised when a phantom cannot satisfy its construction contract."""


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    euler_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    intensity: float = 0.5


@dataclass(frozen=True)
class Shell:
    """The region between an ellipsoid surface and the same surface grown
    outward by ``thickness_mm``."""

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    thickness_mm: float
    euler_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    intensity: float = 0.8


@dataclass(frozen=True)
class Tube:
    """A capsule: all points within ``radius_mm`` of the segment p0-p1."""

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius_mm: float
    intensity: float = 0.5


Structure = Ellipsoid | Shell | Tube


@dataclass(frozen=True)
class HeartLayout:
    """Jittered anatomical frame the structures and standard planes share."""

    lv_center: np.ndarray  # mm
    lv_axis: np.ndarray  # unit vector, apex -> base
    lateral: np.ndarray  # unit vector toward the right-ventricle side
    lv_semi: tuple[float, float, float]
    wall_mm: float
    aorta_dir: np.ndarray  # unit vector

    @property
    def up(self) -> np.ndarray:
        return np.cross(self.lv_axis, self.lateral)

    @property
    def base_point(self) -> np.ndarray:
        return self.lv_center + self.lv_axis * self.lv_semi[2]

    @property
    def apex_point(self) -> np.ndarray:
        return self.lv_center - self.lv_axis * self.lv_semi[2]


@dataclass(frozen=True)
class PhantomConfig:
    resolution: int = 128
    extent_mm: float = 160.0
    base_intensity: float = 0.28
    smooth_sigma_vox: float = 1.0
    structures: tuple[Structure, ...] | None = None  # None -> seeded heart


@dataclass
class Phantom:
    volume: np.ndarray  # (R, R, R) float32 in [0, 1]
    labels: np.ndarray  # (R, R, R) uint8, 0 = background
    extent_mm: float
    structures: tuple[Structure, ...]
    seed: int
    layout: HeartLayout | None = None
    config: PhantomConfig = field(default_factory=PhantomConfig)

    @property
    def resolution(self) -> int:
        return self.volume.shape[0]

    @property
    def voxel_mm(self) -> float:
        return self.extent_mm / self.resolution

    def world_to_voxel(self, points_mm: np.ndarray) -> np.ndarray:
        """Map world mm coordinates to fractional voxel indices.

        Voxel centers sit at (i + 0.5) * voxel - extent/2.
        """
        return (np.asarray(points_mm) + self.extent_mm / 2.0) / self.voxel_mm - 0.5

    def contains_point(self, point_mm) -> bool:
        half = self.extent_mm / 2.0
        p = np.asarray(point_mm, dtype=np.float64)
        return bool(np.all(np.abs(p) <= half))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def default_heart_layout(rng: np.random.Generator) -> HeartLayout:
    """Seeded anatomical layout; jitter keeps phantoms patient-distinct."""
    lv_center = np.array([-8.0, 2.0, 4.0]) + rng.uniform(-2.5, 2.5, 3)
    axis_yaw = 35.0 + rng.uniform(-4, 4)
    axis_elev = 20.0 + rng.uniform(-4, 4)
    ce, se = math.cos(math.radians(axis_elev)), math.sin(math.radians(axis_elev))
    cy, sy = math.cos(math.radians(axis_yaw)), math.sin(math.radians(axis_yaw))
    lv_axis = _unit(np.array([ce * cy, ce * sy, se]))
    # Lateral direction perpendicular to the axis, roughly horizontal.
    lateral = _unit(np.cross(np.array([0.0, 0.0, 1.0]), lv_axis))
    lv_semi = (
        20.0 * (1 + rng.uniform(-0.08, 0.08)),
        19.0 * (1 + rng.uniform(-0.08, 0.08)),
        33.0 * (1 + rng.uniform(-0.08, 0.08)),
    )
    aorta_dir = _unit(lv_axis + 0.45 * np.cross(lv_axis, lateral) + 0.1 * lateral)
    return HeartLayout(
        lv_center=lv_center,
        lv_axis=lv_axis,
        lateral=lateral,
        lv_semi=lv_semi,
        wall_mm=6.5 + rng.uniform(-0.6, 0.6),
        aorta_dir=aorta_dir,
    )


def _ellipsoid_frame(axis: np.ndarray, up_hint: np.ndarray) -> np.ndarray:
    """Rotation matrix with local z along ``axis`` (columns orthonormal)."""
    z = _unit(np.asarray(axis, dtype=np.float64))
    x = np.cross(up_hint, z)
    if np.linalg.norm(x) < 1e-8:
        x = np.cross(np.array([0.0, 1.0, 0.0]), z)
    x = _unit(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def _frame_to_euler(r: np.ndarray) -> tuple[float, float, float]:
    sp = max(-1.0, min(1.0, float(-r[2, 0])))
    pitch = math.degrees(math.asin(sp))
    yaw = math.degrees(math.atan2(r[1, 0], r[0, 0]))
    roll = math.degrees(math.atan2(r[2, 1], r[2, 2]))
    return yaw, pitch, roll


def heart_structures(layout: HeartLayout) -> tuple[Structure, ...]:
    """The structure list for a layout: chambers, walls, vessels, papillaries."""
    a, lat, up = layout.lv_axis, layout.lateral, layout.up
    c = layout.lv_center
    base = layout.base_point
    frame = _ellipsoid_frame(a, up)
    euler = _frame_to_euler(frame)

    rv_center = c + 30.0 * lat + 6.0 * a
    la_center = base + 16.0 * a - 8.0 * up
    ra_center = base + 14.0 * a + 16.0 * lat - 4.0 * up
    pap1 = c - 8.0 * a + 9.0 * up
    pap2 = c - 10.0 * a - 8.0 * up
    aorta0 = base + 4.0 * up
    aorta1 = aorta0 + 38.0 * layout.aorta_dir
    pa0 = rv_center + 18.0 * a
    pa1 = pa0 + 30.0 * _unit(a - 0.8 * lat + 0.5 * up)

    return (
        # bright LV myocardium first, cavity painted on top of it
        Shell(tuple(c), layout.lv_semi, layout.wall_mm, euler, intensity=0.85),
        Ellipsoid(tuple(c), layout.lv_semi, euler, intensity=0.06),
        Shell(tuple(rv_center), (15.0, 13.0, 25.0), 4.5, euler, intensity=0.72),
        Ellipsoid(tuple(rv_center), (15.0, 13.0, 25.0), euler, intensity=0.12),
        # septal slab between the ventricles
        Ellipsoid(
            tuple(c + 19.0 * lat),
            (4.0, 16.0, 27.0),
            _frame_to_euler(_ellipsoid_frame(a, lat)),
            intensity=0.92,
        ),
        Ellipsoid(tuple(la_center), (13.0, 12.0, 11.0), euler, intensity=0.10),
        Ellipsoid(tuple(ra_center), (12.0, 11.0, 10.0), euler, intensity=0.16),
        Tube(tuple(aorta0), tuple(aorta1), 7.0, intensity=0.55),
        Tube(tuple(pa0), tuple(pa1), 6.0, intensity=0.45),
        Ellipsoid(tuple(pap1), (4.0, 4.0, 6.0), euler, intensity=0.75),
        Ellipsoid(tuple(pap2), (4.0, 4.0, 6.0), euler, intensity=0.70),
    )


def _grid_coords(resolution: int, extent_mm: float) -> tuple[np.ndarray, ...]:
    voxel = extent_mm / resolution
    ax = (np.arange(resolution, dtype=np.float64) + 0.5) * voxel - extent_mm / 2.0
    gx = ax[:, None, None]
    gy = ax[None, :, None]
    gz = ax[None, None, :]
    return gx, gy, gz


def _ellipsoid_mask(gx, gy, gz, center, semi_axes, euler_deg, scale=1.0):
    r = rotation_matrix(*euler_deg)
    dx, dy, dz = gx - center[0], gy - center[1], gz - center[2]
    # local coords = R^T . (p - c)
    lx = r[0, 0] * dx + r[1, 0] * dy + r[2, 0] * dz
    ly = r[0, 1] * dx + r[1, 1] * dy + r[2, 1] * dz
    lz = r[0, 2] * dx + r[1, 2] * dy + r[2, 2] * dz
    ax, ay, az = (s * scale for s in semi_axes)
    return (lx / ax) ** 2 + (ly / ay) ** 2 + (lz / az) ** 2 <= 1.0


def _structure_mask(s: Structure, gx, gy, gz) -> np.ndarray:
    if isinstance(s, Ellipsoid):
        return _ellipsoid_mask(gx, gy, gz, s.center, s.semi_axes, s.euler_deg)
    if isinstance(s, Shell):
        outer_axes = tuple(a + s.thickness_mm for a in s.semi_axes)
        outer = _ellipsoid_mask(gx, gy, gz, s.center, outer_axes, s.euler_deg)
        inner = _ellipsoid_mask(gx, gy, gz, s.center, s.semi_axes, s.euler_deg)
        return outer & ~inner
    if isinstance(s, Tube):
        p0 = np.asarray(s.p0, dtype=np.float64)
        d = np.asarray(s.p1, dtype=np.float64) - p0
        dd = float(d @ d)
        dx, dy, dz = gx - p0[0], gy - p0[1], gz - p0[2]
        tproj = (dx * d[0] + dy * d[1] + dz * d[2]) / dd
        tproj = np.clip(tproj, 0.0, 1.0)
        qx = dx - tproj * d[0]
        qy = dy - tproj * d[1]
        qz = dz - tproj * d[2]
        return qx * qx + qy * qy + qz * qz <= s.radius_mm**2
    raise TypeError(f"unknown structure type {type(s)!r}")


def rasterize_structures(
    config: PhantomConfig, structures: tuple[Structure, ...]
) -> tuple[np.ndarray, np.ndarray]:
    """Paint structures into (volume, labels) arrays in list order."""
    res = config.resolution
    gx, gy, gz = _grid_coords(res, config.extent_mm)
    volume = np.full((res, res, res), config.base_intensity, dtype=np.float32)
    labels = np.zeros((res, res, res), dtype=np.uint8)
    for i, s in enumerate(structures):
        mask = _structure_mask(s, gx, gy, gz)
        volume[mask] = s.intensity
        labels[mask] = i + 1
    if config.smooth_sigma_vox > 0:
        volume = gaussian_filter(volume, sigma=config.smooth_sigma_vox)
    np.clip(volume, 0.0, 1.0, out=volume)
    return volume.astype(np.float32), labels


def build_phantom(config: PhantomConfig, seed: int) -> Phantom:
    """Deterministically build a phantom; rejects degenerate configurations."""
    if config.resolution < MIN_RESOLUTION:
        raise PhantomError(
            f"resolution {config.resolution} < {MIN_RESOLUTION}: slices would be featureless"
        )
    rng = np.random.default_rng(seed)
    layout = None
    structures = config.structures
    if structures is None:
        layout = default_heart_layout(rng)
        structures = heart_structures(layout)
    if len(structures) < MIN_STRUCTURES:
        raise PhantomError(
            f"{len(structures)} structures < {MIN_STRUCTURES}: poses would be ambiguous"
        )
    volume, labels = rasterize_structures(config, tuple(structures))
    std = float(volume.std())
    if std <= MIN_INTENSITY_STD:
        raise PhantomError(f"degenerate intensity histogram (std={std:.4f})")
    return Phantom(
        volume=volume,
        labels=labels,
        extent_mm=config.extent_mm,
        structures=tuple(structures),
        seed=seed,
        layout=layout,
        config=config,
    )
