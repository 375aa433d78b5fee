"""Render 2D "ultrasound" images by slicing the phantom volume.

The image plane is anchored at the probe position; its row/column axes are
the probe frame's axial/lateral axes. Sampling is trilinear with
out-of-volume contributions treated as zero. The inner loop ships as a
numba kernel plus a numpy fallback (see :mod:`echoworld.accel`); both
evaluate the interpolation in the same float32 expression order so results
are bit-identical across backends.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import accel
from ..pose_algebra import Pose
from .volume import Phantom

__all__ = ["ImageSpec", "slice_image", "plane_points", "sample_volume"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageSpec:
    """Raster geometry and speckle strength of rendered slices."""

    height: int = 64
    width: int = 64
    extent_mm: float = 110.0
    noise: float = 0.25

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image dimensions must be positive")
        if self.extent_mm <= 0:
            raise ValueError("plane extent must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")


@accel.njit(cache=True)
def _trilinear_kernel(volume, pts, out):  # pragma: no cover - jitted
    # float64 weights/accumulation keep mirror-symmetric samples within 1e-6
    nx, ny, nz = volume.shape
    for p in range(pts.shape[0]):
        x = pts[p, 0]
        y = pts[p, 1]
        z = pts[p, 2]
        xf = np.floor(x)
        yf = np.floor(y)
        zf = np.floor(z)
        fx = x - xf
        fy = y - yf
        fz = z - zf
        x0 = int(xf)
        y0 = int(yf)
        z0 = int(zf)
        x1 = x0 + 1
        y1 = y0 + 1
        z1 = z0 + 1
        okx0 = 0 <= x0 < nx
        okx1 = 0 <= x1 < nx
        oky0 = 0 <= y0 < ny
        oky1 = 0 <= y1 < ny
        okz0 = 0 <= z0 < nz
        okz1 = 0 <= z1 < nz
        c000 = np.float64(volume[x0, y0, z0]) if okx0 and oky0 and okz0 else 0.0
        c001 = np.float64(volume[x0, y0, z1]) if okx0 and oky0 and okz1 else 0.0
        c010 = np.float64(volume[x0, y1, z0]) if okx0 and oky1 and okz0 else 0.0
        c011 = np.float64(volume[x0, y1, z1]) if okx0 and oky1 and okz1 else 0.0
        c100 = np.float64(volume[x1, y0, z0]) if okx1 and oky0 and okz0 else 0.0
        c101 = np.float64(volume[x1, y0, z1]) if okx1 and oky0 and okz1 else 0.0
        c110 = np.float64(volume[x1, y1, z0]) if okx1 and oky1 and okz0 else 0.0
        c111 = np.float64(volume[x1, y1, z1]) if okx1 and oky1 and okz1 else 0.0
        c00 = c000 * (1.0 - fz) + c001 * fz
        c01 = c010 * (1.0 - fz) + c011 * fz
        c10 = c100 * (1.0 - fz) + c101 * fz
        c11 = c110 * (1.0 - fz) + c111 * fz
        c0 = c00 * (1.0 - fy) + c01 * fy
        c1 = c10 * (1.0 - fy) + c11 * fy
        out[p] = c0 * (1.0 - fx) + c1 * fx
    return out


def _trilinear_numpy(volume: np.ndarray, pts: np.ndarray, out: np.ndarray) -> np.ndarray:
    nx, ny, nz = volume.shape
    base_f = np.floor(pts)
    frac = pts - base_f
    base = base_f.astype(np.int64)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]

    def corner(dx, dy, dz):
        xi = base[:, 0] + dx
        yi = base[:, 1] + dy
        zi = base[:, 2] + dz
        inside = (xi >= 0) & (xi < nx) & (yi >= 0) & (yi < ny) & (zi >= 0) & (zi < nz)
        vals = volume[
            np.clip(xi, 0, nx - 1), np.clip(yi, 0, ny - 1), np.clip(zi, 0, nz - 1)
        ]
        return np.where(inside, vals.astype(np.float64), 0.0)

    c00 = corner(0, 0, 0) * (1.0 - fz) + corner(0, 0, 1) * fz
    c01 = corner(0, 1, 0) * (1.0 - fz) + corner(0, 1, 1) * fz
    c10 = corner(1, 0, 0) * (1.0 - fz) + corner(1, 0, 1) * fz
    c11 = corner(1, 1, 0) * (1.0 - fz) + corner(1, 1, 1) * fz
    c0 = c00 * (1.0 - fy) + c01 * fy
    c1 = c10 * (1.0 - fy) + c11 * fy
    out[:] = c0 * (1.0 - fx) + c1 * fx
    return out


def sample_volume(volume: np.ndarray, pts_vox: np.ndarray) -> np.ndarray:
    """Trilinear samples at fractional voxel coordinates, float64."""
    volume = np.ascontiguousarray(volume, dtype=np.float32)
    pts = np.ascontiguousarray(pts_vox, dtype=np.float64)
    out = np.empty(pts.shape[0], dtype=np.float64)
    if accel.numba_enabled():
        return _trilinear_kernel(volume, pts, out)
    return _trilinear_numpy(volume, pts, out)


def plane_points(pose: Pose, spec: ImageSpec) -> np.ndarray:
    """World-mm sample positions of each pixel, shape (H, W, 3).

    Pixel (row v, col u) sits at origin + u'*lateral + v'*axial where the
    lateral/axial axes are the first two columns of the probe rotation.
    """
    r = pose.rotation()
    lateral, axial = r[:, 0], r[:, 1]
    du = spec.extent_mm / spec.width
    dv = spec.extent_mm / spec.height
    us = (np.arange(spec.width, dtype=np.float64) - (spec.width - 1) / 2.0) * du
    vs = (np.arange(spec.height, dtype=np.float64) - (spec.height - 1) / 2.0) * dv
    origin = pose.translation
    return (
        origin[None, None, :]
        + vs[:, None, None] * axial[None, None, :]
        + us[None, :, None] * lateral[None, None, :]
    )


def slice_image(
    phantom: Phantom,
    pose: Pose,
    spec: ImageSpec,
    noise_seed: int = 0,
    with_flag: bool = False,
):
    """Sample the phantom on the probe plane; float32 image in [0, 1].

    Speckle is multiplicative, image * (1 + noise * g) with g drawn from a
    generator seeded by ``noise_seed``, then clipped. A plane center outside
    the volume yields an all-zero image and a warning (probe lost contact);
    with ``with_flag=True`` the in-volume flag is returned alongside.
    """
    in_volume = phantom.contains_point(pose.translation)
    if not in_volume:
        log.warning(
            "probe plane center %s outside phantom volume; returning empty image",
            np.round(pose.translation, 2).tolist(),
        )
        img = np.zeros((spec.height, spec.width), dtype=np.float32)
        return (img, False) if with_flag else img

    pts = phantom.world_to_voxel(plane_points(pose, spec))
    img = sample_volume(phantom.volume, pts.reshape(-1, 3)).reshape(
        spec.height, spec.width
    )
    if spec.noise > 0:
        g = np.random.default_rng(noise_seed).standard_normal(img.shape)
        img = img * (1.0 + spec.noise * g)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return (img, True) if with_flag else img


def quantize_image(img: np.ndarray) -> np.ndarray:
    """Float [0,1] image to the uint8 representation scans store on disk."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
