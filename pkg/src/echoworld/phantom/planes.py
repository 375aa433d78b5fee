"""Canonical standard-plane poses of a generated phantom.

Ten named planes are derived from the phantom's anatomical layout: a
short-axis stack perpendicular to the ventricular long axis, plus long-axis
and apical views that contain it at different azimuths. Frames are built
with a horizontal lateral axis, so plane poses carry pitch ~= 0 and the
trajectory generator stays far from gimbal lock by construction.
"""

from __future__ import annotations

import math

import numpy as np

from ..pose_algebra import Pose, pose_from_rotation
from ..scan_store import PLANE_IDS
from .volume import Phantom, PhantomError

__all__ = ["standard_plane_poses", "pose_separation", "plane_structure_count"]

MIN_TRANS_SEP_MM = 5.0
MIN_ROT_SEP_DEG = 10.0
MIN_STRUCTURES_PER_PLANE = 2


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize zero vector")
    return v / n


def _rotate_about(v: np.ndarray, axis: np.ndarray, deg: float) -> np.ndarray:
    axis = _unit(axis)
    th = math.radians(deg)
    return (
        v * math.cos(th)
        + np.cross(axis, v) * math.sin(th)
        + axis * (axis @ v) * (1.0 - math.cos(th))
    )


def plane_pose(origin: np.ndarray, normal: np.ndarray) -> Pose:
    """Probe pose whose image plane has the given origin and normal.

    The lateral (image column) axis is chosen horizontal, which pins the
    in-plane orientation and keeps pitch at zero.
    """
    n = _unit(np.asarray(normal, dtype=np.float64))
    lateral = np.cross(np.array([0.0, 0.0, 1.0]), n)
    if np.linalg.norm(lateral) < 1e-6:
        lateral = np.cross(np.array([0.0, 1.0, 0.0]), n)
    lateral = _unit(lateral)
    axial = np.cross(n, lateral)
    r = np.stack([lateral, axial, n], axis=1)
    return pose_from_rotation(r, origin)


def pose_separation(a: Pose, b: Pose) -> tuple[float, float]:
    """Euclidean translation distance (mm) and geodesic rotation angle (deg)."""
    trans = float(np.linalg.norm(a.translation - b.translation))
    rel = a.rotation() @ b.rotation().T
    c = (float(np.trace(rel)) - 1.0) / 2.0
    rot = math.degrees(math.acos(min(1.0, max(-1.0, c))))
    return trans, rot


def plane_structure_count(phantom: Phantom, pose: Pose, n_samples: int = 96) -> int:
    """Distinct structure labels the plane crosses (nearest-neighbor lookup)."""
    r = pose.rotation()
    lateral, axial = r[:, 0], r[:, 1]
    half = phantom.extent_mm * 0.3
    us = np.linspace(-half, half, n_samples)
    pts = (
        pose.translation[None, None, :]
        + us[:, None, None] * lateral[None, None, :]
        + us[None, :, None] * axial[None, None, :]
    ).reshape(-1, 3)
    vox = np.round(phantom.world_to_voxel(pts)).astype(np.int64)
    res = phantom.resolution
    inside = np.all((vox >= 0) & (vox < res), axis=1)
    labels = phantom.labels[tuple(vox[inside].T)]
    return len(set(labels[labels > 0].tolist()))


def standard_plane_poses(phantom: Phantom) -> dict[str, Pose]:
    """Map each canonical plane id to a probe pose on this phantom.

    Fails loudly when the derived poses violate the pairwise-separation or
    structure-coverage constraints.
    """
    layout = phantom.layout
    if layout is None:
        raise PhantomError(
            "phantom was built from a custom structure list; no anatomical "
            "layout to derive standard planes from"
        )
    a = layout.lv_axis
    up = layout.up
    c = layout.lv_center

    def apical_normal(azimuth_deg: float) -> np.ndarray:
        # plane contains the long axis; normal rotates about it
        return _unit(_rotate_about(up, a, azimuth_deg))

    poses: dict[str, Pose] = {}
    # Short-axis stack: normals along the long axis, stations along it.
    poses["PSAX-AV"] = plane_pose(c + 38.0 * a, a)
    poses["PSAX-PV"] = plane_pose(
        c + 30.0 * a, _rotate_about(a, layout.lateral, 15.0)
    )
    poses["PSAX-MV"] = plane_pose(c + 18.0 * a, a)
    poses["PSAX-PAP"] = plane_pose(c - 2.0 * a, a)
    poses["PSAX-APEX"] = plane_pose(c - 24.0 * a, a)
    # Long-axis and apical family: planes containing the long axis.
    poses["PLAX"] = plane_pose(c + 2.0 * layout.aorta_dir, apical_normal(55.0))
    poses["A4C"] = plane_pose(c, apical_normal(0.0))
    poses["A5C"] = plane_pose(
        c + 6.0 * a, _rotate_about(apical_normal(0.0), layout.lateral, 12.0)
    )
    poses["A3C"] = plane_pose(c, apical_normal(135.0))
    poses["A2C"] = plane_pose(c, apical_normal(90.0))

    result = {plane: poses[plane] for plane in PLANE_IDS}

    ids = list(result)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            trans, rot = pose_separation(result[ids[i]], result[ids[j]])
            if trans < MIN_TRANS_SEP_MM and rot < MIN_ROT_SEP_DEG:
                raise PhantomError(
                    f"planes {ids[i]} and {ids[j]} are too close "
                    f"({trans:.2f} mm, {rot:.2f} deg)"
                )
    for plane, pose in result.items():
        count = plane_structure_count(phantom, pose)
        if count < MIN_STRUCTURES_PER_PLANE:
            raise PhantomError(
                f"plane {plane} intersects only {count} structures"
            )
    return result
