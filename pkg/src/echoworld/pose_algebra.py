"""Rigid-transform arithmetic on 6-DOF probe poses.

A pose is a translation (x, y, z) in millimeters plus an intrinsic
Z-Y'-X'' Euler rotation (yaw, pitch, roll) in degrees. All composition is
performed on 4x4 homogeneous matrices; the Euler triplet is only a boundary
representation, so the convention affects nothing but conversion at the
edges. Angles are always kept wrapped to (-180, 180].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose",
    "compose",
    "inverse",
    "relative",
    "guidance_target",
    "pose_error",
    "wrap_angle",
    "wrap_angles",
    "rotation_matrix",
    "pose_from_rotation",
    "is_near_gimbal",
    "GIMBAL_PITCH_DEG",
]

GIMBAL_PITCH_DEG = 89.0

_ORTHO_TOL = 1e-8


def wrap_angle(deg: float) -> float:
    """Wrap an angle in degrees into the canonical range (-180, 180]."""
    r = math.fmod(deg + 180.0, 360.0)
    if r <= 0.0:
        r += 360.0
    return r - 180.0


def wrap_angles(deg: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle` for arrays of degrees."""
    r = np.mod(np.asarray(deg, dtype=np.float64) + 180.0, 360.0)
    return np.where(r == 0.0, 180.0, r - 180.0)


@dataclass(frozen=True)
class Pose:
    """A 6-DOF rigid transform: probe state or a relative movement.

    Translations are millimeters, angles degrees. Construction wraps the
    angles, so every `Pose` is canonical by the time anyone reads it.
    """

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "pitch", wrap_angle(float(self.pitch)))
        object.__setattr__(self, "roll", wrap_angle(float(self.roll)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (6,):
            raise ValueError(f"pose vector must have shape (6,), got {v.shape}")
        return cls(*v.tolist())

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.z, self.yaw, self.pitch, self.roll],
            dtype=np.float64,
        )

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def rotation(self) -> np.ndarray:
        """The 3x3 rotation block of the homogeneous matrix."""
        return rotation_matrix(self.yaw, self.pitch, self.roll)

    def to_matrix(self) -> np.ndarray:
        """The 4x4 homogeneous matrix for this pose."""
        m = np.eye(4, dtype=np.float64)
        m[:3, :3] = self.rotation()
        m[:3, 3] = (self.x, self.y, self.z)
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        """Convert a valid 4x4 homogeneous matrix back to a pose.

        At gimbal lock (|pitch| = 90 deg) the yaw/roll split is ambiguous;
        roll is set to 0 and the remaining rotation folded into yaw.
        """
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        if not np.allclose(m[3], (0.0, 0.0, 0.0, 1.0), atol=_ORTHO_TOL):
            raise ValueError("bottom row of homogeneous matrix must be [0,0,0,1]")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("rotation block is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-6):
            raise ValueError("rotation block must have determinant +1")

        sp = -r[2, 0]
        sp = min(1.0, max(-1.0, float(sp)))
        if abs(sp) >= 1.0 - 1e-12:
            # Gimbal lock: roll := 0, residual rotation folded into yaw.
            pitch = math.copysign(90.0, sp)
            roll = 0.0
            if sp > 0.0:
                yaw = math.degrees(math.atan2(-r[0, 1], r[0, 2]))
            else:
                yaw = math.degrees(math.atan2(-r[0, 1], -r[0, 2]))
        else:
            pitch = math.degrees(math.asin(sp))
            yaw = math.degrees(math.atan2(r[1, 0], r[0, 0]))
            roll = math.degrees(math.atan2(r[2, 1], r[2, 2]))
        return cls(m[0, 3], m[1, 3], m[2, 3], yaw, pitch, roll)


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation matrix for intrinsic Z-Y'-X'' Euler angles in degrees."""
    cy, sy = math.cos(math.radians(yaw)), math.sin(math.radians(yaw))
    cp, sp = math.cos(math.radians(pitch)), math.sin(math.radians(pitch))
    cr, sr = math.cos(math.radians(roll)), math.sin(math.radians(roll))
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ],
        dtype=np.float64,
    )


def pose_from_rotation(r: np.ndarray, t) -> Pose:
    """Build a pose from a 3x3 rotation and a translation vector."""
    m = np.eye(4, dtype=np.float64)
    m[:3, :3] = np.asarray(r, dtype=np.float64)
    m[:3, 3] = np.asarray(t, dtype=np.float64)
    return Pose.from_matrix(m)


def compose(p: Pose, q: Pose) -> Pose:
    """Apply q first, then p: the pose of matrix product M(p) @ M(q)."""
    return Pose.from_matrix(p.to_matrix() @ q.to_matrix())


def inverse(p: Pose) -> Pose:
    """The pose whose composition with p gives the identity."""
    r = p.rotation()
    rt = r.T
    t = -rt @ p.translation
    return pose_from_rotation(rt, t)


def relative(dst: Pose, src: Pose) -> Pose:
    """The movement m with compose(m, src) == dst, i.e. dst . src^-1."""
    return compose(dst, inverse(src))


def guidance_target(p_star: Pose, p_t: Pose) -> Pose:
    """Movement from the current pose p_t to the standard-plane pose p_star."""
    return relative(p_star, p_t)


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """Mean absolute translation (mm) and wrapped rotation (deg) error.

    Rotation differences are wrapped before the absolute value so that
    e.g. 179 vs -179 degrees counts as a 2-degree error.
    """
    trans = (abs(a.x - b.x) + abs(a.y - b.y) + abs(a.z - b.z)) / 3.0
    rot = (
        abs(wrap_angle(a.yaw - b.yaw))
        + abs(wrap_angle(a.pitch - b.pitch))
        + abs(wrap_angle(a.roll - b.roll))
    ) / 3.0
    return trans, rot


def is_near_gimbal(p: Pose, threshold_deg: float = GIMBAL_PITCH_DEG) -> bool:
    """Diagnostic flag: pitch close enough to +-90 deg to distrust Euler output."""
    return abs(p.pitch) >= threshold_deg


# --------------------------------------------------------------------------
# Batched equivalents for hot paths. Semantics match the scalar functions;
# inputs/outputs are (..., 6) pose vectors. Gimbal-locked elements fall back
# to the scalar extraction.


def poses_to_matrices(vecs: np.ndarray) -> np.ndarray:
    """(..., 6) pose vectors to (..., 4, 4) homogeneous matrices."""
    vecs = np.asarray(vecs, dtype=np.float64)
    yaw, pitch, roll = (np.radians(vecs[..., i]) for i in (3, 4, 5))
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    m = np.zeros(vecs.shape[:-1] + (4, 4), dtype=np.float64)
    m[..., 0, 0] = cy * cp
    m[..., 0, 1] = cy * sp * sr - sy * cr
    m[..., 0, 2] = cy * sp * cr + sy * sr
    m[..., 1, 0] = sy * cp
    m[..., 1, 1] = sy * sp * sr + cy * cr
    m[..., 1, 2] = sy * sp * cr - cy * sr
    m[..., 2, 0] = -sp
    m[..., 2, 1] = cp * sr
    m[..., 2, 2] = cp * cr
    m[..., :3, 3] = vecs[..., :3]
    m[..., 3, 3] = 1.0
    return m


def matrices_to_poses(ms: np.ndarray) -> np.ndarray:
    """(..., 4, 4) rigid matrices to (..., 6) pose vectors, angles wrapped."""
    ms = np.asarray(ms, dtype=np.float64)
    sp = np.clip(-ms[..., 2, 0], -1.0, 1.0)
    out = np.zeros(ms.shape[:-2] + (6,), dtype=np.float64)
    out[..., :3] = ms[..., :3, 3]
    out[..., 3] = np.degrees(np.arctan2(ms[..., 1, 0], ms[..., 0, 0]))
    out[..., 4] = np.degrees(np.arcsin(sp))
    out[..., 5] = np.degrees(np.arctan2(ms[..., 2, 1], ms[..., 2, 2]))
    out[..., 3:] = wrap_angles(out[..., 3:])
    locked = np.abs(sp) >= 1.0 - 1e-12
    if np.any(locked):
        flat = out.reshape(-1, 6)
        for idx in np.argwhere(locked.reshape(-1)).ravel():
            flat[idx] = Pose.from_matrix(ms.reshape(-1, 4, 4)[idx]).to_vector()
    return out


def invert_matrices(ms: np.ndarray) -> np.ndarray:
    """Analytic inverse of rigid matrices: (R, t) -> (R^T, -R^T t)."""
    r = ms[..., :3, :3]
    t = ms[..., :3, 3]
    inv = np.zeros_like(ms)
    rt = np.swapaxes(r, -1, -2)
    inv[..., :3, :3] = rt
    inv[..., :3, 3] = -np.einsum("...ij,...j->...i", rt, t)
    inv[..., 3, 3] = 1.0
    return inv


def pairwise_relative_vectors(vecs: np.ndarray) -> np.ndarray:
    """All relative movements of N poses: out[i, j] = pose_j . pose_i^-1."""
    vecs = np.asarray(vecs, dtype=np.float64)
    m = poses_to_matrices(vecs)
    m_inv = invert_matrices(m)
    rel = np.einsum("jab,ibc->ijac", m, m_inv)
    return matrices_to_poses(rel)


def batch_guidance_targets(plane_vecs: np.ndarray, pose_vec: np.ndarray) -> np.ndarray:
    """Movements from one pose to each of K target poses, (K, 6)."""
    m_planes = poses_to_matrices(plane_vecs)
    m_inv = invert_matrices(poses_to_matrices(pose_vec))
    return matrices_to_poses(np.einsum("kab,bc->kac", m_planes, m_inv))
