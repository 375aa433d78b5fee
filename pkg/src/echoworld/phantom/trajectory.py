"""Expert-like scan trajectories over a phantom.

A scan visits all ten standard planes in a configured order. Between plane
poses the path interpolates linearly in matrix-logarithm space (constant
screw motion), with smoothed per-axis jitter windowed to vanish at the
plane timesteps so every plane pose is hit exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..pose_algebra import Pose, wrap_angles
from ..scan_store import PLANE_IDS, Scan
from .planes import standard_plane_poses
from .slicing import ImageSpec, quantize_image, slice_image
from .volume import Phantom, PhantomError

__all__ = ["TrajectoryConfig", "generate_scan", "ScanGenerationError"]

PITCH_LIMIT_DEG = 80.0


class ScanGenerationError(PhantomError):
    """Raised when a trajectory configuration cannot produce a valid scan."""


@dataclass(frozen=True)
class TrajectoryConfig:
    duration: int = 400  # frames
    fps: float = 30.0
    visit_order: tuple[str, ...] = PLANE_IDS
    jitter_trans_mm: tuple[float, float, float] = (1.2, 1.2, 1.2)
    jitter_rot_deg: tuple[float, float, float] = (1.0, 1.0, 1.0)
    smoothing_window: int = 9
    seed: int = 0

    def __post_init__(self):
        if sorted(self.visit_order) != sorted(PLANE_IDS):
            raise ValueError("visit_order must be a permutation of the 10 plane ids")
        if any(v < 0 for v in self.jitter_trans_mm + self.jitter_rot_deg):
            raise ValueError("jitter scales must be non-negative")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")


# -- SE(3) helpers (internal, used only for path interpolation) -------------


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def _so3_log(r: np.ndarray) -> np.ndarray:
    cos_a = (float(np.trace(r)) - 1.0) / 2.0
    cos_a = min(1.0, max(-1.0, cos_a))
    angle = math.acos(cos_a)
    if angle < 1e-10:
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if math.pi - angle < 1e-6:
        # near-pi: recover the axis from the symmetric part
        diag = np.diag(r)
        k = int(np.argmax(diag))
        axis = np.zeros(3)
        axis[k] = math.sqrt(max(0.0, (diag[k] + 1.0) / 2.0))
        for m in range(3):
            if m != k:
                axis[m] = r[k, m] / (2.0 * axis[k])
        return axis / np.linalg.norm(axis) * angle
    scale = angle / (2.0 * math.sin(angle))
    return scale * np.array(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )


def _so3_exp(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    k = _skew(w)
    if angle < 1e-10:
        return np.eye(3) + k + 0.5 * (k @ k)
    ku = k / angle
    return (
        np.eye(3)
        + math.sin(angle) * ku
        + (1.0 - math.cos(angle)) * (ku @ ku)
    )


def _se3_log(m: np.ndarray) -> np.ndarray:
    w = _so3_log(m[:3, :3])
    angle = float(np.linalg.norm(w))
    k = _skew(w)
    if angle < 1e-10:
        v_inv = np.eye(3) - 0.5 * k
    else:
        a2 = angle * angle
        coeff = (1.0 - (angle * math.sin(angle)) / (2.0 * (1.0 - math.cos(angle)))) / a2
        v_inv = np.eye(3) - 0.5 * k + coeff * (k @ k)
    return np.concatenate([v_inv @ m[:3, 3], w])


def _se3_exp(xi: np.ndarray) -> np.ndarray:
    rho, w = xi[:3], xi[3:]
    angle = float(np.linalg.norm(w))
    k = _skew(w)
    if angle < 1e-10:
        v = np.eye(3) + 0.5 * k + (k @ k) / 6.0
    else:
        a2 = angle * angle
        v = (
            np.eye(3)
            + ((1.0 - math.cos(angle)) / a2) * k
            + ((angle - math.sin(angle)) / (a2 * angle)) * (k @ k)
        )
    m = np.eye(4)
    m[:3, :3] = _so3_exp(w)
    m[:3, 3] = v @ rho
    return m


def _geodesic(p_a: Pose, p_b: Pose, fractions: np.ndarray) -> list[Pose]:
    """Poses along the constant-screw path from p_a to p_b."""
    ma, mb = p_a.to_matrix(), p_b.to_matrix()
    xi = _se3_log(mb @ np.linalg.inv(ma))
    return [Pose.from_matrix(_se3_exp(s * xi) @ ma) for s in fractions]


# -- scan generation ---------------------------------------------------------


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return x
    kernel = np.ones(window) / window
    return np.apply_along_axis(
        lambda col: np.convolve(col, kernel, mode="same"), 0, x
    )


def _knot_times(duration: int, window: int, n_planes: int) -> list[int]:
    lead = max(window, duration // 18)
    span = duration - 1 - 2 * lead
    return [lead + int(round(k * span / (n_planes - 1))) for k in range(n_planes)]


def generate_scan(
    phantom: Phantom,
    traj: TrajectoryConfig,
    spec: ImageSpec,
    scan_id: str | None = None,
) -> Scan:
    """Render a full scan: smooth pose path through all planes, plus images."""
    t_total = traj.duration
    if t_total < 10 * traj.smoothing_window:
        raise ScanGenerationError(
            f"duration {t_total} too short to visit all planes "
            f"(need >= {10 * traj.smoothing_window} frames)"
        )
    rng = np.random.default_rng(traj.seed)
    planes = standard_plane_poses(phantom)
    visit = [planes[p] for p in traj.visit_order]
    s_ks = _knot_times(t_total, traj.smoothing_window, len(visit))

    def wobble(pose: Pose) -> Pose:
        v = pose.to_vector()
        v[:3] += rng.uniform(-8.0, 8.0, 3)
        v[3:] += rng.uniform(-6.0, 6.0, 3)
        return Pose.from_vector(v)

    knots: list[tuple[int, Pose]] = [(0, wobble(visit[0]))]
    knots += list(zip(s_ks, visit))
    knots.append((t_total - 1, wobble(visit[-1])))

    base = np.zeros((t_total, 6), dtype=np.float64)
    envelope = np.zeros(t_total, dtype=np.float64)
    for (t0, p0), (t1, p1) in zip(knots[:-1], knots[1:]):
        length = t1 - t0
        fr = np.arange(length + 1, dtype=np.float64) / length
        seg = _geodesic(p0, p1, fr)
        for off, pose in enumerate(seg):
            base[t0 + off] = pose.to_vector()
        envelope[t0 : t1 + 1] = np.sin(math.pi * fr) ** 2

    scales = np.array(traj.jitter_trans_mm + traj.jitter_rot_deg)
    noise = rng.standard_normal((t_total, 6)) * scales
    jitter = _moving_average(noise, traj.smoothing_window) * envelope[:, None]

    pose_vecs = base + jitter
    pose_vecs[:, 3:] = wrap_angles(pose_vecs[:, 3:])
    pose_vecs[:, 4] = np.clip(pose_vecs[:, 4], -PITCH_LIMIT_DEG, PITCH_LIMIT_DEG)
    # plane hits are exact by contract, not merely up to interpolation error
    for s_k, pose in zip(s_ks, visit):
        pose_vecs[s_k] = pose.to_vector()

    images = np.zeros((t_total, spec.height, spec.width), dtype=np.uint8)
    for t in range(t_total):
        img = slice_image(
            phantom,
            Pose.from_vector(pose_vecs[t]),
            spec,
            noise_seed=(traj.seed * 1_000_003 + t) % (2**31 - 1),
        )
        images[t] = quantize_image(img)

    annotations = {plane: s_k for plane, s_k in zip(traj.visit_order, s_ks)}
    return Scan(
        scan_id=scan_id or f"scan-{traj.seed:06d}",
        fps=traj.fps,
        seed=traj.seed,
        timesteps=np.arange(t_total, dtype=np.int64),
        images=images,
        poses=pose_vecs,
        annotations=annotations,
    )
