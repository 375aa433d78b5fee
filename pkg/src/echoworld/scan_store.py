"""Scan data model, on-disk format, decimation and history sampling.

A scan is an ordered (timestep, image, pose) sequence plus standard-plane
annotations. The directory layout is a bit-exact contract:

    frames/%06d.png   8-bit grayscale, one per kept timestep
    poses.csv         header ``t,x_mm,y_mm,z_mm,yaw_deg,pitch_deg,roll_deg``,
                      6-decimal fixed point
    planes.json       plane id -> {"t": int}
    meta.json         {"scan_id", "fps", "seed", "generator_version"}
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from PIL import Image

from .pose_algebra import (
    Pose,
    batch_guidance_targets,
    pairwise_relative_vectors,
    relative,
)

__all__ = [
    "PLANE_IDS",
    "GENERATOR_VERSION",
    "Scan",
    "GuidanceSample",
    "ScanStoreError",
    "MissingScanFileError",
    "MalformedPoseTableError",
    "DanglingAnnotationError",
    "save_scan",
    "load_scan",
    "list_scans",
    "decimate",
    "sample_pair",
    "decayed_history_sample",
    "build_sequence_input",
]

#: Canonical standard-plane identifiers, in report order.
PLANE_IDS = (
    "PLAX",
    "PSAX-AV",
    "PSAX-PV",
    "PSAX-MV",
    "PSAX-PAP",
    "PSAX-APEX",
    "A4C",
    "A5C",
    "A3C",
    "A2C",
)

GENERATOR_VERSION = "1.0"

POSE_CSV_HEADER = "t,x_mm,y_mm,z_mm,yaw_deg,pitch_deg,roll_deg"


class ScanStoreError(Exception):
    """Base error for scan persistence and sampling."""


class MissingScanFileError(ScanStoreError):
    """A required file of the scan directory layout is absent."""


class MalformedPoseTableError(ScanStoreError):
    """poses.csv does not match the documented header/row format."""


class DanglingAnnotationError(ScanStoreError):
    """An annotation references a timestep with no stored frame."""


@dataclass
class Scan:
    """An ordered visual-motion sequence with standard-plane annotations."""

    scan_id: str
    fps: float
    seed: int
    timesteps: np.ndarray  # (T,) int64, strictly increasing
    images: np.ndarray  # (T, H, W) uint8
    poses: np.ndarray  # (T, 6) float64, wrapped angles
    annotations: dict[str, int]  # plane id -> timestep s_k

    def __post_init__(self):
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.poses = np.asarray(self.poses, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        t = self.timesteps
        if t.ndim != 1 or len(t) == 0:
            raise ScanStoreError("scan must contain at least one frame")
        if np.any(np.diff(t) <= 0):
            raise ScanStoreError("timesteps must be strictly increasing")
        if self.images.shape[0] != len(t) or self.poses.shape != (len(t), 6):
            raise ScanStoreError("frame, image and pose counts disagree")
        for plane, s_k in self.annotations.items():
            if plane not in PLANE_IDS:
                raise ScanStoreError(f"unknown plane id {plane!r}")
            if int(s_k) not in t:
                raise DanglingAnnotationError(
                    f"annotation {plane} points at timestep {s_k} with no frame"
                )

    @property
    def n_frames(self) -> int:
        return len(self.timesteps)

    def index_of(self, timestep: int) -> int:
        idx = int(np.searchsorted(self.timesteps, timestep))
        if idx >= self.n_frames or self.timesteps[idx] != timestep:
            raise KeyError(f"no frame at timestep {timestep}")
        return idx

    def pose_at(self, index: int) -> Pose:
        return Pose.from_vector(self.poses[index])

    def plane_pose(self, plane: str) -> Pose:
        s_k = self.annotations[plane]
        return self.pose_at(self.index_of(s_k))


class PairSample(NamedTuple):
    image_a: np.ndarray
    pose_a: Pose
    image_b: np.ndarray
    pose_b: Pose
    movement: Pose  # p_{a->b} = p_b . p_a^-1


@dataclass
class GuidanceSample:
    """N history frames with their pairwise motions and per-plane targets.

    ``pairwise_motion[i, j]`` is the movement from frame i to frame j,
    ``targets[k]`` the ground-truth movement from the pose at t_N to plane k
    (canonical plane order), and ``target_mask[k]`` whether plane k counts.
    """

    scan_id: str
    direction: str  # "forward" | "reverse"
    t: int  # current timestep
    timesteps: np.ndarray  # (N,)
    images: np.ndarray  # (N, H, W) uint8
    poses: np.ndarray  # (N, 6)
    pairwise_motion: np.ndarray  # (N, N, 6)
    targets: np.ndarray  # (10, 6) mm / deg
    target_mask: np.ndarray = field(default_factory=lambda: np.zeros(10, bool))

    @property
    def n_frames(self) -> int:
        return len(self.timesteps)

    def targets_by_plane(self) -> dict[str, np.ndarray]:
        return {plane: self.targets[k] for k, plane in enumerate(PLANE_IDS)}


# --------------------------------------------------------------------------
# persistence


def save_scan(scan: Scan, path: str | Path) -> Path:
    """Write a scan directory; lossless round trip up to 6-decimal poses."""
    path = Path(path)
    frames_dir = path / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    for i, t in enumerate(scan.timesteps):
        Image.fromarray(scan.images[i], mode="L").save(frames_dir / f"{int(t):06d}.png")

    with open(path / "poses.csv", "w", newline="") as fh:
        fh.write(POSE_CSV_HEADER + "\n")
        for i, t in enumerate(scan.timesteps):
            row = ",".join(f"{v:.6f}" for v in scan.poses[i])
            fh.write(f"{int(t)},{row}\n")

    planes = {plane: {"t": int(s_k)} for plane, s_k in scan.annotations.items()}
    with open(path / "planes.json", "w") as fh:
        json.dump(planes, fh, indent=2, sort_keys=True)

    meta = {
        "scan_id": scan.scan_id,
        "fps": scan.fps,
        "seed": scan.seed,
        "generator_version": GENERATOR_VERSION,
    }
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return path


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingScanFileError(f"missing scan file: {path}")
    return path


def load_scan(path: str | Path) -> Scan:
    path = Path(path)
    with open(_require(path / "meta.json")) as fh:
        meta = json.load(fh)

    timesteps: list[int] = []
    poses: list[list[float]] = []
    with open(_require(path / "poses.csv")) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedPoseTableError("poses.csv is empty") from None
        if ",".join(header) != POSE_CSV_HEADER:
            raise MalformedPoseTableError(
                f"poses.csv header {','.join(header)!r} != {POSE_CSV_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 7:
                raise MalformedPoseTableError(
                    f"poses.csv line {lineno}: expected 7 fields, got {len(row)}"
                )
            try:
                timesteps.append(int(row[0]))
                poses.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise MalformedPoseTableError(f"poses.csv line {lineno}: {exc}") from None
    if not timesteps:
        raise MalformedPoseTableError("poses.csv contains no rows")

    frames_dir = _require(path / "frames")
    images = []
    for t in timesteps:
        png = _require(frames_dir / f"{t:06d}.png")
        with Image.open(png) as im:
            images.append(np.asarray(im.convert("L"), dtype=np.uint8))
    images = np.stack(images)

    with open(_require(path / "planes.json")) as fh:
        planes_raw = json.load(fh)
    annotations: dict[str, int] = {}
    tset = set(timesteps)
    for plane, entry in planes_raw.items():
        if plane not in PLANE_IDS:
            raise ScanStoreError(f"unknown plane id {plane!r} in planes.json")
        s_k = int(entry["t"])
        if s_k not in tset:
            raise DanglingAnnotationError(
                f"annotation {plane} points at timestep {s_k} with no frame"
            )
        annotations[plane] = s_k

    return Scan(
        scan_id=str(meta["scan_id"]),
        fps=float(meta["fps"]),
        seed=int(meta["seed"]),
        timesteps=np.array(timesteps, dtype=np.int64),
        images=images,
        poses=np.array(poses, dtype=np.float64),
        annotations=annotations,
    )


def list_scans(root: str | Path) -> list[Path]:
    """Scan directories under ``root``, sorted for deterministic iteration."""
    root = Path(root)
    return sorted(p.parent for p in root.glob("*/meta.json"))


# --------------------------------------------------------------------------
# decimation and sampling


def decimate(scan: Scan, target_fps: float) -> Scan:
    """Keep every round(fps/target_fps)-th frame starting at the first.

    Annotations are remapped to the nearest kept frame at or before s_k.
    """
    if target_fps <= 0:
        raise ValueError("target_fps must be positive")
    if target_fps > scan.fps:
        raise ValueError(f"target_fps {target_fps} exceeds scan fps {scan.fps}")
    stride = max(1, _round_half_away(scan.fps / target_fps))
    keep = np.arange(0, scan.n_frames, stride)
    kept_ts = scan.timesteps[keep]
    annotations = {}
    for plane, s_k in scan.annotations.items():
        pos = int(np.searchsorted(kept_ts, s_k, side="right")) - 1
        annotations[plane] = int(kept_ts[max(pos, 0)])
    return Scan(
        scan_id=scan.scan_id,
        fps=scan.fps / stride,
        seed=scan.seed,
        timesteps=kept_ts.copy(),
        images=scan.images[keep].copy(),
        poses=scan.poses[keep].copy(),
        annotations=annotations,
    )


def sample_pair(scan: Scan, rng: np.random.Generator) -> PairSample:
    """Two distinct frames drawn uniformly from the same scan."""
    n = scan.n_frames
    if n < 2:
        raise ScanStoreError("pair sampling needs a scan with at least 2 frames")
    a = int(rng.integers(n))
    b = int(rng.integers(n - 1))
    if b >= a:
        b += 1
    pose_a, pose_b = scan.pose_at(a), scan.pose_at(b)
    return PairSample(
        image_a=scan.images[a],
        pose_a=pose_a,
        image_b=scan.images[b],
        pose_b=pose_b,
        movement=relative(pose_b, pose_a),
    )


def _round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def decayed_history_sample(t: int, n: int, alpha: float) -> list[int]:
    """Timesteps t_1..t_N = Round(t + t/(alpha*N) * log(i/N)), clamped to [1, t].

    Density decays away from the current timestep t, so recent frames are
    sampled more finely. Deterministic; 1-based; non-decreasing; t_N == t.
    When the history is shorter than the spread, clamping repeats early
    timesteps to fill the quota.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    scale = t / (alpha * n)
    out = []
    for i in range(1, n + 1):
        ti = _round_half_away(t + scale * math.log(i / n))
        out.append(min(max(ti, 1), t))
    return out


def build_sequence_input(
    scan: Scan,
    t: int,
    n: int,
    alpha: float,
    direction: str = "forward",
) -> GuidanceSample:
    """Assemble the history sample the sequential protocol feeds the model.

    Forward uses the history up to t and targets planes with s_k >= t;
    reverse traverses the scan backwards from the last frame and targets
    planes with s_k < t. An empty target set is valid, not an error.
    """
    if direction not in ("forward", "reverse"):
        raise ValueError(f"direction must be forward|reverse, got {direction!r}")
    cur = scan.index_of(t)
    total = scan.n_frames
    if direction == "forward":
        pos = cur + 1  # 1-based position in the forward timeline
        indices = [p - 1 for p in decayed_history_sample(pos, n, alpha)]
    else:
        pos = total - cur  # 1-based position in the reversed timeline
        indices = [total - p for p in decayed_history_sample(pos, n, alpha)]

    indices = np.array(indices, dtype=np.int64)
    pairwise = pairwise_relative_vectors(scan.poses[indices])

    targets = np.zeros((10, 6), dtype=np.float64)
    mask = np.zeros(10, dtype=bool)
    annotated = [(k, p) for k, p in enumerate(PLANE_IDS) if p in scan.annotations]
    if annotated:
        plane_vecs = np.stack(
            [scan.poses[scan.index_of(scan.annotations[p])] for _, p in annotated]
        )
        movements = batch_guidance_targets(plane_vecs, scan.poses[cur])
        for row, (k, plane) in enumerate(annotated):
            targets[k] = movements[row]
            s_k = scan.annotations[plane]
            mask[k] = (s_k >= t) if direction == "forward" else (s_k < t)

    return GuidanceSample(
        scan_id=scan.scan_id,
        direction=direction,
        t=int(t),
        timesteps=scan.timesteps[indices].copy(),
        images=scan.images[indices].copy(),
        poses=scan.poses[indices].copy(),
        pairwise_motion=pairwise,
        targets=targets,
        target_mask=mask,
    )


def iter_eval_timesteps(scan: Scan) -> Iterator[int]:
    """All timesteps of a scan, in order (evaluation iterates every frame)."""
    for t in scan.timesteps:
        yield int(t)
