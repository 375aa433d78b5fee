"""Evaluation protocols and the per-plane error report.

Single-frame: predict movements to all ten planes from every frame of the
6 fps test scans. Sequential: at every 3 fps timestep, in both scan
directions, predict movements for the planes not yet visited in that
direction from a decayed-density history sample. Errors are pooled over
all contributing frames across scans, per plane, as mean absolute error
(translation mm / rotation degrees, wrapped).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch

from .pose_algebra import guidance_target, wrap_angles
from .scan_store import PLANE_IDS, GuidanceSample, Scan, build_sequence_input, decimate
from .world_model.motion import denormalize_movement

__all__ = [
    "SingleFrameItem",
    "MetricsReport",
    "eval_single_frame",
    "eval_sequential",
    "write_report",
    "read_report",
    "compare_reports",
    "TorchSingleFramePredictor",
    "TorchSequencePredictor",
    "ZeroPredictor",
]

log = logging.getLogger(__name__)


class SingleFrameItem(NamedTuple):
    scan_id: str
    t: int
    image: np.ndarray  # (H, W) uint8
    pose: np.ndarray  # (6,)
    targets: np.ndarray  # (10, 6) mm/deg


@dataclass
class MetricsReport:
    protocol: str
    per_plane: dict[str, tuple[float, float]]  # plane -> (trans_mae, rot_mae)
    counts: dict[str, int]
    n_scans: int
    directions: dict[str, dict[str, tuple[float, float]]] | None = None

    @property
    def avg_trans(self) -> float:
        return float(np.mean([v[0] for v in self.per_plane.values()]))

    @property
    def avg_rot(self) -> float:
        return float(np.mean([v[1] for v in self.per_plane.values()]))

    @property
    def overall_avg(self) -> float:
        """Mean of the 20 per-plane translation/rotation entries."""
        vals = [v for pair in self.per_plane.values() for v in pair]
        return float(np.mean(vals))


class _PlaneAccumulator:
    """Order-fixed mean-absolute-error accumulation in float64."""

    def __init__(self):
        self.trans_sum = {p: 0.0 for p in PLANE_IDS}
        self.rot_sum = {p: 0.0 for p in PLANE_IDS}
        self.count = {p: 0 for p in PLANE_IDS}

    def add(self, plane: str, pred: np.ndarray, target: np.ndarray) -> None:
        diff = pred - target
        self.trans_sum[plane] += float(np.mean(np.abs(diff[:3])))
        self.rot_sum[plane] += float(np.mean(np.abs(wrap_angles(diff[3:]))))
        self.count[plane] += 1

    def result(self) -> tuple[dict, dict]:
        per_plane = {}
        for p in PLANE_IDS:
            n = self.count[p]
            per_plane[p] = (
                self.trans_sum[p] / n if n else 0.0,
                self.rot_sum[p] / n if n else 0.0,
            )
        return per_plane, dict(self.count)


def _complete_scans(scans: Sequence[Scan]) -> list[Scan]:
    usable = []
    for scan in scans:
        missing = [p for p in PLANE_IDS if p not in scan.annotations]
        if missing:
            log.warning(
                "excluding scan %s: missing plane annotations %s", scan.scan_id, missing
            )
            continue
        usable.append(scan)
    return usable


def eval_single_frame(
    predict_fn: Callable[[list[SingleFrameItem]], np.ndarray],
    test_scans: Sequence[Scan],
    fps: float = 6.0,
) -> MetricsReport:
    """Score a single-frame predictor on every decimated frame of every scan."""
    acc = _PlaneAccumulator()
    scans = _complete_scans(test_scans)
    for scan in scans:
        dec = decimate(scan, fps)
        items = []
        for i in range(dec.n_frames):
            pose = dec.pose_at(i)
            targets = np.stack(
                [
                    guidance_target(dec.plane_pose(p), pose).to_vector()
                    for p in PLANE_IDS
                ]
            )
            items.append(
                SingleFrameItem(
                    dec.scan_id, int(dec.timesteps[i]), dec.images[i], dec.poses[i], targets
                )
            )
        preds = np.asarray(predict_fn(items), dtype=np.float64)
        for item, pred in zip(items, preds):
            for k, plane in enumerate(PLANE_IDS):
                acc.add(plane, pred[k], item.targets[k])
    per_plane, counts = acc.result()
    return MetricsReport("single", per_plane, counts, n_scans=len(scans))


def eval_sequential(
    predict_fn: Callable[[list[GuidanceSample]], np.ndarray],
    test_scans: Sequence[Scan],
    fps: float = 3.0,
    n_history: int = 8,
    alpha: float = 0.4,
) -> MetricsReport:
    """Score a sequential predictor over both directions of every scan.

    Only planes unvisited in the traversal direction contribute; each
    timestep/direction contribution is pooled at the frame level.
    """
    acc = _PlaneAccumulator()
    by_dir = {"forward": _PlaneAccumulator(), "reverse": _PlaneAccumulator()}
    scans = _complete_scans(test_scans)
    for scan in scans:
        dec = decimate(scan, fps)
        for direction in ("forward", "reverse"):
            samples = [
                build_sequence_input(dec, int(t), n_history, alpha, direction)
                for t in dec.timesteps
            ]
            preds = np.asarray(predict_fn(samples), dtype=np.float64)
            for sample, pred in zip(samples, preds):
                for k, plane in enumerate(PLANE_IDS):
                    if sample.target_mask[k]:
                        acc.add(plane, pred[k], sample.targets[k])
                        by_dir[direction].add(plane, pred[k], sample.targets[k])
    per_plane, counts = acc.result()
    directions = {d: a.result()[0] for d, a in by_dir.items()}
    return MetricsReport(
        "sequential", per_plane, counts, n_scans=len(scans), directions=directions
    )


# --------------------------------------------------------------------------
# report persistence

REPORT_HEADER = ["plane", "trans_mae_mm", "rot_mae_deg"]


def write_report(report: MetricsReport, path: str | Path, json_mirror: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for plane in PLANE_IDS:
            trans, rot = report.per_plane[plane]
            writer.writerow([plane, repr(trans), repr(rot)])
        writer.writerow(["AVG", repr(report.avg_trans), repr(report.avg_rot)])
    if json_mirror:
        payload = {
            "protocol": report.protocol,
            "per_plane": {p: list(v) for p, v in report.per_plane.items()},
            "counts": report.counts,
            "n_scans": report.n_scans,
            "overall_avg": report.overall_avg,
            "directions": (
                {
                    d: {p: list(v) for p, v in planes.items()}
                    for d, planes in report.directions.items()
                }
                if report.directions
                else None
            ),
        }
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    return path


def read_report(path: str | Path) -> MetricsReport:
    path = Path(path)
    per_plane: dict[str, tuple[float, float]] = {}
    avg_row = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPORT_HEADER:
            raise ValueError(f"malformed report file {path}: header {header}")
        for row in reader:
            if len(row) != 3:
                raise ValueError(f"malformed report row: {row}")
            if row[0] == "AVG":
                avg_row = (float(row[1]), float(row[2]))
            else:
                per_plane[row[0]] = (float(row[1]), float(row[2]))
    if set(per_plane) != set(PLANE_IDS) or avg_row is None:
        raise ValueError(f"report {path} does not cover the ten planes plus AVG")
    counts = {}
    n_scans = 0
    protocol = "unknown"
    mirror = path.with_suffix(".json")
    if mirror.exists():
        with open(mirror) as fh:
            payload = json.load(fh)
        counts = payload.get("counts", {})
        n_scans = payload.get("n_scans", 0)
        protocol = payload.get("protocol", "unknown")
    return MetricsReport(protocol, per_plane, counts, n_scans)


def compare_reports(a: MetricsReport, b: MetricsReport) -> dict[str, tuple[float, float]]:
    """Signed deltas b - a per plane, plus the AVG row."""
    deltas = {}
    for plane in PLANE_IDS:
        deltas[plane] = (
            b.per_plane[plane][0] - a.per_plane[plane][0],
            b.per_plane[plane][1] - a.per_plane[plane][1],
        )
    deltas["AVG"] = (b.avg_trans - a.avg_trans, b.avg_rot - a.avg_rot)
    return deltas


# --------------------------------------------------------------------------
# predictor adapters


class TorchSingleFramePredictor:
    """Batched adapter from SingleFrameItem lists to de-normalized outputs."""

    def __init__(self, model: torch.nn.Module, batch_size: int = 64):
        self.model = model.eval()
        self.batch_size = batch_size

    def __call__(self, items: list[SingleFrameItem]) -> np.ndarray:
        outs = []
        with torch.no_grad():
            for i in range(0, len(items), self.batch_size):
                chunk = items[i : i + self.batch_size]
                images = torch.from_numpy(
                    np.stack([it.image for it in chunk]).astype(np.float32) / 255.0
                ).unsqueeze(1)
                normalized = self.model(images)
                outs.append(denormalize_movement(normalized).cpu().numpy())
        return np.concatenate(outs, axis=0)


class TorchSequencePredictor:
    def __init__(self, model: torch.nn.Module, batch_size: int = 32):
        self.model = model.eval()
        self.batch_size = batch_size

    def __call__(self, samples: list[GuidanceSample]) -> np.ndarray:
        outs = []
        with torch.no_grad():
            for i in range(0, len(samples), self.batch_size):
                chunk = samples[i : i + self.batch_size]
                images = torch.from_numpy(
                    np.stack([s.images for s in chunk]).astype(np.float32) / 255.0
                ).unsqueeze(2)
                movements = torch.from_numpy(
                    np.stack([s.pairwise_motion for s in chunk])
                ).float()
                normalized = self.model(images, movements)
                outs.append(denormalize_movement(normalized).cpu().numpy())
        return np.concatenate(outs, axis=0)


class ZeroPredictor:
    """Predicts the all-zero movement for every plane; a metrics baseline."""

    def __call__(self, items) -> np.ndarray:
        return np.zeros((len(items), 10, 6), dtype=np.float64)
