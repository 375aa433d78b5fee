"""Guidance models: single-frame heads and history aggregators.

The single-frame model attaches ten two-layer heads to the pooled encoder
feature. Sequence models extract pooled features for N history frames plus
the full pairwise motion grid, aggregate them (motion-aware attention,
motion-blind attention, or a GRU over the interleaved sequence), and feed
the current frame's aggregated token to the same ten heads. Heads predict
in normalized units; use :func:`predict_movements` for mm/degrees.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from ..config import ExperimentConfig
from ..pose_algebra import Pose
from ..scan_store import PLANE_IDS, GuidanceSample
from ..world_model.motion import MotionEncoder, denormalize_movement, normalize_movement
from ..world_model.vit import VisionEncoder, _init_weights
from .attention import PairwiseAttention

__all__ = [
    "PlaneHeads",
    "SingleFrameGuidance",
    "SequenceGuidance",
    "GruAggregator",
    "guidance_loss",
    "predict_movements",
    "extract_features",
    "dump_attention",
    "AGGREGATORS",
]

AGGREGATORS = ("motion_attention", "attention", "gru")


class PlaneHeads(nn.Module):
    """Ten independent two-layer MLPs, one 6-DOF movement per plane."""

    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.heads = nn.ModuleList(
            nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, 6))
            for _ in PLANE_IDS
        )
        self.apply(_init_weights)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return torch.stack([head(feature) for head in self.heads], dim=1)  # (B, 10, 6)


class SingleFrameGuidance(nn.Module):
    def __init__(self, cfg: ExperimentConfig, drop_path: float = 0.0):
        super().__init__()
        self.cfg = cfg
        self.encoder = VisionEncoder(cfg.encoder, drop_path_rate=drop_path)
        self.heads = PlaneHeads(cfg.encoder.embed_dim, cfg.finetune.head_hidden)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Normalized movements to all ten planes, (B, 10, 6)."""
        return self.heads(self.encoder.pooled(images))


class GruAggregator(nn.Module):
    """History aggregation over the interleaved image/motion sequence.

    Step i consumes the i-th frame feature and the consecutive motion
    feature z[i-1 -> i]; the first step gets a zero motion slot. The final
    hidden state is the aggregate.
    """

    def __init__(self, feature_dim: int, motion_dim: int, width: int):
        super().__init__()
        self.proj_v = nn.Linear(feature_dim, width)
        self.proj_m = nn.Linear(motion_dim, width)
        self.gru = nn.GRU(2 * width, width, num_layers=1, batch_first=True)
        self.apply(_init_weights)

    def forward(self, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        b, n, _ = h.shape
        consec = torch.zeros(b, n, z.shape[-1], dtype=z.dtype, device=z.device)
        if n > 1:
            idx = torch.arange(n - 1)
            consec[:, 1:] = z[:, idx, idx + 1]
        seq = torch.cat([self.proj_v(h), self.proj_m(consec)], dim=-1)
        _, hidden = self.gru(seq)
        return hidden[-1]


class SequenceGuidance(nn.Module):
    def __init__(self, cfg: ExperimentConfig, aggregator: str = "motion_attention",
                 drop_path: float = 0.0):
        super().__init__()
        if aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        self.cfg = cfg
        self.aggregator = aggregator
        fc = cfg.finetune
        dim = cfg.encoder.embed_dim
        self.encoder = VisionEncoder(cfg.encoder, drop_path_rate=drop_path)
        self.motion_encoder = MotionEncoder(dim, cfg.encoder.motion_hidden)
        if aggregator == "gru":
            self.blocks = None
            self.gru = GruAggregator(dim, dim, fc.attention_width)
        else:
            self.gru = None
            use_motion = aggregator == "motion_attention"
            in_dims = [dim] + [fc.attention_width] * (fc.attention_blocks - 1)
            self.blocks = nn.ModuleList(
                PairwiseAttention(
                    d, dim if use_motion else 0, fc.attention_width,
                    fc.attention_heads, use_motion=use_motion,
                )
                for d in in_dims
            )
        self.heads = PlaneHeads(fc.attention_width, fc.head_hidden)

    def extract_features(
        self, images: torch.Tensor, movements: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Pooled frame features (B, N, D) and the motion grid (B, N, N, D).

        ``movements`` is the raw (mm/deg) pairwise grid including the
        identity diagonal, which embeds through the same motion encoder.
        """
        b, n = images.shape[:2]
        flat = images.reshape(b * n, *images.shape[2:])
        h = self.encoder.pooled(flat).reshape(b, n, -1)
        z = self.motion_encoder.encode_raw(movements.reshape(b * n * n, 6))
        return h, z.reshape(b, n, n, -1)

    def aggregate(self, h: torch.Tensor, z: torch.Tensor,
                  return_scores: bool = False):
        scores = None
        if self.gru is not None:
            out = self.gru(h, z)
        else:
            x = h
            for block in self.blocks:
                x, scores = block(x, z if block.use_motion else None, return_scores=True)
            out = x[:, -1]  # the current frame's token drives the prediction
        return (out, scores) if return_scores else out

    def forward(self, images: torch.Tensor, movements: torch.Tensor) -> torch.Tensor:
        h, z = self.extract_features(images, movements)
        return self.heads(self.aggregate(h, z))


def guidance_loss(
    pred: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """L1 over the 6 components, averaged over masked-in planes and samples.

    Samples whose mask is empty contribute a zero loss and zero gradient
    and are skipped in the averaging.
    """
    diff = (pred - targets).abs().mean(dim=-1)  # (B, 10)
    per_plane_count = mask.sum(dim=1)  # (B,)
    masked_sum = (diff * mask).sum(dim=1)
    valid = per_plane_count > 0
    if not bool(valid.any()):
        return pred.sum() * 0.0
    per_sample = masked_sum[valid] / per_plane_count[valid]
    return per_sample.mean()


def sample_to_tensors(sample: GuidanceSample) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(sample.images.astype(np.float32) / 255.0).unsqueeze(1)
    movements = torch.from_numpy(sample.pairwise_motion).float()
    return images.unsqueeze(0), movements.unsqueeze(0)


def extract_features(model: SequenceGuidance, sample: GuidanceSample):
    """Frame features and motion grid for one history sample (no batch dim)."""
    images, movements = sample_to_tensors(sample)
    with torch.no_grad():
        h, z = model.extract_features(images, movements)
    return h[0], z[0]


def predict_movements(model: nn.Module, *inputs: torch.Tensor) -> dict[str, Pose]:
    """De-normalized movement predictions for one sample, keyed by plane."""
    model.eval()
    with torch.no_grad():
        normalized = model(*inputs)
    raw = denormalize_movement(normalized)[0].cpu().numpy()
    return {plane: Pose.from_vector(raw[k]) for k, plane in enumerate(PLANE_IDS)}


def normalized_targets(sample_targets: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(normalize_movement(sample_targets)).float()


def dump_attention(model: SequenceGuidance, sample: GuidanceSample, out_dir: str | Path) -> list[Path]:
    """Write per-head score matrices as grayscale PNG + CSV (rows = queries)."""
    if model.gru is not None:
        raise ValueError("attention dumps require an attention aggregator")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, movements = sample_to_tensors(sample)
    model.eval()
    with torch.no_grad():
        h, z = model.extract_features(images, movements)
        _, scores = model.aggregate(h, z, return_scores=True)
    scores = scores[0].cpu().numpy()  # (H, N, N)
    written = []
    for head in range(scores.shape[0]):
        mat = scores[head]
        csv_path = out_dir / f"attention_head{head}.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"key{j}" for j in range(mat.shape[1])])
            for row in mat:
                writer.writerow([f"{v:.9f}" for v in row])
        png_path = out_dir / f"attention_head{head}.png"
        Image.fromarray(np.round(mat * 255.0).astype(np.uint8), mode="L").save(png_path)
        written += [csv_path, png_path]
    return written
