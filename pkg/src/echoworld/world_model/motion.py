"""Motion feature encoder and the movement normalization it relies on.

Raw movements mix millimeters and degrees; inputs are rescaled so both
regimes land on comparable magnitudes (translations / 50 mm, angles / 90
deg) and clipped to [-2, 2] before entering the encoder. Guidance heads
predict in the same normalized space and are de-normalized (no clipping)
for metrics.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .vit import _init_weights

__all__ = [
    "TRANS_SCALE_MM",
    "ROT_SCALE_DEG",
    "NORM_CLIP",
    "normalize_movement",
    "denormalize_movement",
    "MotionEncoder",
]

TRANS_SCALE_MM = 50.0
ROT_SCALE_DEG = 90.0
NORM_CLIP = 2.0

_SCALE = np.array([TRANS_SCALE_MM] * 3 + [ROT_SCALE_DEG] * 3, dtype=np.float64)


def normalize_movement(vec):
    """Scale a raw (..., 6) movement into normalized units (no clipping)."""
    if isinstance(vec, torch.Tensor):
        scale = torch.as_tensor(_SCALE, dtype=vec.dtype, device=vec.device)
        return vec / scale
    return np.asarray(vec, dtype=np.float64) / _SCALE


def denormalize_movement(vec):
    """Inverse of :func:`normalize_movement`."""
    if isinstance(vec, torch.Tensor):
        scale = torch.as_tensor(_SCALE, dtype=vec.dtype, device=vec.device)
        return vec * scale
    return np.asarray(vec, dtype=np.float64) * _SCALE


class MotionEncoder(nn.Module):
    """Two-layer MLP from a normalized 6-DOF movement to a motion feature."""

    def __init__(self, out_dim: int, hidden: int = 384):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(6, hidden), nn.GELU(), nn.Linear(hidden, out_dim))
        self.apply(_init_weights)

    def forward(self, normalized: torch.Tensor) -> torch.Tensor:
        return self.net(normalized)

    def encode_raw(self, movement: torch.Tensor) -> torch.Tensor:
        """Encode raw mm/deg movements: normalize, clip, embed."""
        x = normalize_movement(movement).clamp(-NORM_CLIP, NORM_CLIP)
        return self.net(x.to(next(self.parameters()).dtype))
