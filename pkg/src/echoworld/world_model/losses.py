"""Pre-training objectives: masked-feature regression and motion InfoNCE."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .vit import _init_weights

__all__ = ["spatial_loss", "info_nce", "Projector"]


def spatial_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Smoothed-L1 (beta=1) summed over masked cells, mean over the batch.

    ``pred``/``target``: (B, |M|, D) features at the masked cells only.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    per_item = F.smooth_l1_loss(pred, target, beta=1.0, reduction="none").sum(dim=(1, 2))
    return per_item.mean()


def info_nce(
    preds: torch.Tensor,
    targets: torch.Tensor,
    tau: float,
    symmetrize: bool = False,
) -> torch.Tensor:
    """Contrastive loss over in-batch negatives; inputs are projected features.

    Rows are L2-normalized before the dot products. With a single sample the
    softmax is degenerate and the loss is exactly zero.
    """
    if preds.shape[0] == 0:
        raise ValueError("info_nce requires a non-empty batch")
    p = F.normalize(preds, dim=-1)
    t = F.normalize(targets, dim=-1)
    logits = p @ t.T / tau
    labels = torch.arange(p.shape[0], device=p.device)
    loss = F.cross_entropy(logits, labels)
    if symmetrize:
        loss = 0.5 * (loss + F.cross_entropy(logits.T, labels))
    return loss


class Projector(nn.Module):
    """Two-layer projection head used ahead of the InfoNCE dot products."""

    def __init__(self, dim: int, hidden_ratio: int = 2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden_ratio * dim), nn.GELU(), nn.Linear(hidden_ratio * dim, dim)
        )
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)
