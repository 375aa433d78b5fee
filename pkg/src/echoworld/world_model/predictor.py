"""Predictor transformer for spatial and motion world modeling.

A stack of residual pre-norm blocks at the encoder width with no in/out
projection and no final norm, so zeroing all block weights leaves every
token untouched. One learned mask token is shared across all masked cells
and the motion slot; cells are distinguished purely by their sinusoidal
positional encodings, the motion slot by the added motion feature.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..config import EncoderSection
from .masking import MaskSpec
from .vit import Block, _init_weights, sincos_pos_embed_2d

__all__ = ["Predictor"]


class Predictor(nn.Module):
    def __init__(self, cfg: EncoderSection):
        super().__init__()
        dim = cfg.embed_dim
        grid = cfg.image_size // cfg.patch_size
        self.blocks = nn.ModuleList(
            Block(dim, cfg.predictor_heads) for _ in range(cfg.predictor_depth)
        )
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dim))
        pos = sincos_pos_embed_2d(dim, grid, grid)
        self.register_buffer("pos_embed", pos.unsqueeze(0), persistent=False)
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def _run(self, tokens: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks:
            tokens = blk(tokens)
        return tokens

    def predict_spatial(
        self, context: torch.Tensor, mask: MaskSpec
    ) -> torch.Tensor:
        """Features at the masked cells, (B, |M|, D).

        Context tokens and mask tokens both carry their cells' positional
        encodings; outputs are returned in ``mask.masked`` order.
        """
        b = context.shape[0]
        vis_idx = torch.as_tensor(mask.visible, dtype=torch.long)
        msk_idx = torch.as_tensor(mask.masked, dtype=torch.long)
        ctx = context + self.pos_embed[:, vis_idx, :]
        queries = self.mask_token + self.pos_embed[:, msk_idx, :]
        tokens = torch.cat([ctx, queries.expand(b, -1, -1)], dim=1)
        out = self._run(tokens)
        return out[:, len(mask.visible) :, :]

    def predict_motion(
        self, context: torch.Tensor, visible: tuple[int, ...], z: torch.Tensor
    ) -> torch.Tensor:
        """Pooled-target prediction from one motion-conditioned slot, (B, D)."""
        vis_idx = torch.as_tensor(visible, dtype=torch.long)
        ctx = context + self.pos_embed[:, vis_idx, :]
        slot = self.mask_token + z.unsqueeze(1)
        tokens = torch.cat([ctx, slot], dim=1)
        out = self._run(tokens)
        return out[:, -1, :]
