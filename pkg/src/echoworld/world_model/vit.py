"""Vision transformer encoder operating on grayscale patches.

The context encoder can drop masked patches before the blocks (they are
removed, not zeroed), the target encoder always sees the full grid.
Positional embeddings are fixed 2D sin-cos.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import EncoderSection

__all__ = ["VisionEncoder", "Block", "Mlp", "DropPath", "sincos_pos_embed_2d"]


def _sincos_1d(embed_dim: int, pos: np.ndarray) -> np.ndarray:
    omega = np.arange(embed_dim // 2, dtype=np.float64) / (embed_dim / 2.0)
    omega = 1.0 / 10000**omega
    out = np.einsum("m,d->md", pos.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_pos_embed_2d(embed_dim: int, grid_h: int, grid_w: int) -> torch.Tensor:
    """(grid_h*grid_w, embed_dim) fixed positional table, row-major cells."""
    assert embed_dim % 4 == 0, "embed_dim must be divisible by 4"
    ys, xs = np.meshgrid(
        np.arange(grid_h, dtype=np.float64),
        np.arange(grid_w, dtype=np.float64),
        indexing="ij",
    )
    emb = np.concatenate(
        [_sincos_1d(embed_dim // 2, ys), _sincos_1d(embed_dim // 2, xs)], axis=1
    )
    return torch.from_numpy(emb).float()


def drop_path(x: torch.Tensor, p: float, training: bool) -> torch.Tensor:
    if p == 0.0 or not training:
        return x
    keep = 1.0 - p
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    mask = torch.rand(shape, dtype=x.dtype, device=x.device).add_(keep).floor_()
    return x / keep * mask


class DropPath(nn.Module):
    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x):
        return drop_path(x, self.p, self.training)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int, out_dim: int | None = None):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, out_dim or dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class SelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        assert dim % num_heads == 0
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, drop_path_p: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self.drop_path = DropPath(drop_path_p)

    def forward(self, x):
        x = x + self.drop_path(self.attn(self.norm1(x)))
        return x + self.drop_path(self.mlp(self.norm2(x)))


class VisionEncoder(nn.Module):
    """ViT over single-channel images; optional visible-token subset."""

    def __init__(self, cfg: EncoderSection, drop_path_rate: float = 0.0):
        super().__init__()
        self.cfg = cfg
        self.grid = cfg.image_size // cfg.patch_size
        self.num_patches = self.grid * self.grid
        self.patch_embed = nn.Conv2d(
            1, cfg.embed_dim, kernel_size=cfg.patch_size, stride=cfg.patch_size
        )
        pos = sincos_pos_embed_2d(cfg.embed_dim, self.grid, self.grid)
        self.register_buffer("pos_embed", pos.unsqueeze(0), persistent=False)
        rates = torch.linspace(0, drop_path_rate, cfg.depth).tolist()
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.num_heads, drop_path_p=r) for r in rates
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.apply(_init_weights)

    def forward(self, images: torch.Tensor, keep: torch.Tensor | None = None) -> torch.Tensor:
        """Token features: (B, |keep|, D), or the full grid when keep is None."""
        if images.ndim == 3:
            images = images.unsqueeze(1)
        x = self.patch_embed(images).flatten(2).transpose(1, 2)
        x = x + self.pos_embed
        if keep is not None:
            x = x[:, keep, :]
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def pooled(self, images: torch.Tensor) -> torch.Tensor:
        return self.forward(images).mean(dim=1)


def _init_weights(m: nn.Module) -> None:
    if isinstance(m, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)
