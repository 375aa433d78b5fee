"""Attention over history frames, with per-query motion-conditioned keys.

Every query frame i owns its own key/value set built from the other
frames' features concatenated with the pairwise motion feature z[i->j], so
attention weights can depend on how far (in probe space) each history frame
sits from the query frame. Queries come from the frame feature alone.

Reductions over the key axis (softmax denominator and the weighted value
sum) are computed in value-sorted order. Floating-point addition is not
associative, so without a canonical order a permutation of the input
frames would perturb the last bits of the output; sorting makes the
permutation-equivariance and constant-motion reduction laws hold exactly.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..world_model.vit import _init_weights

__all__ = ["ordered_sum", "PairwiseAttention", "pairwise_attend"]


def ordered_sum(x: torch.Tensor, dim: int, keepdim: bool = False) -> torch.Tensor:
    """Sum along ``dim`` with summands arranged in ascending value order."""
    vals, _ = torch.sort(x, dim=dim)
    return vals.sum(dim=dim, keepdim=keepdim)


def pairwise_attend(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, num_heads: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention with per-query key/value sets.

    q: (B, N, D); k, v: (B, N, N, D) indexed [query, key]. Returns the
    attention output (B, N, D) and the head-resolved scores (B, H, N, N).
    """
    b, n, d = q.shape
    dh = d // num_heads
    qh = q.reshape(b, n, 1, num_heads, dh)
    kh = k.reshape(b, n, n, num_heads, dh)
    vh = v.reshape(b, n, n, num_heads, dh)
    logits = (qh * kh).sum(dim=-1) / dh**0.5  # (B, Nq, Nk, H)
    peak = logits.max(dim=2, keepdim=True).values
    expl = torch.exp(logits - peak)
    denom = ordered_sum(expl, dim=2, keepdim=True)
    weights = expl / denom
    out = ordered_sum(weights.unsqueeze(-1) * vh, dim=2)  # (B, Nq, H, Dh)
    return out.reshape(b, n, d), weights.permute(0, 3, 1, 2)


class _KvMlp(nn.Module):
    def __init__(self, in_dim: int, width: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, width), nn.GELU(), nn.Linear(width, width))
        self.apply(_init_weights)

    def forward(self, x):
        return self.net(x)


class PairwiseAttention(nn.Module):
    """One attention block over frame features, with or without motion input.

    With ``use_motion`` the key/value MLPs consume concat(h_j, z[i->j]);
    without it they consume h_j alone (the motion-blind ablation), in which
    case an optional constant motion fill can be appended to reproduce the
    attention math on constant-augmented inputs.
    """

    def __init__(
        self,
        feature_dim: int,
        motion_dim: int,
        width: int,
        num_heads: int,
        use_motion: bool = True,
    ):
        super().__init__()
        if width % num_heads != 0:
            raise ValueError("attention width must divide evenly into heads")
        self.use_motion = use_motion
        self.num_heads = num_heads
        self.motion_dim = motion_dim
        kv_in = feature_dim + motion_dim if use_motion else feature_dim
        self.mlp_q = _KvMlp(feature_dim, width)
        self.mlp_k = _KvMlp(kv_in, width)
        self.mlp_v = _KvMlp(kv_in, width)

    def forward(
        self,
        h: torch.Tensor,
        z: torch.Tensor | None = None,
        return_scores: bool = False,
    ):
        """h: (B, N, D_img); z: (B, N, N, D_mo) when motion-aware."""
        b, n, _ = h.shape
        h_exp = h.unsqueeze(1).expand(b, n, n, h.shape[-1])
        if self.use_motion:
            if z is None:
                raise ValueError("motion-aware attention requires the pairwise grid z")
            kv_in = torch.cat([h_exp, z], dim=-1)
        else:
            if z is not None:
                raise ValueError("standard attention takes no motion input")
            kv_in = h_exp
        q = self.mlp_q(h)
        k = self.mlp_k(kv_in)
        v = self.mlp_v(kv_in)
        out, scores = pairwise_attend(q, k, v, self.num_heads)
        return (out, scores) if return_scores else out

    def forward_shared_kv(self, h_aug: torch.Tensor, q_features: torch.Tensor):
        """Attention with one key/value per frame, shared by all queries.

        ``h_aug`` feeds the key/value MLPs directly; used to verify that the
        per-query formulation collapses to this when the motion grid is
        constant.
        """
        b, n, _ = q_features.shape
        q = self.mlp_q(q_features)
        k = self.mlp_k(h_aug).unsqueeze(1).expand(b, n, n, -1)
        v = self.mlp_v(h_aug).unsqueeze(1).expand(b, n, n, -1)
        out, scores = pairwise_attend(q, k, v, self.num_heads)
        return out, scores
