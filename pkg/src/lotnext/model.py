"""Sequence model: trajectory embedding, causal transformer encoder,
distance-decay prefix attention, and the user-fused prediction heads.

Tensor shape conventions: ``B`` batch, ``n`` window steps, ``P`` POIs,
``d`` the encoder width (POI dim + time dim).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import N_TIME_SLOTS
from .spatial import EARTH_RADIUS_KM, SpatialParams


@dataclass(frozen=True)
class ModelConfig:
    d_poi: int = 10
    d_user: int = 10
    d_time: int = 6
    n_heads: int = 2
    n_blocks: int = 2
    window_len: int = 20
    ffn_hidden: int = 0  # 0 selects 4 * d_model
    dropout: float = 0.0
    ffn_block: str = "norm-add"  # "norm-add": LN(z) + FFN(z); "add-norm": LN(z + FFN(z))

    def __post_init__(self):
        for name in ("d_poi", "d_user", "d_time", "n_heads", "n_blocks", "window_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_poi + d_time = {self.d_model} must be divisible by n_heads = {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.ffn_block not in ("norm-add", "add-norm"):
            raise ValueError(f"unknown ffn_block {self.ffn_block!r}")

    @property
    def d_model(self) -> int:
        return self.d_poi + self.d_time

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden if self.ffn_hidden > 0 else 4 * self.d_model

    @property
    def d_hidden(self) -> int:
        """Width of the prediction-head input (encoder output plus user dim)."""
        return self.d_model + self.d_user


@dataclass
class ForwardOutput:
    logits: torch.Tensor     # (B, n, P)
    time_pred: torch.Tensor  # (B, n), values in (0, 1)
    hidden: torch.Tensor     # (B, n, d_model + d_user)


def _haversine_t(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = (torch.deg2rad(v) for v in (lat1, lon1, lat2, lon2))
    a = (
        torch.sin((lat2 - lat1) / 2.0) ** 2
        + torch.cos(lat1) * torch.cos(lat2) * torch.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_KM * torch.asin(torch.sqrt(torch.clamp(a, 0.0, 1.0)))


def spatial_context_attention(
    z: torch.Tensor, lat: torch.Tensor, lon: torch.Tensor, params: SpatialParams
) -> torch.Tensor:
    """Causal prefix average of encoder states weighted by spatial proximity.

    Step k is the normalized sum over j <= k of
    ``(exp(-beta * distance(p_j, p_k)) + epsilon) * z_j``. Coordinates are
    data, not parameters, so the weights carry no gradient.
    """
    if z.dim() != 3 or lat.shape != lon.shape or lat.shape != z.shape[:2]:
        raise ValueError("z must be (B, n, d) with coordinates shaped (B, n)")
    n = z.shape[1]
    with torch.no_grad():
        dist = _haversine_t(
            lat.unsqueeze(2), lon.unsqueeze(2), lat.unsqueeze(1), lon.unsqueeze(1)
        )  # (B, n, n); [b, k, j] = distance between steps k and j
        w = torch.exp(-params.beta * dist) + params.epsilon
        causal = torch.tril(torch.ones(n, n, dtype=torch.bool, device=z.device))
        w = w * causal.to(w.dtype)
    return (w.to(z.dtype) @ z) / w.to(z.dtype).sum(dim=2, keepdim=True)


class EncoderBlock(nn.Module):
    """Causal multi-head self-attention followed by a two-layer FFN."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.d_head = d // cfg.n_heads
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d, bias=False)
        self.w_o = nn.Linear(d, d, bias=False)
        self.norm_attn = nn.LayerNorm(d)
        self.norm_ffn = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_width), nn.ReLU(), nn.Linear(cfg.ffn_width, d)
        )
        self.drop = nn.Dropout(cfg.dropout)
        self.ffn_block = cfg.ffn_block

    def attention(self, x: torch.Tensor, return_probs: bool = False):
        b, n, d = x.shape
        def split(t):
            return t.view(b, n, self.n_heads, self.d_head).transpose(1, 2)
        q, k, v = split(self.w_q(x)), split(self.w_k(x)), split(self.w_v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)  # (B, H, n, n)
        causal = torch.tril(torch.ones(n, n, dtype=torch.bool, device=x.device))
        scores = scores.masked_fill(~causal, float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        ctx = (probs @ v).transpose(1, 2).reshape(b, n, d)
        out = self.w_o(ctx)
        return (out, probs) if return_probs else (out, None)

    def forward(self, x: torch.Tensor, return_probs: bool = False):
        attn, probs = self.attention(x, return_probs)
        z = self.norm_attn(x + self.drop(attn))
        if self.ffn_block == "norm-add":
            out = self.norm_ffn(z) + self.drop(self.ffn(z))
        else:
            out = self.norm_ffn(z + self.drop(self.ffn(z)))
        return (out, probs) if return_probs else out


class LoTNextNet(nn.Module):
    """End-to-end network from index sequences to per-step POI logits.

    The POI embedding table passed to :meth:`forward` is normally the fused
    graph-convolution output; passing ``poi_emb`` itself skips the graph
    path entirely.
    """

    def __init__(self, n_users: int, n_pois: int, cfg: ModelConfig, spatial: SpatialParams):
        super().__init__()
        self.cfg = cfg
        self.spatial = spatial
        self.n_users = n_users
        self.n_pois = n_pois
        self.poi_emb = nn.Parameter(_uniform_embedding(n_pois, cfg.d_poi))
        self.time_emb = nn.Parameter(_uniform_embedding(N_TIME_SLOTS, cfg.d_time))
        self.user_emb = nn.Parameter(_uniform_embedding(n_users, cfg.d_user))
        self.pos_emb = nn.Parameter(_uniform_embedding(cfg.window_len, cfg.d_model))
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.n_blocks))
        self.head = nn.Linear(cfg.d_hidden, n_pois)
        self.time_head = nn.Linear(cfg.d_hidden, 1)
        self.apply(_init_linear)

    def embed_sequence(
        self, poi_table: torch.Tensor, poi_idx: torch.Tensor, slot_idx: torch.Tensor
    ) -> torch.Tensor:
        """Concatenate POI and time-slot embedding rows: (..., n) -> (..., n, d_model)."""
        if poi_idx.min() < 0 or poi_idx.max() >= poi_table.shape[0]:
            raise IndexError("poi index out of range")
        if slot_idx.min() < 0 or slot_idx.max() >= N_TIME_SLOTS:
            raise IndexError("time slot out of range")
        return torch.cat([poi_table[poi_idx], self.time_emb[slot_idx]], dim=-1)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Add positions and run the causal encoder stack on (B, n, d_model)."""
        n = x.shape[1]
        if n > self.cfg.window_len:
            raise ValueError(f"sequence length {n} exceeds window_len {self.cfg.window_len}")
        x = x + self.pos_emb[:n]
        for block in self.blocks:
            x = block(x)
        return x

    def forward(
        self,
        poi_idx: torch.Tensor,
        slot_idx: torch.Tensor,
        lat: torch.Tensor,
        lon: torch.Tensor,
        user_idx: torch.Tensor,
        poi_table: torch.Tensor,
    ) -> ForwardOutput:
        """Full forward pass.

        Args:
            poi_idx, slot_idx: (B, n) integer index sequences.
            lat, lon: (B, n) coordinates of the input POIs, degrees.
            user_idx: (B,) user indices.
            poi_table: (P, d_poi) POI embedding table to read rows from.
        """
        x = self.embed_sequence(poi_table, poi_idx, slot_idx)
        z = self.encode(x)
        z_ref = spatial_context_attention(z, lat, lon, self.spatial)
        n = z_ref.shape[1]
        u = self.user_emb[user_idx].unsqueeze(1).expand(-1, n, -1)
        hidden = torch.cat([z_ref, u], dim=-1)
        logits = self.head(hidden)
        time_pred = torch.sigmoid(self.time_head(hidden)).squeeze(-1)
        return ForwardOutput(logits=logits, time_pred=time_pred, hidden=hidden)


def _uniform_embedding(rows: int, dim: int) -> torch.Tensor:
    bound = 1.0 / math.sqrt(dim)
    return torch.empty(rows, dim).uniform_(-bound, bound)


def _init_linear(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
