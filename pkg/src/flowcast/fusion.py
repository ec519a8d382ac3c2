"""Stream fusion and sequence enhancement.

Channel attention fuses the per-stream encoder embeddings with a softmax
similarity map between flattened streams plus pooled simplex weights. The
fused sequence, enriched with sinusoidal positions and external-factor
embeddings, passes through per-node temporal self-attention before the
output projection.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .temporal import init_uniform_


class ChannelAttentionFusion(nn.Module):
    """Adaptive fusion of S stream embeddings of shape [batch, P, N, F].

    Per step: streams are flattened to [S, N*F]; the attention map is a
    row-softmax of their scaled inner products (scale sqrt(N*F)); pooled
    per-stream means pass through a small MLP and a softmax to form simplex
    weights; the output is the weight-averaged strengthened streams.
    Identical streams pass through unchanged.
    """

    def __init__(self, n_streams: int, hidden: int = 8,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.n_streams = n_streams
        self.mlp_in = nn.Parameter(torch.empty(n_streams, hidden, dtype=torch.float64))
        self.mlp_in_bias = nn.Parameter(torch.empty(hidden, dtype=torch.float64))
        self.mlp_out = nn.Parameter(torch.empty(hidden, n_streams, dtype=torch.float64))
        self.mlp_out_bias = nn.Parameter(torch.empty(n_streams, dtype=torch.float64))
        init_uniform_(self.mlp_in, n_streams, generator)
        init_uniform_(self.mlp_in_bias, n_streams, generator)
        init_uniform_(self.mlp_out, hidden, generator)
        init_uniform_(self.mlp_out_bias, hidden, generator)

    def attention_map(self, stacked: torch.Tensor) -> torch.Tensor:
        """Row-stochastic [.., S, S] map from stacked [.., S, N, F] streams."""
        s, n, f = stacked.shape[-3:]
        flat = stacked.reshape(*stacked.shape[:-2], n * f)
        scale = math.sqrt(n * f)
        return F.softmax((flat / scale) @ flat.transpose(-1, -2), dim=-1)

    def stream_weights(self, stacked: torch.Tensor) -> torch.Tensor:
        pooled = stacked.mean(dim=(-1, -2))  # [.., S]
        hidden = F.relu(pooled @ self.mlp_in + self.mlp_in_bias)
        return F.softmax(hidden @ self.mlp_out + self.mlp_out_bias, dim=-1)

    def forward(self, streams: list[torch.Tensor]) -> torch.Tensor:
        if len(streams) != self.n_streams:
            raise ValueError(f"expected {self.n_streams} streams, got {len(streams)}")
        stacked = torch.stack(streams, dim=2)  # [B, P, S, N, F]
        b, p, s, n, f = stacked.shape
        flat = stacked.reshape(b, p, s, n * f)
        strengthened = self.attention_map(stacked) @ flat
        weights = self.stream_weights(stacked)  # [B, P, S]
        fused = (weights.unsqueeze(-1) * strengthened).sum(dim=2)
        return fused.reshape(b, p, n, f)


def positional_encoding(length: int, width: int,
                        dtype=torch.float64) -> torch.Tensor:
    """Sine/cosine position table: even columns sin, odd columns cos."""
    if width % 2 != 0:
        raise ValueError("positional encoding width must be even")
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    freq = torch.pow(torch.tensor(10000.0, dtype=dtype),
                     -torch.arange(0, width, 2, dtype=dtype) / width)
    table = torch.empty(length, width, dtype=dtype)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq)
    return table


class ExternalEmbedding(nn.Module):
    """Affine map from the 7 factor columns to the embedding width."""

    def __init__(self, width: int, n_factors: int = 7,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_factors, width, dtype=torch.float64))
        self.bias = nn.Parameter(torch.empty(width, dtype=torch.float64))
        init_uniform_(self.weight, n_factors, generator)
        init_uniform_(self.bias, n_factors, generator)

    def forward(self, factors: torch.Tensor) -> torch.Tensor:
        return factors @ self.weight + self.bias


class SelfAttentionBlock(nn.Module):
    """Single-head temporal self-attention over each node's sequence.

    Layer-normalize over the feature axis, apply dropout to the attention
    inputs, attend over the history positions with scale 1/sqrt(F), then add
    the normalized input back.
    """

    def __init__(self, width: int, dropout: float = 0.1,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.norm = nn.LayerNorm(width, dtype=torch.float64)
        self.dropout = dropout
        def _proj():
            p = nn.Parameter(torch.empty(width, width, dtype=torch.float64))
            init_uniform_(p, width, generator)
            return p
        self.w_query, self.w_key, self.w_value = _proj(), _proj(), _proj()

    def attention_weights(self, normed: torch.Tensor) -> torch.Tensor:
        """Row-stochastic [.., P, P] attention over time positions."""
        q = normed @ self.w_query
        k = normed @ self.w_key
        scale = math.sqrt(normed.shape[-1])
        return F.softmax(q @ k.transpose(-1, -2) / scale, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, P, N, F] -> attend over P independently per node
        seq = x.permute(0, 2, 1, 3)  # [B, N, P, F]
        normed = self.norm(seq)
        dropped = F.dropout(normed, self.dropout, training=self.training)
        attn = self.attention_weights(dropped)
        out = attn @ (dropped @ self.w_value) + normed
        return out.permute(0, 2, 1, 3)


class SelfAttentionEnhancer(nn.Module):
    """Stack of temporal self-attention blocks; shape preserved."""

    def __init__(self, width: int, num_blocks: int = 2, dropout: float = 0.1,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.blocks = nn.ModuleList([
            SelfAttentionBlock(width, dropout, generator)
            for _ in range(num_blocks)
        ])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class OutputProjection(nn.Module):
    """Project the time axis P -> Q, then the feature axis F -> C."""

    def __init__(self, history: int, horizon: int, width: int,
                 out_channels: int = 1,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.time_weight = nn.Parameter(torch.empty(history, horizon,
                                                    dtype=torch.float64))
        self.time_bias = nn.Parameter(torch.empty(horizon, dtype=torch.float64))
        self.feat_weight = nn.Parameter(torch.empty(width, out_channels,
                                                    dtype=torch.float64))
        self.feat_bias = nn.Parameter(torch.empty(out_channels, dtype=torch.float64))
        init_uniform_(self.time_weight, history, generator)
        init_uniform_(self.time_bias, history, generator)
        init_uniform_(self.feat_weight, width, generator)
        init_uniform_(self.feat_bias, width, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # [B, P, N, F] -> [B, Q, N, F] -> [B, Q, N, C]
        timewise = torch.einsum("bpnf,pq->bqnf", x, self.time_weight)
        timewise = timewise + self.time_bias.reshape(1, -1, 1, 1)
        return timewise @ self.feat_weight + self.feat_bias
