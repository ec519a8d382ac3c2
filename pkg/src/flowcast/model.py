"""The full forecaster: enhancement streams, recurrent encoders, fusion,
sequence attention and projection, plus the plain recurrent baselines.

Forward contract: x is [batch, history, node, 1] normalized flow, d the
precomputed decomposition channels [batch, history, node, C_d], ext the
encoded external factors [batch, history, 7]. Ablation switches drop
stages; with every enhancement stream disabled a single raw stream feeds
one encoder.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .fusion import (ChannelAttentionFusion, ExternalEmbedding,
                     OutputProjection, SelfAttentionEnhancer,
                     positional_encoding)
from .graph import DynamicGraphEncoder
from .temporal import HistoryEnhancer, PeakAmplifier, init_uniform_


class PlainGRUEncoder(nn.Module):
    """Per-node GRU encoder used when the dynamic graph stage is ablated."""

    def __init__(self, in_channels: int, hidden_size: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.hidden_size = hidden_size
        self.rnn = nn.GRU(in_channels, hidden_size, batch_first=True,
                          dtype=torch.float64)
        for param in self.rnn.parameters():
            init_uniform_(param, hidden_size, generator)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        b, p, n, c = seq.shape
        flat = seq.permute(0, 2, 1, 3).reshape(b * n, p, c)
        out, _ = self.rnn(flat)
        return out.reshape(b, n, p, self.hidden_size).permute(0, 2, 1, 3)


class FlowForecaster(nn.Module):
    """Multi-stream forecaster with ablation switches wired through."""

    def __init__(self, cfg: ModelConfig, n_nodes: int):
        super().__init__()
        self.cfg = cfg
        self.n_nodes = n_nodes
        generator = torch.Generator().manual_seed(cfg.seed)

        c_d = cfg.decomposition_channels
        enhance_in = c_d if cfg.enhance_decomposed else 1
        self.history_enhancer = None
        self.peak_amplifier = None
        stream_channels: dict[str, int] = {}
        if cfg.use_decomposition:
            stream_channels["decomposition"] = c_d
        if cfg.use_history_enhance:
            self.history_enhancer = HistoryEnhancer(n_nodes, cfg.tcn, generator)
            stream_channels["history"] = cfg.tcn.num_blocks * enhance_in
        if cfg.use_peak_amplify:
            self.peak_amplifier = PeakAmplifier(cfg.peak)
            stream_channels["peak"] = cfg.peak.num_blocks * enhance_in
        if not stream_channels:
            stream_channels["raw"] = 1
        self.stream_names = list(stream_channels)

        def _encoder(in_channels: int) -> nn.Module:
            if cfg.use_dynamic_graph:
                return DynamicGraphEncoder(
                    n_nodes, in_channels, cfg.embed_size, cfg.node_embed_size,
                    cfg.num_rnn_layers, cfg.graph_degree, generator)
            return PlainGRUEncoder(in_channels, cfg.embed_size, generator)

        self.encoders = nn.ModuleDict(
            {name: _encoder(c) for name, c in stream_channels.items()})

        self.fusion = None
        if cfg.use_channel_attention and len(self.stream_names) > 1:
            self.fusion = ChannelAttentionFusion(
                len(self.stream_names), generator=generator)

        self.external_embedding = None
        self.attention = None
        if cfg.use_self_attention:
            self.register_buffer(
                "position_table",
                positional_encoding(cfg.history, cfg.embed_size))
            self.external_embedding = ExternalEmbedding(
                cfg.embed_size, generator=generator)
            self.attention = SelfAttentionEnhancer(
                cfg.embed_size, cfg.attention_layers, cfg.attention_dropout,
                generator)

        self.projection = OutputProjection(cfg.history, cfg.horizon,
                                           cfg.embed_size, 1, generator)

    def stream_inputs(self, x: torch.Tensor,
                      d: torch.Tensor | None) -> dict[str, torch.Tensor]:
        cfg = self.cfg
        needs_d = cfg.use_decomposition or (
            cfg.enhance_decomposed and (cfg.use_history_enhance
                                        or cfg.use_peak_amplify))
        if needs_d and d is None:
            raise ValueError("decomposition channels required by this config")
        enhance_src = d if cfg.enhance_decomposed else x
        inputs = {}
        for name in self.stream_names:
            if name == "decomposition":
                inputs[name] = d
            elif name == "history":
                inputs[name] = self.history_enhancer(enhance_src)
            elif name == "peak":
                inputs[name] = self.peak_amplifier(enhance_src)
            else:
                inputs[name] = x
        return inputs

    def forward(self, x: torch.Tensor, d: torch.Tensor | None = None,
                ext: torch.Tensor | None = None) -> torch.Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.history or x.shape[2] != self.n_nodes:
            raise ValueError(
                f"expected x of shape [B, {cfg.history}, {self.n_nodes}, 1], "
                f"got {tuple(x.shape)}")
        inputs = self.stream_inputs(x, d)
        embeddings = [self.encoders[name](inputs[name])
                      for name in self.stream_names]
        if self.fusion is not None:
            fused = self.fusion(embeddings)
        elif len(embeddings) > 1:
            fused = torch.stack(embeddings, dim=0).sum(dim=0)
        else:
            fused = embeddings[0]
        if cfg.use_self_attention:
            if ext is None:
                raise ValueError("external factors required by this config")
            enriched = fused + self.position_table.reshape(1, cfg.history, 1, -1)
            enriched = enriched + self.external_embedding(ext).unsqueeze(2)
            fused = self.attention(enriched)
        return self.projection(fused)


class RecurrentBaseline(nn.Module):
    """Per-node GRU/LSTM with the same projection head as the full model."""

    KINDS = ("gru", "lstm")

    def __init__(self, kind: str, cfg: ModelConfig, n_nodes: int):
        super().__init__()
        if kind not in self.KINDS:
            raise ValueError(
                f"unsupported baseline {kind!r}; supported: {list(self.KINDS)}")
        self.kind = kind
        self.cfg = cfg
        self.n_nodes = n_nodes
        generator = torch.Generator().manual_seed(cfg.seed)
        rnn_cls = nn.GRU if kind == "gru" else nn.LSTM
        self.rnn = rnn_cls(1, cfg.embed_size, batch_first=True,
                           dtype=torch.float64)
        for param in self.rnn.parameters():
            init_uniform_(param, cfg.embed_size, generator)
        self.projection = OutputProjection(cfg.history, cfg.horizon,
                                           cfg.embed_size, 1, generator)

    def forward(self, x: torch.Tensor, d: torch.Tensor | None = None,
                ext: torch.Tensor | None = None) -> torch.Tensor:
        b, p, n, c = x.shape
        flat = x.permute(0, 2, 1, 3).reshape(b * n, p, c)
        out, _ = self.rnn(flat)
        emb = out.reshape(b, n, p, -1).permute(0, 2, 1, 3)
        return self.projection(emb)


def build_model(cfg: ModelConfig, n_nodes: int) -> FlowForecaster:
    return FlowForecaster(cfg, n_nodes)


def baseline(kind: str, cfg: ModelConfig, n_nodes: int) -> RecurrentBaseline:
    return RecurrentBaseline(kind, cfg, n_nodes)


def parameter_census(model: nn.Module) -> dict[str, int]:
    """Trainable parameter counts grouped by top-level child module."""
    census: dict[str, int] = {}
    for name, child in model.named_children():
        count = sum(p.numel() for p in child.parameters() if p.requires_grad)
        if count:
            census[name] = count
    total = sum(p.numel() for p in model.parameters() if p.requires_grad)
    census["total"] = total
    return census
