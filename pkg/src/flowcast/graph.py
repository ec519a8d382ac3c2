"""Recurrent encoding with a data-driven graph convolution kernel.

At every time step the node embedding table is modulated by the current
input, similarity between the modulated embeddings forms a dense adjacency,
and the normalized kernel g = I + D^-1/2 ReLU(A) D^-1/2 drives the gate
transforms of a GRU-style cell. One kernel per step is shared by all three
gates.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .temporal import init_uniform_

DEGREE_EPS = 1e-6


@dataclass
class DynamicGraphState:
    """Intermediate quantities of one kernel construction."""

    dyn_embed: torch.Tensor   # [batch, node, embed]
    similarity: torch.Tensor  # [batch, node, node]
    kernel: torch.Tensor      # [batch, node, node]
    degree: torch.Tensor      # [batch, node]


def kernel_from_embedding(dyn_embed: torch.Tensor,
                          degree_mode: str = "weighted") -> DynamicGraphState:
    """Build the normalized convolution kernel from modulated embeddings.

    similarity = E E^T; kernel = I + D^-1/2 ReLU(similarity) D^-1/2 with D
    the (weighted or binary) degree of ReLU(similarity) plus a small
    epsilon, which keeps isolated nodes at the identity row.
    """
    e = dyn_embed if dyn_embed.ndim == 3 else dyn_embed.unsqueeze(0)
    similarity = e @ e.transpose(-1, -2)
    positive = F.relu(similarity)
    if degree_mode == "weighted":
        degree = positive.sum(dim=-1)
    elif degree_mode == "binary":
        degree = (positive > 0).to(positive.dtype).sum(dim=-1)
    else:
        raise ValueError(f"unknown degree_mode {degree_mode!r}")
    inv_sqrt = (degree + DEGREE_EPS).rsqrt()
    normalized = positive * inv_sqrt.unsqueeze(-1) * inv_sqrt.unsqueeze(-2)
    eye = torch.eye(e.shape[-2], dtype=e.dtype, device=e.device)
    kernel = eye + normalized
    if dyn_embed.ndim == 2:
        return DynamicGraphState(e[0], similarity[0], kernel[0], degree[0])
    return DynamicGraphState(e, similarity, kernel, degree)


def graph_conv(kernel: torch.Tensor, feats: torch.Tensor,
               theta: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """kernel @ feats @ theta + bias for [batch, node, channel] features."""
    if kernel.shape[-1] != feats.shape[-2] or feats.shape[-1] != theta.shape[0]:
        raise ValueError(
            f"shape mismatch: kernel {tuple(kernel.shape)}, feats "
            f"{tuple(feats.shape)}, theta {tuple(theta.shape)}")
    return kernel @ feats @ theta + bias


class DynamicKernelBuilder(nn.Module):
    """Embedding table + input MLP producing the per-step kernel."""

    def __init__(self, n_nodes: int, in_channels: int, embed_size: int,
                 degree_mode: str = "weighted",
                 generator: torch.Generator | None = None):
        super().__init__()
        self.degree_mode = degree_mode
        self.node_embed = nn.Parameter(torch.empty(n_nodes, embed_size,
                                                   dtype=torch.float64))
        init_uniform_(self.node_embed, embed_size, generator)
        self.mlp_in = nn.Parameter(torch.empty(in_channels, embed_size,
                                               dtype=torch.float64))
        self.mlp_in_bias = nn.Parameter(torch.empty(embed_size, dtype=torch.float64))
        self.mlp_out = nn.Parameter(torch.empty(embed_size, embed_size,
                                                dtype=torch.float64))
        self.mlp_out_bias = nn.Parameter(torch.empty(embed_size, dtype=torch.float64))
        init_uniform_(self.mlp_in, in_channels, generator)
        init_uniform_(self.mlp_in_bias, in_channels, generator)
        init_uniform_(self.mlp_out, embed_size, generator)
        init_uniform_(self.mlp_out_bias, embed_size, generator)

    def forward(self, chi: torch.Tensor) -> DynamicGraphState:
        if not torch.isfinite(chi).all():
            raise ValueError("non-finite input to dynamic kernel construction")
        hidden = F.relu(chi @ self.mlp_in + self.mlp_in_bias)
        local = hidden @ self.mlp_out + self.mlp_out_bias
        dyn_embed = torch.tanh(self.node_embed * local)
        return kernel_from_embedding(dyn_embed, self.degree_mode)


class GraphGRUCell(nn.Module):
    """GRU-style cell whose gate transforms are graph convolutions."""

    def __init__(self, n_nodes: int, in_channels: int, hidden_size: int,
                 embed_size: int, degree_mode: str = "weighted",
                 generator: torch.Generator | None = None):
        super().__init__()
        self.hidden_size = hidden_size
        self.kernel_builder = DynamicKernelBuilder(
            n_nodes, in_channels, embed_size, degree_mode, generator)
        fan_in = hidden_size + in_channels
        def _theta():
            p = nn.Parameter(torch.empty(fan_in, hidden_size, dtype=torch.float64))
            init_uniform_(p, fan_in, generator)
            return p
        def _bias():
            p = nn.Parameter(torch.empty(hidden_size, dtype=torch.float64))
            init_uniform_(p, fan_in, generator)
            return p
        self.theta_reset, self.bias_reset = _theta(), _bias()
        self.theta_update, self.bias_update = _theta(), _bias()
        self.theta_cand, self.bias_cand = _theta(), _bias()

    def forward(self, chi: torch.Tensor, h_prev: torch.Tensor,
                return_state: bool = False):
        state = self.kernel_builder(chi)
        kernel = state.kernel
        gate_in = torch.cat([h_prev, chi], dim=-1)
        reset = torch.sigmoid(graph_conv(kernel, gate_in,
                                         self.theta_reset, self.bias_reset))
        update = torch.sigmoid(graph_conv(kernel, gate_in,
                                          self.theta_update, self.bias_update))
        cand_in = torch.cat([reset * h_prev, chi], dim=-1)
        candidate = torch.tanh(graph_conv(kernel, cand_in,
                                          self.theta_cand, self.bias_cand))
        h = update * candidate + (1.0 - update) * h_prev
        if return_state:
            return h, state, reset, update, candidate
        return h


class DynamicGraphEncoder(nn.Module):
    """Unrolled (optionally stacked) recurrence over a history window.

    Maps [batch, history, node, in_channels] to [batch, history, node,
    hidden]; layer l > 1 consumes layer l-1's per-step hidden states and
    rebuilds its kernel from them.
    """

    def __init__(self, n_nodes: int, in_channels: int, hidden_size: int,
                 embed_size: int, num_layers: int = 1,
                 degree_mode: str = "weighted",
                 generator: torch.Generator | None = None):
        super().__init__()
        self.hidden_size = hidden_size
        self.cells = nn.ModuleList([
            GraphGRUCell(n_nodes,
                         in_channels if layer == 0 else hidden_size,
                         hidden_size, embed_size, degree_mode, generator)
            for layer in range(num_layers)
        ])

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        b, p, n, _ = seq.shape
        current = seq
        for cell in self.cells:
            h = torch.zeros(b, n, self.hidden_size,
                            dtype=seq.dtype, device=seq.device)
            outs = []
            for t in range(p):
                h = cell(current[:, t], h)
                outs.append(h)
            current = torch.stack(outs, dim=1)
        return current
