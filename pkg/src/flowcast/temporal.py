"""Temporal feature enhancement: causal convolution stacks and peak pooling.

Both streams map a [batch, history, node, channel] tensor to the same
length, touching only past samples. Convolutions are learned per node
(grouped convolution with one group per node); pooling has no parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class TcnStackConfig:
    """Stack of residual conv blocks; block i >= 1 uses kernel size 2i+1."""

    num_blocks: int = 12
    layers_per_block: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.num_blocks < 1 or self.layers_per_block < 1:
            raise ValueError("block and layer counts must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    def kernel_size(self, block_index: int) -> int:
        return 2 * block_index + 1


@dataclass
class PeakStackConfig:
    """Causal max-pool stack; block i >= 1 uses window 2i+1."""

    num_blocks: int = 6

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")

    def kernel_size(self, block_index: int) -> int:
        return 2 * block_index + 1


def dilated_causal_conv(seq, weights, dilation: int = 1) -> torch.Tensor:
    """out(t) = sum_i seq(t - dilation*i) * weights[i], with seq(t<0) = 0.

    Accepts a 1-D sequence (or [batch, channel, time]) and a 1-D kernel;
    output has the input's length, and out(t) never reads beyond t.
    """
    s = torch.as_tensor(seq, dtype=torch.float64)
    w = torch.as_tensor(weights, dtype=torch.float64)
    if dilation < 1 or w.ndim != 1 or len(w) < 1:
        raise ValueError("need dilation >= 1 and a 1-D kernel")
    squeeze = s.ndim == 1
    x = s.reshape(1, 1, -1) if squeeze else s
    pad = (len(w) - 1) * dilation
    out = F.conv1d(F.pad(x, (pad, 0)), w.flip(0).reshape(1, 1, -1),
                   dilation=dilation)
    return out.reshape(-1) if squeeze else out


def stack_receptive_field(kernel_sizes, dilations) -> int:
    """Steps of history visible to the last output of chained causal convs."""
    return 1 + sum((k - 1) * d for k, d in zip(kernel_sizes, dilations))


def init_uniform_(tensor: torch.Tensor, fan_in: int,
                  generator: torch.Generator | None = None) -> torch.Tensor:
    bound = 1.0 / max(fan_in, 1) ** 0.5
    with torch.no_grad():
        return tensor.uniform_(-bound, bound, generator=generator)


class CausalNodeConv(nn.Module):
    """Weight-normalized causal conv, one independent kernel per node.

    Input/output are [batch, node, time]; the effective kernel is
    gain * direction/||direction|| so the norm and orientation are learned
    separately.
    """

    def __init__(self, n_nodes: int, kernel_size: int, dilation: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.direction = nn.Parameter(torch.empty(n_nodes, 1, kernel_size,
                                                  dtype=torch.float64))
        init_uniform_(self.direction, kernel_size, generator)
        with torch.no_grad():
            norms = self.direction.reshape(n_nodes, -1).norm(dim=1)
        self.gain = nn.Parameter(norms.clone())
        self.bias = nn.Parameter(torch.zeros(n_nodes, dtype=torch.float64))
        init_uniform_(self.bias, kernel_size, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        norms = self.direction.reshape(self.direction.shape[0], -1).norm(dim=1)
        weight = self.direction * (self.gain / (norms + 1e-12)).reshape(-1, 1, 1)
        pad = (self.kernel_size - 1) * self.dilation
        return F.conv1d(F.pad(x, (pad, 0)), weight, self.bias,
                        dilation=self.dilation, groups=x.shape[1])


class ConvBlock(nn.Module):
    """Causal conv -> ReLU -> dropout (train mode only); length preserved."""

    def __init__(self, n_nodes: int, kernel_size: int, dilation: int,
                 dropout: float, generator: torch.Generator | None = None):
        super().__init__()
        self.conv = CausalNodeConv(n_nodes, kernel_size, dilation, generator)
        self.dropout = dropout

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.conv(x))
        return F.dropout(out, self.dropout, training=self.training)


class TcnBlock(nn.Module):
    """Residual pair of conv blocks with dilations 1, 2, 4, ... per layer.

    With all parameters zero the block is exactly the identity map.
    """

    def __init__(self, n_nodes: int, kernel_size: int, layers: int,
                 dropout: float, generator: torch.Generator | None = None):
        super().__init__()
        self.layers = nn.ModuleList([
            ConvBlock(n_nodes, kernel_size, 2 ** layer, dropout, generator)
            for layer in range(layers)
        ])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = x
        for layer in self.layers:
            out = layer(out)
        return out + x


class HistoryEnhancer(nn.Module):
    """Parallel residual conv blocks, one output channel per block.

    Maps [batch, history, node, in_channels] to
    [batch, history, node, num_blocks * in_channels]; in_channels is 1
    unless the enhanced-decomposition wiring is enabled upstream.
    """

    def __init__(self, n_nodes: int, cfg: TcnStackConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList([
            TcnBlock(n_nodes, cfg.kernel_size(i), cfg.layers_per_block,
                     cfg.dropout, generator)
            for i in range(1, cfg.num_blocks + 1)
        ])

    @property
    def channels_per_input(self) -> int:
        return self.cfg.num_blocks

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, p, n, c = x.shape
        flat = x.permute(0, 3, 2, 1).reshape(b * c, n, p)
        outs = [block(flat) for block in self.blocks]
        stacked = torch.stack(outs, dim=1)  # [b*c, blocks, n, p]
        stacked = stacked.reshape(b, c, len(self.blocks), n, p)
        return stacked.permute(0, 4, 3, 1, 2).reshape(b, p, n, -1)


class PeakAmplifier(nn.Module):
    """Causal sliding maxima at several window sizes, one channel each.

    Left padding replicates the first value, so early outputs stay inside
    the data range and the result is pointwise >= the input.
    """

    def __init__(self, cfg: PeakStackConfig):
        super().__init__()
        self.cfg = cfg

    @property
    def channels_per_input(self) -> int:
        return self.cfg.num_blocks

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, p, n, c = x.shape
        flat = x.permute(0, 3, 2, 1).reshape(b * c, n, p)
        outs = []
        for i in range(1, self.cfg.num_blocks + 1):
            k = self.cfg.kernel_size(i)
            padded = F.pad(flat, (k - 1, 0), mode="replicate")
            outs.append(F.max_pool1d(padded, kernel_size=k, stride=1))
        stacked = torch.stack(outs, dim=1).reshape(b, c, -1, n, p)
        return stacked.permute(0, 4, 3, 1, 2).reshape(b, p, n, -1)
