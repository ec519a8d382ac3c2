"""Shared fixtures and the acceptance-line reporter."""

import numpy as np
import pytest
import torch

from flowcast.config import ModelConfig

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Full-architecture model small enough for exact/gradient tests."""
    return ModelConfig.from_dict({
        "history": 6, "horizon": 2, "embed_size": 8, "node_embed_size": 3,
        "ceemdan": {"max_imfs": 2, "ensemble_size": 4},
        "tcn": {"num_blocks": 2},
        "peak": {"num_blocks": 2},
        "loss": {"kind": "epel", "p": 2.0, "q": 1.0},
        "optimizer": {"lr": 1e-3, "batch_size": 16},
        "seed": 7,
    })


def random_batch(cfg: ModelConfig, n_nodes: int, batch: int, seed: int = 0):
    """Random (x, d, ext, y) batch matching a config's shapes."""
    rng = np.random.default_rng(seed)
    p, q = cfg.history, cfg.horizon
    x = torch.from_numpy(rng.uniform(0.05, 0.95, (batch, p, n_nodes, 1)))
    d = torch.from_numpy(rng.normal(0.0, 0.3, (batch, p, n_nodes,
                                                cfg.decomposition_channels)))
    ext = torch.from_numpy(rng.uniform(0.0, 1.0, (batch, p, 7)))
    y = torch.from_numpy(rng.uniform(0.05, 0.95, (batch, q, n_nodes, 1)))
    return x, d, ext, y
