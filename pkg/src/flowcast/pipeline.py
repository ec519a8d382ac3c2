"""Assembly line from raw datasets to model-ready window tensors.

Splits are chronological: the first train_fraction of the span is the train
set, whose final val_fraction is held out for early stopping; the remainder
is the test set. Validation and test spans carry `history` leading context
steps from the preceding span so each of their steps can be a forecast
target. Normalization and external-factor scaling are fitted on the train
span only; decomposition runs once per split span and can be disk-cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .config import ModelConfig
from .data import (ExternalFactorRecord, ExternalStats, NormalizationStats,
                   PeriodMasks, RawDataset, build_period_masks, encode_external,
                   make_windows, minmax_normalize)
from .decomposition import decompose_channelize


@dataclass
class SplitTensors:
    """One evaluation span plus its leading context, ready for windowing."""

    name: str
    x: np.ndarray                    # [steps, nodes, 1] normalized
    d: np.ndarray | None             # [steps, nodes, C_d]
    ext: np.ndarray | None           # [steps, 7]
    timestamps: pd.DatetimeIndex     # full span incl. context
    context: int                     # leading steps that are context only
    masks: PeriodMasks               # over the split proper (context excluded)

    @property
    def proper_steps(self) -> int:
        return self.x.shape[0] - self.context


@dataclass
class WindowTensors:
    """Materialized window batch arrays for one split."""

    x: torch.Tensor                  # [W, P, N, 1]
    y: torch.Tensor                  # [W, Q, N, 1]
    d: torch.Tensor | None           # [W, P, N, C_d]
    ext: torch.Tensor | None         # [W, P, 7]
    target_steps: np.ndarray         # [W, Q] indices into the split proper

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class PipelineData:
    splits: dict[str, SplitTensors]
    stats: NormalizationStats
    ext_stats: ExternalStats | None
    node_names: list[str]


def _needs_decomposition(cfg: ModelConfig) -> bool:
    return cfg.use_decomposition or (
        cfg.enhance_decomposed and (cfg.use_history_enhance
                                    or cfg.use_peak_amplify))


def prepare_pipeline(ds: RawDataset, records: list[ExternalFactorRecord] | None,
                     cfg: ModelConfig, cache_dir=None) -> PipelineData:
    """Split, normalize, encode factors and decompose a dataset."""
    total = ds.num_steps
    train_end = int(round(total * cfg.train_fraction))
    train_end = min(max(train_end, cfg.history + cfg.horizon), total - 1)
    val_len = int(round(train_end * cfg.val_fraction))
    fit_end = train_end - val_len

    _, stats = minmax_normalize(ds.values[:train_end])
    full_norm, _ = minmax_normalize(ds.values, stats)
    full_norm = full_norm[..., None]  # [T, N, 1]

    ext_all = None
    ext_stats = None
    if records is not None:
        if len(records) != total:
            raise ValueError("factor record count does not match dataset length")
        _, ext_stats = encode_external(records[:train_end],
                                       weather_vocab=tuple(cfg.weather_vocab))
        ext_all, _ = encode_external(records, ext_stats,
                                     weather_vocab=tuple(cfg.weather_vocab))
    elif cfg.use_self_attention:
        raise ValueError("this config requires external factor records")

    holiday_flags = None
    if records is not None:
        holiday_flags = np.array([r.holiday for r in records], dtype=bool)

    spans = {
        "train": (0, fit_end, 0),
        "val": (max(fit_end - cfg.history, 0), train_end,
                min(cfg.history, fit_end)),
        "test": (max(train_end - cfg.history, 0), total,
                 min(cfg.history, train_end)),
    }
    splits: dict[str, SplitTensors] = {}
    for name, (lo, hi, context) in spans.items():
        if hi - lo < cfg.history + cfg.horizon:
            continue
        x = full_norm[lo:hi]
        d = None
        if _needs_decomposition(cfg):
            cache_path = None
            if cache_dir is not None:
                cache_path = Path(cache_dir) / f"decomp_{name}_{lo}_{hi}.bin"
            d = decompose_channelize(x, cfg.ceemdan, cache_path)
        span_stamps = ds.timestamps[lo:hi]
        proper_stamps = ds.timestamps[lo + context:hi]
        flags = holiday_flags[lo + context:hi] if holiday_flags is not None else None
        masks = build_period_masks(
            proper_stamps,
            holiday_ranges=tuple(tuple(r) for r in cfg.holiday_ranges),
            holiday_flags=flags)
        splits[name] = SplitTensors(
            name=name, x=x, d=d,
            ext=ext_all[lo:hi] if ext_all is not None else None,
            timestamps=span_stamps, context=context, masks=masks)
    if "train" not in splits:
        raise ValueError("train span too short for the configured windows")
    return PipelineData(splits=splits, stats=stats, ext_stats=ext_stats,
                        node_names=list(ds.node_names))


def build_windows(split: SplitTensors, cfg: ModelConfig) -> WindowTensors:
    """Materialize every (history, horizon) window over a split span."""
    starts = make_windows(split.x.shape[0], cfg.history, cfg.horizon, cfg.stride)
    p, q = cfg.history, cfg.horizon
    idx = starts[:, None] + np.arange(p)[None, :]
    tgt = starts[:, None] + p + np.arange(q)[None, :]
    x = torch.from_numpy(split.x[idx])                  # [W, P, N, 1]
    y = torch.from_numpy(split.x[tgt])                  # [W, Q, N, 1]
    d = torch.from_numpy(split.d[idx]) if split.d is not None else None
    ext = torch.from_numpy(split.ext[idx]) if split.ext is not None else None
    return WindowTensors(x=x, y=y, d=d, ext=ext,
                         target_steps=tgt - split.context)


def forecast_windows(model, windows: WindowTensors,
                     batch_size: int = 256) -> torch.Tensor:
    """Run the model over all windows in eval mode; returns [W, Q, N, 1]."""
    was_training = model.training
    model.eval()
    outs = []
    with torch.no_grad():
        for lo in range(0, len(windows), batch_size):
            hi = lo + batch_size
            outs.append(model(
                windows.x[lo:hi],
                windows.d[lo:hi] if windows.d is not None else None,
                windows.ext[lo:hi] if windows.ext is not None else None))
    if was_training:
        model.train()
    return torch.cat(outs, dim=0)


def evaluation_span(ds: RawDataset, records: list[ExternalFactorRecord] | None,
                    cfg: ModelConfig, stats: NormalizationStats,
                    ext_stats: ExternalStats | None,
                    cache_path=None) -> SplitTensors:
    """Treat an entire dataset as one evaluation span using fitted stats."""
    normalized, _ = minmax_normalize(ds.values, stats)
    x = normalized[..., None]
    d = None
    if _needs_decomposition(cfg):
        d = decompose_channelize(x, cfg.ceemdan, cache_path)
    ext = None
    holiday_flags = None
    if records is not None:
        if len(records) != ds.num_steps:
            raise ValueError("factor record count does not match dataset length")
        ext, _ = encode_external(records, ext_stats,
                                 weather_vocab=tuple(cfg.weather_vocab))
        holiday_flags = np.array([r.holiday for r in records], dtype=bool)
    elif cfg.use_self_attention:
        raise ValueError("this config requires external factor records")
    masks = build_period_masks(
        ds.timestamps,
        holiday_ranges=tuple(tuple(r) for r in cfg.holiday_ranges),
        holiday_flags=holiday_flags)
    return SplitTensors(name="eval", x=x, d=d, ext=ext,
                        timestamps=ds.timestamps, context=0, masks=masks)
