"""Training loop, checkpointing, window sweep and the gradient oracle.

Runs are fully seeded: parameter init draws from a config-seeded generator,
batch order from a config-seeded numpy generator, and dropout from the
global torch state seeded at the start of training, so a (config, seed)
pair reproduces its metrics exactly on the same machine.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .config import ModelConfig
from .data import ExternalStats, NormalizationStats, RawDataset
from .losses import EvaluationReport, evaluate
from .model import baseline, build_model
from .pipeline import (PipelineData, SplitTensors, WindowTensors,
                       build_windows, forecast_windows, prepare_pipeline)


class NumericalError(RuntimeError):
    """Raised when training hits a non-finite loss."""


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained model and reuse its scaling."""

    config: ModelConfig
    model_kind: str                      # "full" | "gru" | "lstm"
    node_names: list[str]
    state: dict
    stats_min: list[float]
    stats_max: list[float]
    ext_min: list[float] | None
    ext_max: list[float] | None
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def stats(self) -> NormalizationStats:
        return NormalizationStats(np.array(self.stats_min),
                                  np.array(self.stats_max))

    def external_stats(self) -> ExternalStats | None:
        if self.ext_min is None:
            return None
        return ExternalStats(np.array(self.ext_min), np.array(self.ext_max))

    def build_model(self):
        if self.model_kind == "full":
            model = build_model(self.config, len(self.node_names))
        else:
            model = baseline(self.model_kind, self.config, len(self.node_names))
        model.load_state_dict(self.state)
        model.eval()
        return model

    def save(self, path) -> None:
        payload = {
            "config": self.config.to_dict(),
            "config_hash": self.config.content_hash(),
            "model_kind": self.model_kind,
            "node_names": list(self.node_names),
            "state": self.state,
            "stats_min": self.stats_min,
            "stats_max": self.stats_max,
            "ext_min": self.ext_min,
            "ext_max": self.ext_max,
            "history": self.history,
            "best_epoch": self.best_epoch,
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        payload = torch.load(path, weights_only=True)
        return cls(
            config=ModelConfig.from_dict(payload["config"]),
            model_kind=payload["model_kind"],
            node_names=payload["node_names"],
            state=payload["state"],
            stats_min=payload["stats_min"],
            stats_max=payload["stats_max"],
            ext_min=payload["ext_min"],
            ext_max=payload["ext_max"],
            history=payload["history"],
            best_epoch=payload["best_epoch"],
        )


def _global_param_norm(model) -> float:
    with torch.no_grad():
        total = sum(float(p.pow(2).sum()) for p in model.parameters())
    return total ** 0.5


def _batch_loss(model, loss_fn, windows: WindowTensors, index) -> torch.Tensor:
    pred = model(
        windows.x[index],
        windows.d[index] if windows.d is not None else None,
        windows.ext[index] if windows.ext is not None else None)
    return loss_fn(windows.y[index], pred)


def _full_loss(model, loss_fn, windows: WindowTensors,
               batch_size: int) -> float:
    was_training = model.training
    model.eval()
    total, seen = 0.0, 0
    with torch.no_grad():
        for lo in range(0, len(windows), batch_size):
            index = slice(lo, lo + batch_size)
            n = windows.x[index].shape[0]
            total += float(_batch_loss(model, loss_fn, windows, index)) * n
            seen += n
    if was_training:
        model.train()
    return total / max(seen, 1)


def train(cfg: ModelConfig, ds: RawDataset, records=None,
          model_kind: str = "full", pipeline: PipelineData | None = None,
          cache_dir=None, verbose: bool = False,
          ) -> tuple[Checkpoint, PipelineData]:
    """Fit a model; returns the best-validation checkpoint and the pipeline.

    Passing a prebuilt pipeline lets several models (e.g. baselines) consume
    byte-identical window tensors.
    """
    if pipeline is None:
        pipeline = prepare_pipeline(ds, records, cfg, cache_dir)
    train_windows = build_windows(pipeline.splits["train"], cfg)
    val_windows = None
    if "val" in pipeline.splits:
        val_windows = build_windows(pipeline.splits["val"], cfg)

    torch.manual_seed(cfg.seed)
    if model_kind == "full":
        model = build_model(cfg, len(pipeline.node_names))
    else:
        model = baseline(model_kind, cfg, len(pipeline.node_names))
    loss_fn = cfg.loss.build()
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.optimizer.lr,
                                  weight_decay=cfg.optimizer.weight_decay)
    shuffle_rng = np.random.default_rng(cfg.seed)
    batch_size = cfg.optimizer.batch_size

    best_loss = float("inf")
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = 0
    stale_epochs = 0
    history: list[dict] = []

    for epoch in range(cfg.max_epochs):
        model.train()
        order = shuffle_rng.permutation(len(train_windows))
        epoch_total, epoch_seen = 0.0, 0
        for b, lo in enumerate(range(0, len(order), batch_size)):
            index = torch.from_numpy(order[lo:lo + batch_size])
            loss = _batch_loss(model, loss_fn, train_windows, index)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {b}, "
                    f"parameter norm {_global_param_norm(model):.3e}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            optimizer.step()
            epoch_total += float(loss.detach()) * len(index)
            epoch_seen += len(index)
        train_loss = epoch_total / max(epoch_seen, 1)
        if val_windows is not None and len(val_windows):
            monitor = _full_loss(model, loss_fn, val_windows, batch_size)
        else:
            monitor = train_loss
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": monitor})
        if verbose:
            print(f"epoch {epoch:3d}  train {train_loss:.6f}  val {monitor:.6f}")
        if monitor < best_loss:
            best_loss = monitor
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.early_stop_patience:
                break

    model.load_state_dict(best_state)
    ext_stats = pipeline.ext_stats
    ckpt = Checkpoint(
        config=cfg,
        model_kind=model_kind,
        node_names=pipeline.node_names,
        state=best_state,
        stats_min=pipeline.stats.minimum.tolist(),
        stats_max=pipeline.stats.maximum.tolist(),
        ext_min=ext_stats.minimum.tolist() if ext_stats is not None else None,
        ext_max=ext_stats.maximum.tolist() if ext_stats is not None else None,
        history=history,
        best_epoch=best_epoch,
    )
    return ckpt, pipeline


def evaluate_split(model, split: SplitTensors, cfg: ModelConfig,
                   spread: np.ndarray | None = None,
                   ) -> tuple[EvaluationReport, torch.Tensor, WindowTensors]:
    """Forecast a split and compute the period-sliced report."""
    windows = build_windows(split, cfg)
    pred = forecast_windows(model, windows, cfg.optimizer.batch_size)
    report = evaluate(pred[..., 0].numpy(), windows.y[..., 0].numpy(),
                      windows.target_steps, split.masks, spread)
    return report, pred, windows


def check_schema(ckpt: Checkpoint, ds: RawDataset) -> None:
    missing = [n for n in ckpt.node_names if n not in ds.node_names]
    extra = [n for n in ds.node_names if n not in ckpt.node_names]
    if missing or extra or list(ds.node_names) != list(ckpt.node_names):
        raise ValueError(
            f"dataset schema mismatch: missing nodes {missing}, "
            f"unexpected nodes {extra}")


def forecast_frame(pred: torch.Tensor, split: SplitTensors,
                   windows: WindowTensors, ckpt: Checkpoint) -> pd.DataFrame:
    """Denormalized, zero-clamped forecasts: one row per window x horizon."""
    stats = ckpt.stats()
    values = pred[..., 0].numpy() * stats.spread[None, None, :] \
        + stats.minimum[None, None, :]
    values = np.maximum(values, 0.0)
    w, q, n = values.shape
    span_index = windows.target_steps + split.context
    rows = {
        "timestamp": split.timestamps[span_index.reshape(-1)]
        .strftime("%Y-%m-%dT%H:%M:%S"),
        "horizon": np.tile(np.arange(1, q + 1), w),
    }
    flat = values.reshape(w * q, n)
    for j, name in enumerate(ckpt.node_names):
        rows[name] = flat[:, j]
    return pd.DataFrame(rows)


def sweep_windows(cfg: ModelConfig, ds: RawDataset, records=None,
                  sizes=(8, 16, 24), cache_dir=None, verbose: bool = False):
    """Train one model per history size; returns (rows, best_history).

    Rows follow the sweep-table layout: history, horizon, test mse/mae.
    Sizes that do not fit the dataset are skipped with a notice row.
    """
    rows = []
    for size in sizes:
        payload = cfg.to_dict()
        payload["history"] = int(size)
        cfg_p = ModelConfig.from_dict(payload)
        usable = int(round(ds.num_steps * cfg.train_fraction))
        if size + cfg.horizon > usable:
            rows.append({"history": int(size), "horizon": cfg.horizon,
                         "mse": None, "mae": None,
                         "note": "skipped: window exceeds dataset"})
            continue
        ckpt, pipeline = train(cfg_p, ds, records, cache_dir=cache_dir,
                               verbose=verbose)
        model = ckpt.build_model()
        report, _, _ = evaluate_split(model, pipeline.splits["test"], cfg_p)
        entire = report.periods["entire"]
        rows.append({"history": int(size), "horizon": cfg.horizon,
                     "mse": entire.mse, "mae": entire.mae, "note": ""})
    scored = [r for r in rows if r["mse"] is not None]
    best = min(scored, key=lambda r: r["mse"])["history"] if scored else None
    return rows, best


def grad_check(model, batch, loss_fn, step: float = 1e-6
               ) -> tuple[float, str]:
    """Central finite differences against autograd over every parameter.

    Returns the worst per-tensor relative error, where each tensor's error
    is max|analytic - numeric| normalized by the larger of the two gradient
    max-norms (floored at 1e-8), and the offending parameter name.
    """
    x, d, ext, y = batch
    model.eval()

    def closure():
        return loss_fn(y, model(x, d, ext))

    loss = closure()
    model.zero_grad(set_to_none=True)
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None
               else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    worst_err, worst_name = 0.0, ""
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.reshape(-1)
            numeric = torch.zeros_like(flat)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                plus = float(closure())
                flat[i] = original - step
                minus = float(closure())
                flat[i] = original
                numeric[i] = (plus - minus) / (2.0 * step)
            a = analytic[name].reshape(-1)
            denom = max(float(a.abs().max()), float(numeric.abs().max()), 1e-8)
            err = float((a - numeric).abs().max()) / denom
            if err > worst_err:
                worst_err, worst_name = err, name
    model.zero_grad(set_to_none=True)
    return worst_err, worst_name
