"""Training losses and period-sliced evaluation metrics.

Losses operate on tensors of identical shape on the normalized [0, 1]
scale. The exponential peak loss weights an error by exp(p * truth), so
equal errors cost more at high true values; it is minimized exactly at zero
error, where its value is exp(p * truth).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class LossConfig:
    kind: str = "epel"
    tau: float = 0.5
    p: float = 2.0
    q: float = 1.0

    def __post_init__(self):
        if self.kind not in {"mae", "mse", "quantile", "epel"}:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie strictly inside (0, 1)")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")

    def build(self):
        if self.kind == "mae":
            return mae
        if self.kind == "mse":
            return mse
        if self.kind == "quantile":
            return lambda truth, pred: quantile_loss(truth, pred, self.tau)
        return lambda truth, pred: epel(truth, pred, self.p, self.q)


def _pair(truth, pred) -> tuple[torch.Tensor, torch.Tensor]:
    t = torch.as_tensor(truth, dtype=torch.float64) \
        if not torch.is_tensor(truth) else truth
    p = torch.as_tensor(pred, dtype=torch.float64) \
        if not torch.is_tensor(pred) else pred
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: {tuple(t.shape)} vs {tuple(p.shape)}")
    return t, p


def mae(truth, pred) -> torch.Tensor:
    t, p = _pair(truth, pred)
    return (t - p).abs().mean()


def mse(truth, pred) -> torch.Tensor:
    t, p = _pair(truth, pred)
    return ((t - p) ** 2).mean()


def quantile_loss(truth, pred, tau: float) -> torch.Tensor:
    """Pinball loss: (1-tau)*(y-yhat) where y > yhat, tau*(yhat-y) otherwise.

    Always non-negative; at tau = 0.5 it equals half the absolute error.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie strictly inside (0, 1)")
    t, p = _pair(truth, pred)
    diff = t - p
    return torch.where(diff > 0, (1.0 - tau) * diff, -tau * diff).mean()


def epel(truth, pred, p: float = 2.0, q: float = 1.0) -> torch.Tensor:
    """mean(exp(p*y) * exp(q*|y - yhat|)); the subgradient at y = yhat is 0."""
    t, yhat = _pair(truth, pred)
    return (torch.exp(p * t) * torch.exp(q * (t - yhat).abs())).mean()


PERIOD_NAMES = ("entire", "evening", "weekend", "holiday")


@dataclass
class PeriodMetrics:
    count: int
    mse: float | None = None
    mae: float | None = None
    mse_denorm: float | None = None
    mae_denorm: float | None = None


@dataclass
class EvaluationReport:
    """MSE/MAE on the whole span and on each masked period.

    Metrics average over every forecast element (window x horizon step x
    node) whose target timestamp falls in the period; `count` is the number
    of masked time steps in the evaluation span. Normalized-scale metrics
    are primary; denormalized ones appear when stats are available.
    """

    periods: dict[str, PeriodMetrics] = field(default_factory=dict)
    horizon: int = 1

    def to_dict(self) -> dict:
        out = {"horizon": self.horizon, "periods": {}}
        for name, m in self.periods.items():
            entry = {"count": m.count}
            for key in ("mse", "mae", "mse_denorm", "mae_denorm"):
                value = getattr(m, key)
                if value is not None:
                    entry[key] = value
            out["periods"][name] = entry
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "EvaluationReport":
        report = cls(horizon=int(payload.get("horizon", 1)))
        for name, entry in payload["periods"].items():
            report.periods[name] = PeriodMetrics(
                count=int(entry["count"]),
                mse=entry.get("mse"),
                mae=entry.get("mae"),
                mse_denorm=entry.get("mse_denorm"),
                mae_denorm=entry.get("mae_denorm"),
            )
        return report

    def to_flat_text(self) -> str:
        lines = [f"horizon = {self.horizon}"]
        for name, m in self.periods.items():
            lines.append(f"{name}.count = {m.count}")
            for key in ("mse", "mae", "mse_denorm", "mae_denorm"):
                value = getattr(m, key)
                if value is not None:
                    lines.append(f"{name}.{key} = {value:.10g}")
        return "\n".join(lines) + "\n"

    def save(self, json_path, text_path=None) -> None:
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        if text_path is not None:
            with open(text_path, "w") as fh:
                fh.write(self.to_flat_text())

    @classmethod
    def load(cls, json_path) -> "EvaluationReport":
        with open(json_path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate(pred: np.ndarray, truth: np.ndarray, target_steps: np.ndarray,
             masks, spread: np.ndarray | None = None) -> EvaluationReport:
    """Period-sliced errors for aligned forecasts.

    pred/truth: [windows, horizon, nodes] on the normalized scale.
    target_steps: [windows, horizon] indices into the evaluation span.
    masks: PeriodMasks over the span. spread: per-node (max - min), enabling
    denormalized metrics.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = pred - truth
    if spread is not None:
        err_denorm = err * np.asarray(spread)[None, None, :]
    report = EvaluationReport(horizon=pred.shape[1])
    mask_lookup = masks.as_dict()
    for name in PERIOD_NAMES:
        if name == "entire":
            element_mask = np.ones(pred.shape[:2], dtype=bool)
            count = int(mask_lookup["evening"].shape[0])
        else:
            step_mask = mask_lookup[name]
            element_mask = step_mask[target_steps]
            count = int(step_mask.sum())
        selected = err[element_mask]
        metrics = PeriodMetrics(count=count)
        if selected.size:
            metrics.mse = float(np.mean(selected ** 2))
            metrics.mae = float(np.mean(np.abs(selected)))
            if spread is not None:
                sel_d = err_denorm[element_mask]
                metrics.mse_denorm = float(np.mean(sel_d ** 2))
                metrics.mae_denorm = float(np.mean(np.abs(sel_d)))
        report.periods[name] = metrics
    return report
