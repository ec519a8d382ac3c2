"""Multi-mode passenger flow forecasting toolkit.

A library plus CLI covering the full pipeline: dataset ingestion and
synthesis, adaptive mode decomposition, temporal enhancement streams,
dynamic-graph recurrent encoding, attention fusion, peak-weighted losses,
training with early stopping, period-sliced evaluation, and figure
rendering.
"""

from .config import ABLATION_VARIANTS, ConfigError, ModelConfig, OptimizerConfig
from .data import (DataError, ExternalFactorRecord, NormalizationStats,
                   PeriodMasks, RawDataset, build_period_masks, denormalize,
                   encode_external, generate_synthetic, load_factors_csv,
                   load_flow_csv, make_windows, minmax_normalize)
from .decomposition import (CeemdanConfig, DecompositionResult, ceemdan,
                            decompose_channelize, emd, sift)
from .losses import (EvaluationReport, LossConfig, epel, evaluate, mae, mse,
                     quantile_loss)
from .model import FlowForecaster, RecurrentBaseline, baseline, build_model
from .training import (Checkpoint, NumericalError, grad_check, sweep_windows,
                       train)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_VARIANTS", "CeemdanConfig", "Checkpoint", "ConfigError",
    "DataError", "DecompositionResult", "EvaluationReport",
    "ExternalFactorRecord", "FlowForecaster", "LossConfig", "ModelConfig",
    "NormalizationStats", "NumericalError", "OptimizerConfig", "PeriodMasks",
    "RawDataset", "RecurrentBaseline", "baseline", "build_model",
    "build_period_masks", "ceemdan", "decompose_channelize", "denormalize",
    "emd", "encode_external", "epel", "evaluate", "generate_synthetic",
    "grad_check", "load_factors_csv", "load_flow_csv", "mae", "make_windows",
    "minmax_normalize", "mse", "quantile_loss", "sift", "sweep_windows",
    "train",
]
