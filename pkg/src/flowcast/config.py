"""Run configuration: every hyperparameter and ablation switch in one place.

Config files are JSON with exactly the keys of ModelConfig (nested sections
for the sub-configs); unknown keys raise, so typos cannot silently fall
back to defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .data import DEFAULT_HOLIDAY_RANGES, DEFAULT_WEATHER_VOCAB
from .decomposition import CeemdanConfig
from .losses import LossConfig
from .temporal import PeakStackConfig, TcnStackConfig


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


@dataclass
class OptimizerConfig:
    name: str = "adamw"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 128

    def __post_init__(self):
        if self.name != "adamw":
            raise ConfigError(f"unsupported optimizer {self.name!r}")
        if self.lr < 0 or self.weight_decay < 0 or self.batch_size < 1:
            raise ConfigError("optimizer settings must be non-negative, batch >= 1")


_ABLATION_SWITCHES = {
    "ND": ("use_decomposition",),
    "NH": ("use_history_enhance",),
    "NP": ("use_peak_amplify",),
    "NDH": ("use_decomposition", "use_history_enhance"),
    "NDP": ("use_decomposition", "use_peak_amplify"),
    "NHP": ("use_history_enhance", "use_peak_amplify"),
    "NDHP": ("use_decomposition", "use_history_enhance", "use_peak_amplify"),
    "NDG": ("use_dynamic_graph",),
    "NCA": ("use_channel_attention",),
    "NSA": ("use_self_attention",),
}

ABLATION_VARIANTS = tuple(_ABLATION_SWITCHES)


@dataclass
class ModelConfig:
    history: int = 24
    horizon: int = 1
    embed_size: int = 128
    node_embed_size: int = 16
    stride: int = 1
    num_rnn_layers: int = 1
    attention_layers: int = 2
    attention_dropout: float = 0.1
    graph_degree: str = "weighted"
    enhance_decomposed: bool = False
    ceemdan: CeemdanConfig = field(default_factory=CeemdanConfig)
    tcn: TcnStackConfig = field(default_factory=TcnStackConfig)
    peak: PeakStackConfig = field(default_factory=PeakStackConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    early_stop_patience: int = 6
    max_epochs: int = 200
    grad_clip_norm: float = 5.0
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    use_decomposition: bool = True
    use_history_enhance: bool = True
    use_peak_amplify: bool = True
    use_dynamic_graph: bool = True
    use_channel_attention: bool = True
    use_self_attention: bool = True
    seed: int = 1
    holiday_ranges: list = field(
        default_factory=lambda: [list(r) for r in DEFAULT_HOLIDAY_RANGES])
    weather_vocab: list = field(
        default_factory=lambda: list(DEFAULT_WEATHER_VOCAB))

    def __post_init__(self):
        for name in ("history", "horizon", "embed_size", "node_embed_size",
                     "stride", "num_rnn_layers", "attention_layers",
                     "early_stop_patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.embed_size % 2 != 0:
            raise ConfigError("embed_size must be even (positional encoding)")
        if not 0 <= self.attention_dropout < 1:
            raise ConfigError("attention_dropout must lie in [0, 1)")
        if self.graph_degree not in {"weighted", "binary"}:
            raise ConfigError(f"unknown graph_degree {self.graph_degree!r}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be positive")
        for switch in ("enhance_decomposed", "use_decomposition",
                       "use_history_enhance", "use_peak_amplify",
                       "use_dynamic_graph", "use_channel_attention",
                       "use_self_attention"):
            if not isinstance(getattr(self, switch), bool):
                raise ConfigError(f"{switch} must be boolean")

    @property
    def decomposition_channels(self) -> int:
        return self.ceemdan.max_imfs + 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        if not isinstance(payload, dict):
            raise ConfigError("config payload must be a JSON object")
        sections = {"ceemdan": CeemdanConfig, "tcn": TcnStackConfig,
                    "peak": PeakStackConfig, "loss": LossConfig,
                    "optimizer": OptimizerConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in payload.items():
            if key in sections:
                section_cls = sections[key]
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                section_known = {f.name for f in fields(section_cls)}
                section_unknown = set(value) - section_known
                if section_unknown:
                    raise ConfigError(
                        f"unknown keys in section {key!r}: {sorted(section_unknown)}")
                try:
                    kwargs[key] = section_cls(**value)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"bad section {key!r}: {exc}") from exc
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(payload)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def content_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def with_ablation(self, variant: str) -> "ModelConfig":
        """Copy of this config with one named ablation variant applied."""
        if variant not in _ABLATION_SWITCHES:
            raise ConfigError(
                f"unknown ablation {variant!r}; known: {sorted(_ABLATION_SWITCHES)}")
        payload = self.to_dict()
        for switch in _ABLATION_SWITCHES[variant]:
            payload[switch] = False
        return ModelConfig.from_dict(payload)
