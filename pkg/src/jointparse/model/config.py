"""Model and training configuration."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional

LOSS_COMPONENTS = ("node", "edge", "label", "syntax", "attr_value", "attr_mask")


class ConfigurationError(ValueError):
    pass


class Mode(str, enum.Enum):
    BASE = "base"  # semantic decoder only
    BI = "bi"      # biaffine UD parser only
    CB = "cb"      # syntax linearization before SEP, then semantics
    CA = "ca"      # semantics, SEP, then syntax linearization
    EN = "en"      # shared encoder, auxiliary biaffine loss
    IN = "in"      # predicted parse fused into encoder states

    @property
    def uses_decoder(self) -> bool:
        return self is not Mode.BI

    @property
    def uses_biaffine(self) -> bool:
        return self in (Mode.BI, Mode.EN, Mode.IN)

    @property
    def concat(self) -> bool:
        return self in (Mode.CB, Mode.CA)


# default random-search grid
SEARCH_GRID = {
    "layers": [6, 8, 12],
    "init_scale": [4, 32, 128, 512],
    "heads": [4, 8],
    "dropout": [0.20, 0.33],
    "warmup": [1000, 4000, 8000],
}


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 2
    d_s: int = 32
    d_ff: int = 64
    d_h: int = 32
    d_t: int = 16
    d_edge: int = 16
    dropout: float = 0.0
    init_scale: float = 4.0
    warmup: int = 100
    lr: float = 1.0
    mode: Mode = Mode.EN
    frozen_encoder_layers: int = 0
    max_decode_length: Optional[int] = None
    max_nodes: int = 128
    semantics_only: bool = True
    loss_weights: Dict[str, float] = field(default_factory=lambda: {c: 1.0 for c in LOSS_COMPONENTS})
    # training loop
    epochs: int = 50
    batch_size: int = 1
    patience: int = 20
    min_count: int = 1
    restarts: int = 10

    def __post_init__(self):
        self.mode = Mode(self.mode)
        weights = {c: 1.0 for c in LOSS_COMPONENTS}
        unknown = set(self.loss_weights) - set(LOSS_COMPONENTS)
        if unknown:
            raise ConfigurationError(f"unknown loss components {sorted(unknown)}")
        weights.update(self.loss_weights)
        self.loss_weights = weights
        self.validate()

    def validate(self):
        if self.d_s % self.heads:
            raise ConfigurationError(f"d_s={self.d_s} is not divisible by heads={self.heads}")
        if not 0 <= self.frozen_encoder_layers <= self.layers:
            raise ConfigurationError(
                f"frozen_encoder_layers={self.frozen_encoder_layers} outside [0, {self.layers}]"
            )
        if any(w < 0 for w in self.loss_weights.values()):
            raise ConfigurationError("loss weights must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.init_scale <= 0:
            raise ConfigurationError("init_scale must be positive")
        if self.layers < 1 or self.heads < 1:
            raise ConfigurationError("layers and heads must be positive")

    def decode_limit(self, num_tokens: int) -> int:
        if self.max_decode_length is not None:
            return self.max_decode_length
        return 2 * num_tokens + 12

    def to_json(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def replace(self, **changes) -> "ModelConfig":
        obj = self.to_json()
        obj.update(changes)
        return ModelConfig.from_json(obj)
