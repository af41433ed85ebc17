from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import ConfigError

EMBEDDING_KINDS = ("shared_linear", "untied_linear", "piecewise_linear")


@dataclass(frozen=True)
class ModelConfig:
    """Shape of a row-token prior-fitted network.

    The defaults are the desk-scale configuration used for pretraining.
    """

    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_features: int = 16
    max_classes: int = 10
    embedding_kind: str = "shared_linear"
    n_bins: int = 8
    dropout: float = 0.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1 or self.d_ff < 1:
            raise ConfigError("model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_classes < 2:
            raise ConfigError("max_classes must be at least 2")
        if self.max_features < 1:
            raise ConfigError("max_features must be at least 1")
        if self.embedding_kind not in EMBEDDING_KINDS:
            raise ConfigError(f"unknown embedding_kind {self.embedding_kind!r}")
        if self.embedding_kind == "piecewise_linear" and self.n_bins < 2:
            raise ConfigError("piecewise_linear embeddings need n_bins >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**known)
