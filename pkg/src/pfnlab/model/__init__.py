"""The row-token prior-fitted network and its checkpoint format."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import EMBEDDING_KINDS, ModelConfig
from .embeddings import attach_feature_embeddings, ple_encode, quantile_edges
from .pfn import (
    LORA_HOSTS,
    AttentionRecord,
    ContextBatch,
    PFNParams,
    embed_packed,
    forward,
    forward_with_attention,
    init_params,
    pack,
    predict,
    predict_proba,
    run_packed,
)

__all__ = [
    "EMBEDDING_KINDS",
    "LORA_HOSTS",
    "AttentionRecord",
    "ContextBatch",
    "ModelConfig",
    "PFNParams",
    "attach_feature_embeddings",
    "embed_packed",
    "forward",
    "forward_with_attention",
    "init_params",
    "load_checkpoint",
    "pack",
    "ple_encode",
    "predict",
    "predict_proba",
    "quantile_edges",
    "run_packed",
    "save_checkpoint",
]
