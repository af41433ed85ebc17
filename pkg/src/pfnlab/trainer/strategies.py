"""Finetuning strategies: which parameters move, and adapter injection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..model.embeddings import attach_feature_embeddings
from ..model.pfn import LORA_HOSTS, PFNParams
from ..rng import stream


@dataclass(frozen=True)
class Full:
    name = "full"


@dataclass(frozen=True)
class LoRA:
    rank: int = 8
    alpha: float | None = None  # defaults to rank
    name = "lora"

    def __post_init__(self):
        if self.rank < 1:
            raise ContractError(f"LoRA rank must be >= 1, got {self.rank}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(self.rank))


@dataclass(frozen=True)
class LastLayers:
    k: int = 1
    name = "last_layers"

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"LastLayers needs k >= 1, got {self.k}")


@dataclass(frozen=True)
class EmbLnHead:
    name = "emb_ln_head"


@dataclass(frozen=True)
class FeatureEmb:
    kind: str = "piecewise_linear"
    also_full: bool = False
    n_bins: int | None = None
    name = "feature_emb"


FinetuneStrategy = Full | LoRA | LastLayers | EmbLnHead | FeatureEmb


def strategy_label(strategy: FinetuneStrategy) -> str:
    if isinstance(strategy, LoRA):
        return f"lora_r{strategy.rank}"
    if isinstance(strategy, LastLayers):
        return f"last_layers_{strategy.k}"
    if isinstance(strategy, FeatureEmb):
        return f"feature_emb_{strategy.kind}" + ("_full" if strategy.also_full else "")
    return strategy.name


def strategy_from_dict(d: dict) -> FinetuneStrategy:
    d = dict(d)
    kind = d.pop("kind", d.pop("name", "full"))
    table = {"full": Full, "lora": LoRA, "last_layers": LastLayers, "emb_ln_head": EmbLnHead, "feature_emb": FeatureEmb}
    if kind not in table:
        raise ContractError(f"unknown finetune strategy {kind!r}")
    if "embedding" in d:
        d["kind"] = d.pop("embedding")
    return table[kind](**d)


def strategy_to_dict(strategy: FinetuneStrategy) -> dict:
    out = {"kind": strategy.name}
    for f in getattr(strategy, "__dataclass_fields__", {}):
        v = getattr(strategy, f)
        out["embedding" if f == "kind" else f] = v
    return out


def _is_ln(name: str) -> bool:
    parts = name.split(".")
    return len(parts) >= 2 and parts[-2].startswith("ln") and parts[-1] in ("gamma", "beta")


def mask_for(params: PFNParams, strategy: FinetuneStrategy) -> dict[str, bool]:
    """Trainable flag per parameter name under ``strategy``."""
    names = params.names()
    n_layers = params.config.n_layers
    if isinstance(strategy, Full):
        return {n: True for n in names}
    if isinstance(strategy, LoRA):
        if params.lora is None:
            raise ContractError("LoRA mask requested before inject_lora")
        return {n: n.startswith("lora.") for n in names}
    if isinstance(strategy, LastLayers):
        if strategy.k > n_layers:
            raise ContractError(f"LastLayers k={strategy.k} exceeds n_layers={n_layers}")
        keep = {f"layer{i}." for i in range(n_layers - strategy.k, n_layers)}
        return {n: n.startswith("head.") or any(n.startswith(p) for p in keep) for n in names}
    if isinstance(strategy, EmbLnHead):
        return {n: n.startswith(("feat_emb.", "target_emb.", "head.")) or _is_ln(n) for n in names}
    if isinstance(strategy, FeatureEmb):
        attached = params.feature_embedding
        if attached == "shared_linear":
            raise ContractError("FeatureEmb mask requested before attach_feature_embeddings")
        prefix = "feat_emb.untied." if attached == "untied_linear" else "feat_emb.ple."
        if strategy.also_full:
            return {n: True for n in names}
        return {n: n.startswith(prefix) for n in names}
    raise ContractError(f"unknown finetune strategy {strategy!r}")


def build_trainable_mask(params: PFNParams, strategy: FinetuneStrategy) -> PFNParams:
    """Set the trainable flags of ``params`` in place for ``strategy`` and return it."""
    params.set_trainable(mask_for(params, strategy))
    return params


def inject_lora(params: PFNParams, rank: int, alpha: float | None = None, seed: int = 0) -> PFNParams:
    """Copy of ``params`` with rank-``rank`` adapters on every attention projection.

    ``A`` (rank x d) is scaled-Gaussian, ``B`` (d x rank) is zero, so the
    adapted model starts out identical to the base. Base entries are frozen.
    """
    if params.lora is not None:
        raise ContractError("LoRA adapters are already injected")
    if rank < 1:
        raise ContractError(f"LoRA rank must be >= 1, got {rank}")
    alpha = float(rank) if alpha is None else float(alpha)
    out = params.copy()
    cfg = out.config
    d = cfg.d_model
    rng = stream(seed, "lora")
    out.set_trainable({n: False for n in out.names()})
    for i in range(cfg.n_layers):
        for host in LORA_HOSTS:
            base = f"lora.layer{i}.attn.{host}"
            out.add(f"{base}.A", rng.standard_normal((rank, d)) / math.sqrt(d))
            out.add(f"{base}.B", np.zeros((d, rank)))
    out.meta["lora"] = {"rank": int(rank), "alpha": alpha}
    return out


def prepare(params: PFNParams, strategy: FinetuneStrategy, train_X=None, seed: int = 0) -> PFNParams:
    """Copy of ``params`` with any adapters/embeddings added and the mask applied."""
    if isinstance(strategy, LoRA):
        out = inject_lora(params, strategy.rank, strategy.alpha, seed)
    elif isinstance(strategy, FeatureEmb):
        out = attach_feature_embeddings(params, strategy.kind, train_X, strategy.n_bins)
    else:
        out = params.copy()
    return build_trainable_mask(out, strategy)
