"""Row-token prior-fitted network.

Each dataset row becomes one token: the sum of its feature embeddings plus an
embedding of its target (train rows) or a learned missing-target vector
(query rows). Pre-norm transformer blocks attend across rows; every row may
attend to the train rows of its own context and never to query rows, so
queries are answered independently of each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import diffengine as de
from ..diffengine import ParamStore, Tensor
from ..errors import CapacityError, ContractError, LabelError
from ..rng import stream
from ..task import TaskType
from .config import ModelConfig
from .embeddings import attach_feature_embeddings, ple_encode

LORA_HOSTS = ("Wq", "Wk", "Wv", "Wo")


class PFNParams(ParamStore):
    """A ParamStore that also carries its :class:`ModelConfig`."""

    @property
    def config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.meta["config"])

    @property
    def feature_embedding(self) -> str:
        return self.meta.get("feature_embedding", {}).get("kind", "shared_linear")

    @property
    def lora(self) -> dict | None:
        return self.meta.get("lora")


@dataclass
class ContextBatch:
    """One in-context problem: labeled train rows plus unlabeled query rows."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    task_type: TaskType
    active_classes: int = 0
    feature_mask: np.ndarray | None = None

    def __post_init__(self):
        self.task_type = TaskType(self.task_type)
        self.X_train = np.asarray(self.X_train, dtype=np.float32)
        self.X_test = np.asarray(self.X_test, dtype=np.float32)
        if self.X_test.ndim == 1 and self.X_test.size == 0:
            self.X_test = self.X_test.reshape(0, self.X_train.shape[1])
        self.y_train = np.asarray(self.y_train)
        if self.feature_mask is None:
            self.feature_mask = np.ones(self.X_train.shape[1], dtype=bool)
        self.feature_mask = np.asarray(self.feature_mask, dtype=bool)

    @property
    def n_train(self) -> int:
        return self.X_train.shape[0]

    @property
    def n_test(self) -> int:
        return self.X_test.shape[0]


@dataclass
class AttentionRecord:
    """Last-layer attention of query rows over train rows.

    ``weights`` has shape ``(n_test, n_keys, n_heads)``; ``n_keys`` is the
    train-row count unless the record was taken with test keys included.
    """

    weights: np.ndarray
    n_train: int


def init_params(config: ModelConfig, seed: int) -> PFNParams:
    """Scaled-Gaussian weights (variance 1/fan_in), zero biases, unit gammas."""
    rng = stream(seed, "init")
    d, F, C, ff = config.d_model, config.max_features, config.max_classes, config.d_ff
    p = PFNParams(meta={"config": config.to_dict(), "seed": int(seed)})

    def w(shape, fan_in):
        return rng.standard_normal(shape) / math.sqrt(fan_in)

    p.add("feat_emb.ident", w((F, d), F))
    p.add("feat_emb.slope", np.ones(d))
    p.add("feat_emb.bias", np.zeros(d))
    p.add("target_emb.reg_w", w((d,), 1))
    p.add("target_emb.reg_b", np.zeros(d))
    p.add("target_emb.cls", w((C, d), 1))
    p.add("target_emb.missing", w((d,), 1))
    for i in range(config.n_layers):
        pre = f"layer{i}"
        p.add(f"{pre}.ln1.gamma", np.ones(d))
        p.add(f"{pre}.ln1.beta", np.zeros(d))
        for host in LORA_HOSTS:
            p.add(f"{pre}.attn.{host}", w((d, d), d))
        p.add(f"{pre}.ln2.gamma", np.ones(d))
        p.add(f"{pre}.ln2.beta", np.zeros(d))
        p.add(f"{pre}.mlp.W1", w((d, ff), d))
        p.add(f"{pre}.mlp.b1", np.zeros(ff))
        p.add(f"{pre}.mlp.W2", w((ff, d), ff))
        p.add(f"{pre}.mlp.b2", np.zeros(d))
    p.add("head.ln.gamma", np.ones(d))
    p.add("head.ln.beta", np.zeros(d))
    p.add("head.W1", w((d, d), d))
    p.add("head.b1", np.zeros(d))
    p.add("head.reg.W", w((d, 1), d))
    p.add("head.reg.b", np.zeros(1))
    p.add("head.cls.W", w((d, C), d))
    p.add("head.cls.b", np.zeros(C))
    if config.embedding_kind != "shared_linear":
        p = attach_feature_embeddings(p, config.embedding_kind)
    return p


# ------------------------------------------------------------------ packing


@dataclass
class Packed:
    """Several contexts of one task type padded to common sizes."""

    X: np.ndarray  # (B, n_tr + n_te, F), train rows first
    fmask: np.ndarray  # (B, F)
    y_train: np.ndarray  # (B, n_tr)
    tr_valid: np.ndarray  # (B, n_tr)
    te_valid: np.ndarray  # (B, n_te)
    n_tr: int
    n_te: int
    task: TaskType
    n_classes: np.ndarray  # (B,)


def validate_batch(batch: ContextBatch, config: ModelConfig) -> None:
    m = batch.X_train.shape[1]
    if m > config.max_features:
        raise CapacityError(f"{m} features exceed max_features={config.max_features}")
    if batch.X_test.shape[1] != m or batch.feature_mask.shape[0] != m:
        raise ContractError("train/test feature widths and feature_mask must agree")
    if batch.n_train < 1:
        raise ContractError("the context needs at least one train row")
    if batch.y_train.shape[0] != batch.n_train:
        raise ContractError("y_train length differs from X_train rows")
    if batch.task_type is TaskType.REGRESSION:
        if not np.all(np.isfinite(batch.y_train)):
            raise ContractError("regression targets must be finite")
    else:
        if not 1 <= batch.active_classes <= config.max_classes:
            raise CapacityError(f"active_classes={batch.active_classes} outside [1, {config.max_classes}]")
        y = batch.y_train
        if y.size and (np.any(y < 0) or np.any(y >= batch.active_classes)):
            raise LabelError(f"train labels must lie in [0, {batch.active_classes})")


def pack(batches: list[ContextBatch], config: ModelConfig) -> Packed:
    if not batches:
        raise ContractError("nothing to pack")
    task = batches[0].task_type
    for b in batches:
        if b.task_type is not task:
            raise ContractError("a packed batch must share one task type")
        validate_batch(b, config)
    B, F = len(batches), config.max_features
    n_tr = max(b.n_train for b in batches)
    n_te = max(b.n_test for b in batches)
    X = np.zeros((B, n_tr + n_te, F), dtype=np.float32)
    fmask = np.zeros((B, F), dtype=bool)
    y = np.zeros((B, n_tr), dtype=np.float64)
    trv = np.zeros((B, n_tr), dtype=bool)
    tev = np.zeros((B, n_te), dtype=bool)
    ncls = np.zeros(B, dtype=np.intp)
    for i, b in enumerate(batches):
        m = b.X_train.shape[1]
        fm = b.feature_mask
        X[i, : b.n_train, :m] = np.where(fm, b.X_train, 0.0)
        X[i, n_tr : n_tr + b.n_test, :m] = np.where(fm, b.X_test, 0.0)
        fmask[i, :m] = fm
        y[i, : b.n_train] = b.y_train
        trv[i, : b.n_train] = True
        tev[i, : b.n_test] = True
        ncls[i] = b.active_classes
    return Packed(X, fmask, y, trv, tev, n_tr, n_te, task, ncls)


def target_stats(packed: Packed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-context mean, guarded std (for z-scoring) and raw std (for de-scaling)."""
    w = packed.tr_valid.astype(np.float64)
    n = w.sum(axis=1)
    mu = (packed.y_train * w).sum(axis=1) / n
    var = (((packed.y_train - mu[:, None]) ** 2) * w).sum(axis=1) / n
    raw = np.sqrt(var)
    guarded = np.where(raw > 1e-12, raw, 1.0)
    return mu, guarded, raw


# ------------------------------------------------------------------ forward


def _feature_tokens(params: PFNParams, packed: Packed) -> Tensor:
    kind = params.feature_embedding
    X = packed.X
    fm = packed.fmask[:, None, :].astype(X.dtype)  # (B, 1, F)
    if kind == "shared_linear":
        ident = params.tensor("feat_emb.ident")
        xi = de.matmul(X, ident)
        return xi * params.tensor("feat_emb.slope") + de.matmul(fm, ident) * params.tensor("feat_emb.bias")
    if kind == "untied_linear":
        return de.matmul(X, params.tensor("feat_emb.untied.W")) + de.matmul(fm, params.tensor("feat_emb.untied.b"))
    info = params.meta["feature_embedding"]
    T = info["n_bins"]
    enc = ple_encode(X, info["edges"], T) * packed.fmask[:, None, :, None]
    B, N, F = X.shape
    V = params.tensor("feat_emb.ple.V").reshape(F * T, -1)
    return de.matmul(enc.reshape(B, N, F * T).astype(X.dtype), V) + de.matmul(fm, params.tensor("feat_emb.ple.b"))


def _target_tokens(params: PFNParams, packed: Packed, z: np.ndarray | None) -> Tensor:
    B = packed.X.shape[0]
    dtype = de.get_dtype()
    if packed.task is TaskType.REGRESSION:
        tr = de.matmul(z[:, :, None].astype(dtype), params.tensor("target_emb.reg_w").reshape(1, -1))
        tr = tr + params.tensor("target_emb.reg_b")
    else:
        C = params.config.max_classes
        onehot = np.zeros((B, packed.n_tr, C), dtype=dtype)
        lab = np.clip(packed.y_train.astype(np.intp), 0, C - 1)
        np.put_along_axis(onehot, lab[..., None], 1.0, axis=-1)
        onehot *= packed.tr_valid[..., None]
        tr = de.matmul(onehot, params.tensor("target_emb.cls"))
    if packed.n_te == 0:
        return tr
    miss = de.mul(np.ones((B, packed.n_te, 1), dtype=dtype), params.tensor("target_emb.missing"))
    return de.concat([tr, miss], axis=1)


def embed_packed(params: PFNParams, packed: Packed) -> tuple[Tensor, tuple]:
    mu, sd, raw = target_stats(packed) if packed.task is TaskType.REGRESSION else (None, None, None)
    z = None
    if mu is not None:
        z = (packed.y_train - mu[:, None]) / sd[:, None] * packed.tr_valid
    tokens = _feature_tokens(params, packed) + _target_tokens(params, packed, z)
    return tokens, (mu, sd, raw)


def _weight(params: PFNParams, layer: int, host: str) -> Tensor:
    W = params.tensor(f"layer{layer}.attn.{host}")
    lora = params.lora
    if lora is None:
        return W
    A = params.tensor(f"lora.layer{layer}.attn.{host}.A")
    Bm = params.tensor(f"lora.layer{layer}.attn.{host}.B")
    delta = de.matmul(A.transpose(1, 0), Bm.transpose(1, 0))
    return W + delta * (lora["alpha"] / lora["rank"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    B, N, d = x.shape
    return x.reshape(B, N, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    B, H, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, H * dh)


def run_packed(
    params: PFNParams,
    packed: Packed,
    rng: np.random.Generator | None = None,
    keep_attention: bool = False,
    test_keys: bool = False,
):
    """Forward over a packed batch.

    Returns ``(out, stats, attn)`` where ``out`` is the z-space regression
    output ``(B, n_te)`` or masked logits ``(B, n_te, C)``, ``stats`` the
    regression context statistics, and ``attn`` the last-layer attention of
    query rows ``(B, H, n_te, keys)`` when requested.

    ``rng`` enables dropout (pretraining only). ``test_keys`` evaluates the
    last layer with every row as a candidate key and the mask removing query
    rows, which exposes the masked positions in the attention record.
    """
    cfg = params.config
    H, eps = cfg.n_heads, cfg.ln_eps
    n_tr, n_te = packed.n_tr, packed.n_te
    drop = cfg.dropout if rng is not None else 0.0
    h, stats = embed_packed(params, packed)
    key_mask = packed.tr_valid[:, None, None, :]
    scale = 1.0 / math.sqrt(cfg.d_head)
    attn_out = None
    for i in range(cfg.n_layers):
        pre = f"layer{i}"
        last = i == cfg.n_layers - 1
        a = de.layer_norm(h, params.tensor(f"{pre}.ln1.gamma"), params.tensor(f"{pre}.ln1.beta"), eps)
        if last and test_keys:
            kv_src, mask = a, np.concatenate([key_mask, np.zeros(key_mask.shape[:-1] + (n_te,), bool)], axis=-1)
        else:
            kv_src, mask = (a[:, :n_tr] if n_te else a), key_mask
        if last:
            # only query rows feed the head
            a = a[:, n_tr:]
            h = h[:, n_tr:]
        q = _split_heads(de.matmul(a, _weight(params, i, "Wq")) * scale, H)
        k = _split_heads(de.matmul(kv_src, _weight(params, i, "Wk")), H)
        v = _split_heads(de.matmul(kv_src, _weight(params, i, "Wv")), H)
        scores = de.matmul(q, k.transpose(0, 1, 3, 2))
        att = de.softmax(scores, axis=-1, mask=mask)
        if last and keep_attention:
            attn_out = att.data
        o = de.matmul(_merge_heads(de.matmul(att, v)), _weight(params, i, "Wo"))
        h = h + de.dropout(o, drop, rng)
        m = de.layer_norm(h, params.tensor(f"{pre}.ln2.gamma"), params.tensor(f"{pre}.ln2.beta"), eps)
        m = de.gelu(de.matmul(m, params.tensor(f"{pre}.mlp.W1")) + params.tensor(f"{pre}.mlp.b1"))
        m = de.matmul(m, params.tensor(f"{pre}.mlp.W2")) + params.tensor(f"{pre}.mlp.b2")
        h = h + de.dropout(m, drop, rng)
    h = de.layer_norm(h, params.tensor("head.ln.gamma"), params.tensor("head.ln.beta"), eps)
    h = de.gelu(de.matmul(h, params.tensor("head.W1")) + params.tensor("head.b1"))
    if packed.task is TaskType.REGRESSION:
        out = de.matmul(h, params.tensor("head.reg.W")) + params.tensor("head.reg.b")
        out = out.reshape(out.shape[0], n_te)
    else:
        out = de.matmul(h, params.tensor("head.cls.W")) + params.tensor("head.cls.b")
        inactive = np.arange(cfg.max_classes)[None, None, :] >= packed.n_classes[:, None, None]
        out = de.masked_fill(out, inactive, -np.inf)
    return out, stats, attn_out


def _descale(out: np.ndarray, stats, task: TaskType) -> np.ndarray:
    if task is TaskType.REGRESSION:
        mu, _, raw = stats
        return out * raw[:, None] + mu[:, None]
    return out


def forward(params: PFNParams, batch: ContextBatch) -> np.ndarray:
    """Predictions for the query rows of ``batch``.

    Regression returns de-scaled values ``(n_test,)``; classification returns
    logits ``(n_test, max_classes)`` with inactive classes at ``-inf``.
    """
    return forward_with_attention(params, batch, _attention=False)[0]


def forward_with_attention(params: PFNParams, batch: ContextBatch, test_keys: bool = False, _attention: bool = True):
    """Predictions plus the last-layer :class:`AttentionRecord` of the query rows."""
    cfg = params.config
    validate_batch(batch, cfg)
    if batch.n_test == 0:
        shape = (0,) if batch.task_type is TaskType.REGRESSION else (0, cfg.max_classes)
        rec = AttentionRecord(np.zeros((0, batch.n_train, cfg.n_heads), np.float32), batch.n_train)
        return np.zeros(shape, np.float32), rec
    packed = pack([batch], cfg)
    out, stats, attn = run_packed(params, packed, keep_attention=_attention, test_keys=test_keys)
    pred = _descale(out.data.astype(np.float64), stats, batch.task_type)[0].astype(np.float32)
    if not _attention:
        return pred, None
    weights = np.ascontiguousarray(np.transpose(attn[0], (1, 2, 0)))
    return pred, AttentionRecord(weights, batch.n_train)


def predict_proba(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of masked logits (float64)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(params: PFNParams, batch: ContextBatch, chunk: int | None = None) -> np.ndarray:
    """Regression values or class probabilities, optionally in query chunks."""
    if chunk is None or batch.n_test <= chunk:
        out = forward(params, batch)
    else:
        parts = []
        for s in range(0, batch.n_test, chunk):
            sub = ContextBatch(
                batch.X_train, batch.y_train, batch.X_test[s : s + chunk], batch.task_type,
                batch.active_classes, batch.feature_mask,
            )
            parts.append(forward(params, sub))
        out = np.concatenate(parts, axis=0)
    if batch.task_type is TaskType.CLASSIFICATION:
        return predict_proba(out)[:, : batch.active_classes]
    return out.astype(np.float64)
