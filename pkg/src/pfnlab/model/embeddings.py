"""Feature-embedding modules that can be attached to a pretrained model.

Both modules start out reproducing the base shared-linear map exactly, so a
freshly attached model predicts what the base model predicts.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

FALLBACK_EDGES = (0.0, 1.0)


def quantile_edges(col: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin edges at empirical quantiles of ``col`` with duplicates removed.

    A constant (or empty) column falls back to a single unit-width bin.
    """
    col = np.asarray(col, dtype=np.float64)
    col = col[np.isfinite(col)]
    if col.size == 0:
        return np.array(FALLBACK_EDGES)
    edges = np.unique(np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1)))
    if edges.size < 2:
        return np.array([edges[0], edges[0] + 1.0])
    return edges


def ple_encode(X: np.ndarray, edges: list[np.ndarray], n_bins: int) -> np.ndarray:
    """Piecewise-linear encoding, shape ``X.shape + (n_bins,)``.

    For a value inside bin k the components before k are 1, component k holds
    the fractional position, later components are 0. The first component is
    not clipped from below and the last is not clipped from above, so
    ``x == e0 + sum(widths * enc)`` holds everywhere.
    """
    X = np.asarray(X)
    out = np.zeros(X.shape + (n_bins,), dtype=X.dtype)
    for j, e in enumerate(edges):
        if j >= X.shape[-1]:
            break
        x = X[..., j].astype(np.float64)
        e = np.asarray(e, dtype=np.float64)
        nb = e.size - 1
        width = np.diff(e)
        r = (x[..., None] - e[:-1]) / width
        if nb == 1:
            enc = r
        else:
            enc = np.clip(r, 0.0, 1.0)
            enc[..., 0] = np.minimum(r[..., 0], 1.0)
            enc[..., -1] = np.maximum(r[..., -1], 0.0)
        out[..., j, :nb] = enc
    return out


def default_edges(n_features: int, n_bins: int) -> list[np.ndarray]:
    """Edges at standard-normal quantiles, for models built before seeing data."""
    from scipy.stats import norm

    qs = np.linspace(0.0, 1.0, n_bins + 1)
    qs[0], qs[-1] = norm.cdf(-3.0), norm.cdf(3.0)
    e = norm.ppf(qs)
    return [e.copy() for _ in range(n_features)]


def attach_feature_embeddings(params, kind: str, train_X: np.ndarray | None = None, n_bins: int | None = None):
    """Return a copy of ``params`` with an untied or piecewise-linear feature embedding.

    The new entries are trainable and initialized so the model output is
    unchanged. Piecewise bins are fitted on ``train_X`` quantiles.
    """
    if kind not in ("untied_linear", "piecewise_linear"):
        raise ContractError(f"cannot attach feature embedding of kind {kind!r}")
    current = params.meta.get("feature_embedding", {}).get("kind", "shared_linear")
    if current != "shared_linear":
        raise ContractError(f"a {current} feature embedding is already attached")
    out = params.copy()
    cfg = out.config
    F, d = cfg.max_features, cfg.d_model
    slope = out["feat_emb.slope"].astype(np.float64)
    bias = out["feat_emb.bias"].astype(np.float64)
    ident = out["feat_emb.ident"].astype(np.float64)
    W = ident * slope
    b = ident * bias
    if kind == "untied_linear":
        out.add("feat_emb.untied.W", W)
        out.add("feat_emb.untied.b", b)
        out.meta["feature_embedding"] = {"kind": kind}
        return out
    T = n_bins or cfg.n_bins
    if train_X is None:
        edges = default_edges(F, T)
    else:
        train_X = np.asarray(train_X, dtype=np.float64)
        edges = [quantile_edges(train_X[:, j], T) for j in range(train_X.shape[1])]
        edges += [np.array(FALLBACK_EDGES) for _ in range(F - len(edges))]
    V = np.zeros((F, T, d))
    c = np.zeros((F, d))
    for j, e in enumerate(edges):
        width = np.diff(e)
        V[j, : width.size] = width[:, None] * W[j]
        c[j] = b[j] + e[0] * W[j]
    out.add("feat_emb.ple.V", V)
    out.add("feat_emb.ple.b", c)
    out.meta["feature_embedding"] = {"kind": kind, "n_bins": T, "edges": [list(map(float, e)) for e in edges]}
    return out
