"""Multi-head scaled dot-product attention with key masking."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def init_attention(params: dict, prefix: str, d: int, rng: np.random.Generator) -> None:
    std = 1.0 / np.sqrt(d)
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = Tensor(rng.normal(0.0, std, (d, d)), requires_grad=True)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, n, d = x.shape
    return T.transpose(T.reshape(x, (B, n, heads, d // heads)), (0, 2, 1, 3))


def attention(q: Tensor, k: Tensor, v: Tensor, key_mask, params: dict, prefix: str,
              heads: int, record: list | None = None) -> Tensor:
    """``softmax(QK^T / sqrt(d/heads)) V`` per head, heads concatenated and projected.

    Accepts ``[n x d]`` or batched ``[B x n x d]`` inputs; ``key_mask`` is
    ``[nk]`` or ``[B x nk]`` with True on usable keys.  When ``record`` is a
    list the ``[B x heads x nq x nk]`` weight array is appended to it.
    """
    unbatched = q.ndim == 2
    if unbatched:
        q, k, v = (T.reshape(t, (1,) + t.shape) for t in (q, k, v))
    B, nq, d = q.shape
    if d % heads:
        raise T.DimensionError(f"attention: width {d} not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[0] != B or k.shape[2] != d:
        raise T.DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    nk = k.shape[1]
    if key_mask is None:
        key_mask = np.ones((B, nk), dtype=bool)
    key_mask = np.asarray(key_mask, dtype=bool).reshape(B, nk)
    if not key_mask.any(axis=1).all():
        raise T.DimensionError("attention: every key is masked for some query row")

    Q = _split_heads(T.matmul(q, params[f"{prefix}.wq"]), heads)
    K = _split_heads(T.matmul(k, params[f"{prefix}.wk"]), heads)
    V = _split_heads(T.matmul(v, params[f"{prefix}.wv"]), heads)
    scores = T.scale(T.matmul(Q, T.transpose(K)), 1.0 / np.sqrt(d // heads))
    weights = T.softmax_rows(scores, key_mask[:, None, None, :])
    if record is not None:
        record.append(weights.data)
    ctx = T.reshape(T.transpose(T.matmul(weights, V), (0, 2, 1, 3)), (B, nq, d))
    out = T.matmul(ctx, params[f"{prefix}.wo"])
    if unbatched:
        out = T.reshape(out, (nq, d))
    return out
