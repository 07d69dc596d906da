"""Fusion of lexical and acoustic streams, and the per-token classifier.

Each layer adds lexical self-attention and lexical-to-acoustic
cross-attention onto the residual stream, then layer-normalizes::

    S_l = Att(q=H, k=H, v=H)
    S_a = Att(q=H, k=A, v=A)
    H'  = LayerNorm(S_l + S_a + H)

Queries always come from the lexical side so the output keeps the token
length regardless of how many acoustic rows there are.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from . import tensor as T
from .attention import attention, init_attention
from .tensor import Tensor


class Label(IntEnum):
    NONE = 0
    COMMA = 1
    FULLSTOP = 2
    QUESTION = 3


NUM_CLASSES = len(Label)


def init_bootstrapper(params: dict, d: int, layers: int, rng: np.random.Generator) -> None:
    for i in range(layers):
        p = f"bootstrapper.{i}"
        init_attention(params, f"{p}.self", d, rng)
        init_attention(params, f"{p}.cross", d, rng)
        params[f"{p}.ln.g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"{p}.ln.b"] = Tensor(np.zeros(d), requires_grad=True)


def init_classifier(params: dict, d: int, rng: np.random.Generator) -> None:
    params["classifier.w"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (d, NUM_CLASSES)), requires_grad=True)
    params["classifier.b"] = Tensor(np.zeros(NUM_CLASSES), requires_grad=True)


def bootstrapper_layer(lexical: Tensor, acoustic: Tensor, lex_mask, acoustic_mask, params: dict,
                       prefix: str, heads: int, dropout: float = 0.0, training: bool = False,
                       rng: np.random.Generator | None = None, record: list | None = None) -> Tensor:
    """One fusion layer; ``lexical`` is ``[(B x) n x d]``, ``acoustic`` ``[(B x) m x d]``."""
    if acoustic.shape[-2] == 0:
        raise RuntimeError("acoustic side is empty; the virtual embedding should have filled it")
    s_lex = attention(lexical, lexical, lexical, lex_mask, params, f"{prefix}.self", heads, record)
    s_ac = attention(lexical, acoustic, acoustic, acoustic_mask, params, f"{prefix}.cross", heads, record)
    hybrid = T.add(T.add(T.dropout(s_lex, dropout, training, rng),
                         T.dropout(s_ac, dropout, training, rng)), lexical)
    return T.layer_norm(hybrid, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])


def classify(hybrid: Tensor, params: dict) -> Tensor:
    """Per-token logits ``[... x 4]``; softmax is folded into the loss."""
    return T.add(T.matmul(hybrid, params["classifier.w"]), params["classifier.b"])


def predict_labels(logits) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already resolves ties to the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1)
