"""Word vocabulary, tokenization and the lexical transformer encoder."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .attention import attention, init_attention
from .tensor import Tensor

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:2]) != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index.get(word, UNK)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    words: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.words):
            raise ValueError("ids and words differ in length")
        if not self.ids:
            raise ValueError("empty token sequence")

    def __len__(self) -> int:
        return len(self.ids)


def build_vocabulary(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Words seen at least ``min_count`` times, most frequent first, ties alphabetical."""
    counts: Counter[str] = Counter()
    lines = 0
    for words in corpus:
        lines += 1
        counts.update(words)
    if not lines:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + kept)


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    words = text.split()
    if not words:
        raise ValueError("cannot tokenize empty text")
    return TokenSequence(tuple(vocab.id(w) for w in words), tuple(words))


def positional_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, d, 2) / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: d // 2])
    return pe


def init_encoder(params: dict, vocab_size: int, d: int, layers: int, ffn: int,
                 rng: np.random.Generator) -> None:
    params["embed.tokens"] = Tensor(rng.normal(0.0, 0.02, (vocab_size, d)), requires_grad=True)
    for i in range(layers):
        p = f"encoder.{i}"
        init_attention(params, f"{p}.attn", d, rng)
        params[f"{p}.ln1.g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"{p}.ln1.b"] = Tensor(np.zeros(d), requires_grad=True)
        params[f"{p}.ff1.w"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / d), (d, ffn)), requires_grad=True)
        params[f"{p}.ff1.b"] = Tensor(np.zeros(ffn), requires_grad=True)
        params[f"{p}.ff2.w"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(ffn), (ffn, d)), requires_grad=True)
        params[f"{p}.ff2.b"] = Tensor(np.zeros(d), requires_grad=True)
        params[f"{p}.ln2.g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"{p}.ln2.b"] = Tensor(np.zeros(d), requires_grad=True)


def encode(ids, mask, params: dict, layers: int, heads: int, dropout: float = 0.0,
           training: bool = False, rng: np.random.Generator | None = None,
           positions: bool = True, record: list | None = None) -> Tensor:
    """Contextual embeddings ``[B x n x d]`` for a padded id grid ``[B x n]``.

    ``mask`` is True at real tokens; PAD keys are excluded from attention.
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    B, n = ids.shape
    table = params["embed.tokens"]
    d = table.shape[1]
    x = T.embedding_lookup(table, ids)
    if positions:
        x = T.add(x, positional_encoding(n, d))
    x = T.dropout(x, dropout, training, rng)
    for i in range(layers):
        p = f"encoder.{i}"
        a = attention(x, x, x, mask, params, f"{p}.attn", heads, record)
        x = T.layer_norm(T.add(x, T.dropout(a, dropout, training, rng)),
                         params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        h = T.relu(T.add(T.matmul(x, params[f"{p}.ff1.w"]), params[f"{p}.ff1.b"]))
        h = T.add(T.matmul(h, params[f"{p}.ff2.w"]), params[f"{p}.ff2.b"])
        x = T.layer_norm(T.add(x, T.dropout(h, dropout, training, rng)),
                         params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    return x
