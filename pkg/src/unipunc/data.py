"""Corpus reading, label derivation and mixed-modality batching."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .acoustic import AcousticFeatures, load_features, read_header
from .bootstrapper import Label
from .encoder import PAD, TokenSequence, Vocabulary, tokenize

MARKS = {",": Label.COMMA, ".": Label.FULLSTOP, "?": Label.QUESTION,
         "!": Label.FULLSTOP, ";": Label.FULLSTOP, ":": Label.COMMA}
RENDER = {Label.NONE: "", Label.COMMA: ",", Label.FULLSTOP: ".", Label.QUESTION: "?"}
CORPUS_FIELDS = {"text", "audio"}


class CorpusError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def derive_labels(text: str) -> tuple[list[str], list[Label]]:
    """Split punctuated text into lowercase words and the mark following each."""
    words: list[str] = []
    labels: list[Label] = []
    for raw in text.split():
        label = Label.NONE
        if raw[-1] in MARKS:
            label = MARKS[raw[-1]]
            raw = raw[:-1]
        if not raw:
            if words and label is not Label.NONE:
                labels[-1] = label
            continue
        words.append(raw.lower())
        labels.append(label)
    if not any(any(ch.isalnum() for ch in w) for w in words):
        raise ValueError(f"no alphanumeric word in {text!r}")
    return words, labels


def render(words: Sequence[str], labels: Sequence[int]) -> str:
    if len(words) != len(labels):
        raise ValueError(f"{len(words)} words but {len(labels)} labels")
    return " ".join(w + RENDER[Label(l)] for w, l in zip(words, labels))


@dataclass
class Sample:
    tokens: TokenSequence
    labels: tuple[Label, ...]
    feature_path: str | None = None
    features: AcousticFeatures | None = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = tuple(Label(l) for l in self.labels)
        if len(self.labels) != len(self.tokens):
            raise ValueError(f"{len(self.tokens)} tokens but {len(self.labels)} labels")
        if self.features is not None and self.feature_path is None:
            raise ValueError("features given without a feature path")

    @property
    def has_audio(self) -> bool:
        return self.feature_path is not None

    def load(self) -> AcousticFeatures | None:
        if self.has_audio and self.features is None:
            self.features = load_features(self.feature_path)
        return self.features


@dataclass
class Batch:
    ids: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    features: list[AcousticFeatures | None]
    has_audio: list[bool]
    samples: list[Sample] = field(repr=False)

    def __len__(self) -> int:
        return self.ids.shape[0]


def read_records(path, features_root=None, check_audio: bool = True) -> list[tuple[int, str, str | None]]:
    """``(line_number, text, resolved_audio_path)`` for each non-blank corpus line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus not found: {path}")
    root = Path(features_root) if features_root is not None else path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(path, lineno, f"malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(path, lineno, "expected a JSON object")
            unknown = set(obj) - CORPUS_FIELDS
            if unknown:
                raise CorpusError(path, lineno, f"unknown field(s) {sorted(unknown)}")
            text = obj.get("text")
            if not isinstance(text, str):
                raise CorpusError(path, lineno, 'missing or non-string "text"')
            audio = obj.get("audio")
            if audio is not None:
                if not isinstance(audio, str):
                    raise CorpusError(path, lineno, '"audio" must be a string path')
                resolved = root / audio
                if check_audio and not resolved.is_file():
                    raise CorpusError(path, lineno, f"feature file not found: {resolved}")
                audio = str(resolved)
            records.append((lineno, text, audio))
    return records


def corpus_words(path) -> list[list[str]]:
    out = []
    for lineno, text, _ in read_records(path, check_audio=False):
        try:
            out.append(derive_labels(text)[0])
        except ValueError as exc:
            raise CorpusError(path, lineno, str(exc)) from None
    return out


def load_corpus(path, vocab: Vocabulary, features_root=None, load_audio: bool = True) -> list[Sample]:
    samples = []
    for lineno, text, audio in read_records(path, features_root):
        try:
            words, labels = derive_labels(text)
            tokens = tokenize(" ".join(words), vocab)
            features = load_features(audio) if (audio and load_audio) else None
        except (ValueError, OSError) as exc:
            raise CorpusError(path, lineno, str(exc)) from None
        samples.append(Sample(tokens, tuple(labels), audio, features))
    return samples


def make_batches(samples: Sequence[Sample], batch_size: int, shuffle_seed: int | None = None) -> list[Batch]:
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    if not samples:
        raise ValueError("no samples to batch")
    order = list(range(len(samples)))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(order)
    return [collate([samples[i] for i in order[lo:lo + batch_size]])
            for lo in range(0, len(order), batch_size)]


def collate(group: Sequence[Sample]) -> Batch:
    n = max(len(s.tokens) for s in group)
    ids = np.full((len(group), n), PAD, dtype=np.int64)
    labels = np.full((len(group), n), int(Label.NONE), dtype=np.int64)
    mask = np.zeros((len(group), n), dtype=bool)
    for i, s in enumerate(group):
        k = len(s.tokens)
        ids[i, :k] = s.tokens.ids
        labels[i, :k] = s.labels
        mask[i, :k] = True
    return Batch(ids, labels, mask, [s.load() for s in group], [s.has_audio for s in group], list(group))


@dataclass
class CorpusStats:
    sentences: int
    audio: int
    avg_sentence_len: float
    avg_audio_len_s: float | None

    def as_dict(self) -> dict:
        return {"sentences": self.sentences, "audio": self.audio,
                "avg_sentence_len": self.avg_sentence_len, "avg_audio_len_s": self.avg_audio_len_s}

    def table(self) -> str:
        audio_len = "n/a" if self.avg_audio_len_s is None else f"{self.avg_audio_len_s:.1f}"
        return (f"{'# of sent.':>12} {'# of audio':>12} {'sent. len.':>12} {'audio len.':>12}\n"
                f"{self.sentences:>12d} {self.audio:>12d} {self.avg_sentence_len:>12.1f} {audio_len:>12}")


def corpus_stats(samples: Sequence[Sample]) -> CorpusStats:
    lengths = [len(s.tokens) for s in samples]
    durations = []
    for s in samples:
        if not s.has_audio:
            continue
        if s.features is not None:
            durations.append(s.features.duration_s)
        else:
            rows, _, rate = read_header(s.feature_path)
            durations.append(rows / rate)
    return CorpusStats(
        sentences=len(samples),
        audio=len(durations),
        avg_sentence_len=float(np.mean(lengths)) if lengths else 0.0,
        avg_audio_len_s=float(np.mean(durations)) if durations else None,
    )
