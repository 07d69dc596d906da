"""Toy corpora with known labelling rules, written as JSON lines plus feature files.

Used by the acceptance runs and handy for trying the CLI without real data.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .acoustic import AcousticFeatures, write_features
from .bootstrapper import Label
from .data import render

WORDS = ["we", "they", "see", "go", "home", "now", "and", "the", "big", "red",
         "car", "what", "is", "so", "it", "time", "to", "eat", "you", "run"]


def rule_labels(words: list[str]) -> list[Label]:
    """QUESTION on "what", COMMA on "so", FULLSTOP on the last word otherwise."""
    out = []
    for i, w in enumerate(words):
        if w == "what":
            out.append(Label.QUESTION)
        elif w == "so":
            out.append(Label.COMMA)
        elif i == len(words) - 1:
            out.append(Label.FULLSTOP)
        else:
            out.append(Label.NONE)
    return out


def _write_corpus(path: Path, lines: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    return path


def rule_corpus(out_dir, n: int = 32, n_audio: int = 16, frames: int = 150, feat_dim: int = 8,
                seed: int = 0, name: str = "rule") -> Path:
    """``n`` sentences labelled by :func:`rule_labels`; the first ``n_audio`` get random features."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        words = [WORDS[j] for j in rng.integers(0, len(WORDS), rng.integers(4, 9))]
        line = {"text": render(words, rule_labels(words))}
        if i < n_audio:
            fname = f"{name}_{i:04d}.upft"
            write_features(out_dir / fname, AcousticFeatures(rng.normal(size=(frames, feat_dim)), 100.0))
            line["audio"] = fname
        lines.append(line)
    return _write_corpus(out_dir / f"{name}.jsonl", lines)


INTONATION_TEXT = ["you", "are", "coming", "home"]


def intonation_frames(question: bool, rng: np.random.Generator, frames: int = 100,
                      feat_dim: int = 8, noise: float = 0.3) -> np.ndarray:
    """A rising contour for questions, falling for statements, plus Gaussian noise."""
    contour = np.linspace(-1.0, 1.0, frames)
    if not question:
        contour = contour[::-1]
    weights = np.linspace(1.0, 0.25, feat_dim)
    return contour[:, None] * weights[None, :] + noise * rng.normal(size=(frames, feat_dim))


def intonation_corpus(out_dir, n: int = 32, frames: int = 100, feat_dim: int = 8, seed: int = 0,
                      name: str = "intonation", audio: bool = True) -> Path:
    """Identical text whose final mark (FULLSTOP or QUESTION) is carried only by the audio."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        question = i % 2 == 1
        labels = [Label.NONE] * (len(INTONATION_TEXT) - 1)
        labels.append(Label.QUESTION if question else Label.FULLSTOP)
        line = {"text": render(INTONATION_TEXT, labels)}
        if audio:
            fname = f"{name}_{i:04d}.upft"
            feats = AcousticFeatures(intonation_frames(question, rng, frames, feat_dim), 100.0)
            write_features(out_dir / fname, feats)
            line["audio"] = fname
        lines.append(line)
    return _write_corpus(out_dir / f"{name}.jsonl", lines)
