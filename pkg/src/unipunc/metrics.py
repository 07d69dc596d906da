"""Precision / recall / F1 over the three punctuation marks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bootstrapper import NUM_CLASSES, Label

MARK_CLASSES = (Label.COMMA, Label.FULLSTOP, Label.QUESTION)


def confusion(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]],
              masks: Sequence[Sequence[bool]] | None = None) -> np.ndarray:
    """``counts[ref][hyp]`` over unmasked positions."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} reference sequences but {len(hyps)} hypotheses")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for i, (r, h) in enumerate(zip(refs, hyps)):
        r = np.asarray(r, dtype=np.int64)
        h = np.asarray(h, dtype=np.int64)
        m = np.ones(r.shape, dtype=bool) if masks is None else np.asarray(masks[i], dtype=bool)
        if r.shape != h.shape or r.shape != m.shape:
            raise ValueError(f"sequence {i}: lengths differ (ref {r.size}, hyp {h.size}, mask {m.size})")
        np.add.at(counts, (r[m], h[m]), 1)
    return counts


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(tp: int, fp: int, fn: int) -> float:
    # 2PR/(P+R) rewritten over counts: one rounding, and 0 whenever P+R is 0
    return _ratio(2 * tp, 2 * tp + fp + fn)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    per_class: dict[str, ClassScores]
    overall: ClassScores
    macro: ClassScores
    tokens: int

    def as_dict(self, include_macro: bool = False) -> dict:
        out = {
            "per_class": {k: vars(v) for k, v in self.per_class.items()},
            "overall": vars(self.overall),
            "tokens": self.tokens,
        }
        if include_macro:
            out["macro"] = vars(self.macro)
        return out

    def to_json(self, include_macro: bool = False) -> str:
        return json.dumps(self.as_dict(include_macro), indent=2)

    def table(self, include_macro: bool = False) -> str:
        rows = [f"{'':<10}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}"]
        shown = list(self.per_class.items()) + [("OVERALL", self.overall)]
        if include_macro:
            shown.append(("MACRO", self.macro))
        for name, s in shown:
            rows.append(f"{name:<10}{100 * s.precision:>8.1f}{100 * s.recall:>8.1f}"
                        f"{100 * s.f1:>8.1f}{s.support:>9d}")
        return "\n".join(rows)


def report(counts: np.ndarray) -> EvalReport:
    counts = np.asarray(counts, dtype=np.int64)
    per_class = {}
    tp_sum = fp_sum = fn_sum = 0
    for c in MARK_CLASSES:
        tp = int(counts[c, c])
        fp = int(counts[:, c].sum()) - tp
        fn = int(counts[c, :].sum()) - tp
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        per_class[c.name] = ClassScores(p, r, _f1(tp, fp, fn), tp + fn)
        tp_sum, fp_sum, fn_sum = tp_sum + tp, fp_sum + fp, fn_sum + fn
    p, r = _ratio(tp_sum, tp_sum + fp_sum), _ratio(tp_sum, tp_sum + fn_sum)
    overall = ClassScores(p, r, _f1(tp_sum, fp_sum, fn_sum), tp_sum + fn_sum)
    scores = list(per_class.values())
    macro = ClassScores(
        float(np.mean([s.precision for s in scores])),
        float(np.mean([s.recall for s in scores])),
        float(np.mean([s.f1 for s in scores])),
        overall.support,
    )
    return EvalReport(per_class, overall, macro, int(counts.sum()))


def evaluate(model, batches) -> EvalReport:
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for batch in batches:
        hyps = model.predict(batch)
        refs = [batch.labels[i, : len(h)] for i, h in enumerate(hyps)]
        counts += confusion(refs, hyps)
    return report(counts)
