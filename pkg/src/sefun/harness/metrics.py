"""Accuracy, macro-F1 and micro-F1 for single-label multiclass predictions.

Macro-F1 averages per-class F1 over every class seen in gold or predicted
labels; a class that never appears in one of them contributes F1 = 0.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence

MACRO_UNIVERSE_NOTE = "macro-F1 averages over classes present in gold or predictions"


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    micro_f1: float
    n: int
    per_class: dict = field(default_factory=dict)

    def rows(self, name=str) -> list[dict]:
        return [
            {"label": name(c), "precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
            for c, s in self.per_class.items()
        ]


def _check(gold: Sequence, pred: Sequence) -> None:
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold labels vs {len(pred)} predictions")
    if not gold:
        raise EmptyInput("no labels to evaluate")


def accuracy(gold: Sequence[Hashable], pred: Sequence[Hashable]) -> float:
    _check(gold, pred)
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def per_class_scores(gold: Sequence[Hashable], pred: Sequence[Hashable]) -> dict:
    _check(gold, pred)
    tp, fp, fn = Counter(), Counter(), Counter()
    for g, p in zip(gold, pred):
        if g == p:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    support = Counter(gold)
    classes = sorted(set(gold) | set(pred), key=lambda c: (str(type(c)), c))
    out = {}
    for c in classes:
        p_den, r_den = tp[c] + fp[c], tp[c] + fn[c]
        out[c] = ClassScore(
            tp[c] / p_den if p_den else 0.0,
            tp[c] / r_den if r_den else 0.0,
            _f1(tp[c], fp[c], fn[c]),
            support[c],
        )
    return out


def macro_f1(gold: Sequence[Hashable], pred: Sequence[Hashable]) -> float:
    scores = per_class_scores(gold, pred)
    return sum(s.f1 for s in scores.values()) / len(scores)


def micro_f1(gold: Sequence[Hashable], pred: Sequence[Hashable]) -> float:
    """F1 from counts pooled over classes."""
    _check(gold, pred)
    tp = sum(g == p for g, p in zip(gold, pred))
    wrong = len(gold) - tp
    # every wrong prediction is one false positive and one false negative
    return _f1(tp, wrong, wrong)


def evaluate(gold: Sequence[Hashable], pred: Sequence[Hashable]) -> EvalReport:
    per = per_class_scores(gold, pred)
    return EvalReport(
        accuracy=accuracy(gold, pred),
        macro_f1=sum(s.f1 for s in per.values()) / len(per),
        micro_f1=micro_f1(gold, pred),
        n=len(gold),
        per_class=per,
    )
