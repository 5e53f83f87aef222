"""Accuracy, confusion matrices, and the worst-prediction case study.

Accuracy is the exact ratio of correct predictions. The case study ranks
mispredicted examples by the probability the model assigned to the true
class (ascending, so the most confidently wrong come first) and reports the
share of each true class within the top k, which is how error distributions
are usually plotted for this task.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import LabeledExample
from .ensemble import PredictionTable

REPORT_FORMATS = ("text", "csv")


@dataclass
class EvalResult:
    accuracy: float
    right: int
    total: int
    confusion: np.ndarray  # [C, C], rows = true class, cols = predicted

    @property
    def error_rate(self) -> float:
        return (self.total - self.right) / self.total


@dataclass
class CaseStudyEntry:
    id: str
    true_class: int
    predicted_class: int
    true_class_prob: float


@dataclass
class CaseStudy:
    """Top-k worst mispredictions (lowest true-class probability first) and
    the per-true-class percentage distribution over that set."""

    k: int
    entries: list[CaseStudyEntry] = field(default_factory=list)
    distribution: list[tuple[int, float]] = field(default_factory=list)


def _gold_by_id(gold: Sequence[LabeledExample]) -> dict[str, int]:
    labels: dict[str, int] = {}
    for example in gold:
        if example.label is None:
            raise ValueError(f"gold example {example.id!r} is unlabeled")
        labels[example.id] = example.label
    return labels


def _check_id_sets(preds: PredictionTable, gold_ids: set[str]) -> None:
    pred_ids = set(preds.ids)
    if pred_ids != gold_ids:
        offending = sorted(pred_ids.symmetric_difference(gold_ids))[0]
        raise ValueError(f"prediction and gold id sets differ: offending id {offending!r}")


def accuracy(
    preds: PredictionTable, gold: Sequence[LabeledExample], num_classes: int | None = None
) -> EvalResult:
    """Exact Right/All plus the confusion matrix."""
    labels = _gold_by_id(gold)
    _check_id_sets(preds, set(labels))
    if num_classes is None:
        width = len(preds.rows[0].probs) if preds.rows and preds.rows[0].probs is not None else 0
        num_classes = max(
            [width - 1] + [r.predicted for r in preds] + list(labels.values())
        ) + 1
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    right = 0
    for row in preds:
        true = labels[row.id]
        confusion[true, row.predicted] += 1
        if row.predicted == true:
            right += 1
    total = len(preds)
    return EvalResult(accuracy=right / total, right=right, total=total, confusion=confusion)


def case_study(preds: PredictionTable, gold: Sequence[LabeledExample], k: int = 100) -> CaseStudy:
    """Rank mispredictions by ascending true-class probability (ties by id)
    and take the top k; fewer mispredictions than k means all of them."""
    if not preds.has_probs:
        raise ValueError(
            "case study needs class probabilities; re-run prediction with "
            "probabilities enabled (--probs)"
        )
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    labels = _gold_by_id(gold)
    _check_id_sets(preds, set(labels))
    wrong = []
    for row in preds:
        true = labels[row.id]
        if row.predicted != true:
            wrong.append(
                CaseStudyEntry(
                    id=row.id,
                    true_class=true,
                    predicted_class=row.predicted,
                    true_class_prob=float(row.probs[true]),
                )
            )
    wrong.sort(key=lambda e: (e.true_class_prob, e.id))
    selected = wrong[:k]
    distribution: list[tuple[int, float]] = []
    if selected:
        counts: dict[int, int] = {}
        for entry in selected:
            counts[entry.true_class] = counts.get(entry.true_class, 0) + 1
        distribution = sorted(
            ((cls, 100.0 * n / len(selected)) for cls, n in counts.items()),
            key=lambda item: (-item[1], item[0]),
        )
    return CaseStudy(k=k, entries=selected, distribution=distribution)


def _class_name(index: int, label_names: Sequence[str] | None) -> str:
    if label_names is not None and index < len(label_names):
        return label_names[index]
    return f"class-{index}"


def render_report(
    result: EvalResult,
    case: CaseStudy | None = None,
    fmt: str = "text",
    label_names: Sequence[str] | None = None,
) -> str:
    """Text report or ``class,percent`` CSV of the case-study distribution."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown format {fmt!r}; supported formats: {REPORT_FORMATS}")
    if fmt == "csv":
        lines = ["class,percent"]
        if case is not None:
            for cls, percent in case.distribution:
                lines.append(f"{_class_name(cls, label_names)},{percent!r}")
        return "\n".join(lines) + "\n"

    lines = [f"accuracy {result.accuracy:.3f} (right {result.right} / all {result.total})"]
    if case is not None:
        lines.append("")
        if not case.entries:
            lines.append("case study: no mispredictions")
        else:
            lines.append(f"case study: top {len(case.entries)} worst predictions (k = {case.k})")
            name_width = max(
                len(_class_name(cls, label_names)) for cls, _ in case.distribution
            )
            for cls, percent in case.distribution:
                lines.append(f"  {_class_name(cls, label_names):<{name_width}}  {percent:5.1f}%")
    return "\n".join(lines) + "\n"


def render_method_comparison(
    entries: Sequence[tuple[str, float]], fmt: str = "text"
) -> str:
    """Render (method, accuracy) rows, accuracy to 3 decimals."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown format {fmt!r}; supported formats: {REPORT_FORMATS}")
    if fmt == "csv":
        lines = ["method,accuracy"]
        lines.extend(f"{name},{value:.3f}" for name, value in entries)
        return "\n".join(lines) + "\n"
    name_width = max(len(name) for name, _ in entries) if entries else 0
    return "".join(f"{name:<{name_width}}  {value:.3f}\n" for name, value in entries)
