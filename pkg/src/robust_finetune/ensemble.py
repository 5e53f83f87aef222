"""Bagging-style aggregation of prediction tables.

Independently trained models each produce a prediction table; the ensemble
takes a majority vote per example. Vote ties fall back to the highest mean
probability among the tied classes when every table carries probabilities,
and to the lowest class index otherwise. Bootstrap resampling of training
corpora is available but optional; voting alone is the default.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TIE_RULES = ("mean_prob", "lowest_index")
PROB_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PredictionRow:
    id: str
    predicted: int
    probs: np.ndarray | None = None


class PredictionTable:
    """Ordered prediction rows with unique ids; probability rows, when
    present, must sum to 1 within 1e-6."""

    def __init__(self, rows: Sequence[PredictionRow]):
        self.rows = list(rows)
        seen: set[str] = set()
        for row in self.rows:
            if row.id in seen:
                raise ValueError(f"duplicate id {row.id!r} in prediction table")
            seen.add(row.id)
            if row.probs is not None:
                total = float(np.asarray(row.probs, dtype=np.float64).sum())
                if abs(total - 1.0) > PROB_SUM_TOLERANCE:
                    raise ValueError(
                        f"probability row for id {row.id!r} sums to {total}, expected 1"
                    )

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.rows]

    @property
    def has_probs(self) -> bool:
        return all(r.probs is not None for r in self.rows)

    def by_id(self) -> dict[str, PredictionRow]:
        return {r.id: r for r in self.rows}


def majority_vote(
    tables: Sequence[PredictionTable], tie_rule: str = "mean_prob"
) -> PredictionTable:
    """Per id, the class with the most votes across tables.

    Output rows follow the first table's id order and carry the mean
    probability vector when every input table has probabilities.
    """
    if not tables:
        raise ValueError("majority_vote requires at least one prediction table")
    if tie_rule not in TIE_RULES:
        raise ValueError(f"unknown tie_rule {tie_rule!r}; expected one of {TIE_RULES}")

    first_ids = set(tables[0].ids)
    for t, table in enumerate(tables[1:], start=1):
        ids = set(table.ids)
        if ids != first_ids:
            offending = sorted(ids.symmetric_difference(first_ids))[0]
            raise ValueError(
                f"prediction table {t} id set differs from table 0: "
                f"offending id {offending!r}"
            )

    maps = [t.by_id() for t in tables]
    all_probs = all(t.has_probs for t in tables)
    voted_rows = []
    for example_id in tables[0].ids:
        rows = [m[example_id] for m in maps]
        counts = Counter(r.predicted for r in rows)
        top = max(counts.values())
        tied = sorted(c for c, n in counts.items() if n == top)
        if len(tied) == 1:
            winner = tied[0]
        elif tie_rule == "mean_prob" and all_probs:
            mean = np.mean([np.asarray(r.probs, dtype=np.float64) for r in rows], axis=0)
            winner = tied[int(np.argmax(mean[tied]))]
        else:
            winner = tied[0]
        probs = None
        if all_probs:
            probs = np.mean([np.asarray(r.probs, dtype=np.float64) for r in rows], axis=0)
            probs = probs / probs.sum()
        voted_rows.append(PredictionRow(id=example_id, predicted=winner, probs=probs))
    return PredictionTable(voted_rows)


def bootstrap_split(
    corpus: Sequence, k: int, seed: int, resample: bool = True
) -> list[list]:
    """k training corpora for ensemble members.

    With resampling, each corpus is drawn with replacement at the original
    size; without, each member sees the original corpus.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not corpus:
        raise ValueError("cannot split an empty corpus")
    if not resample:
        return [list(corpus) for _ in range(k)]
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(k):
        indices = rng.integers(0, len(corpus), size=len(corpus))
        splits.append([corpus[int(i)] for i in indices])
    return splits


def write_prediction_table(path, table: PredictionTable) -> None:
    """``id,class[,p0..pC-1]`` rows; probabilities written in full precision
    only when every row carries them."""
    with_probs = table.has_probs and len(table) > 0
    num_classes = len(table.rows[0].probs) if with_probs else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["id", "class"] + [f"p{i}" for i in range(num_classes)]
        writer.writerow(header)
        for row in table:
            record = [row.id, str(row.predicted)]
            if with_probs:
                record.extend(repr(float(v)) for v in row.probs)
            writer.writerow(record)


def read_prediction_table(path) -> PredictionTable:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty prediction file") from None
        if header[:2] != ["id", "class"]:
            raise ValueError(f"{path}: expected header starting 'id,class', got {header}")
        prob_cols = len(header) - 2
        for record in reader:
            lineno = reader.line_num
            if len(record) != len(header):
                raise ValueError(
                    f"{path}: malformed row at line {lineno}: expected "
                    f"{len(header)} columns, got {len(record)}"
                )
            try:
                predicted = int(record[1])
                probs = (
                    np.array([float(v) for v in record[2:]], dtype=np.float64)
                    if prob_cols
                    else None
                )
            except ValueError:
                raise ValueError(f"{path}: malformed row at line {lineno}") from None
            rows.append(PredictionRow(id=record[0], predicted=predicted, probs=probs))
    return PredictionTable(rows)
