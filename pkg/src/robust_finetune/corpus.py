"""Corpus ingestion, vocabulary, tokenization, and batching.

Corpora are UTF-8 delimiter-separated files with a header row naming the
``id``, ``text`` and (optionally) ``label`` columns. The tokenizer is a
deterministic whitespace split with an UNK fallback; PAD is pinned to id 0
so attention masks are derivable from token ids alone.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

DEFAULT_NUM_CLASSES = 14


@dataclass(frozen=True)
class LabeledExample:
    """One text with an opaque id and an optional gold class index."""

    id: str
    text: str
    label: int | None = None


@dataclass(frozen=True)
class CorpusSchema:
    id_column: str = "id"
    text_column: str = "text"
    label_column: str = "label"
    delimiter: str = ","


@dataclass(frozen=True)
class LabelSet:
    """Ordered class names; index <-> name mapping is stable across save/load."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be distinct")
        if not self.names:
            raise ValueError("label set must contain at least one name")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for name in self.names:
                fh.write(name + "\n")

    @classmethod
    def load(cls, path) -> "LabelSet":
        with open(path, encoding="utf-8") as fh:
            names = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tuple(names))


def default_label_set(num_classes: int = DEFAULT_NUM_CLASSES) -> LabelSet:
    """"Human" plus generically named generator classes."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    names = ["Human"] + [f"Generator-{i:02d}" for i in range(1, num_classes)]
    return LabelSet(tuple(names))


class Vocabulary:
    """token -> id map with PAD at 0 and UNK at 1."""

    def __init__(self, tokens: Sequence[str]):
        ordered = [PAD_TOKEN, UNK_TOKEN] + [
            t for t in tokens if t not in (PAD_TOKEN, UNK_TOKEN)
        ]
        self._token_to_id = {tok: i for i, tok in enumerate(ordered)}
        self._id_to_token = ordered

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def save(self, path) -> None:
        """One ``token<TAB>id`` per line; whitespace-split tokens never
        contain tabs, so the format round-trips losslessly."""
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self._id_to_token):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        entries: list[tuple[str, int]] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    token, id_text = line.split("\t")
                    token_id = int(id_text)
                except ValueError as exc:
                    raise ValueError(f"malformed vocabulary line {lineno}: {line!r}") from exc
                entries.append((token, token_id))
        entries.sort(key=lambda e: e[1])
        if [i for _, i in entries] != list(range(len(entries))):
            raise ValueError("vocabulary ids must be a gap-free range starting at 0")
        if len(entries) < 2 or entries[0][0] != PAD_TOKEN or entries[1][0] != UNK_TOKEN:
            raise ValueError(f"vocabulary must start with {PAD_TOKEN} at 0 and {UNK_TOKEN} at 1")
        return cls([tok for tok, _ in entries[2:]])


@dataclass
class TokenizedBatch:
    """Fixed-size batch: token ids [B, L], mask [B, L] in {0, 1}, optional
    labels [B]. The mask is 1 exactly on non-PAD positions."""

    ids: list[str]
    token_ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_length(self) -> int:
        return self.token_ids.shape[1]


def load_corpus(path, schema: CorpusSchema | None = None) -> list[LabeledExample]:
    """Read a corpus file into examples, preserving file order.

    Raises on a malformed row (naming the line number) and on duplicate ids.
    A missing label column means all labels are absent.
    """
    schema = schema or CorpusSchema()
    examples: list[LabeledExample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        try:
            id_idx = header.index(schema.id_column)
            text_idx = header.index(schema.text_column)
        except ValueError:
            raise ValueError(
                f"{path}: header must contain {schema.id_column!r} and "
                f"{schema.text_column!r} columns, got {header}"
            ) from None
        label_idx = header.index(schema.label_column) if schema.label_column in header else None

        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: malformed row at line {lineno}: expected "
                    f"{len(header)} columns, got {len(row)}"
                )
            example_id = row[id_idx]
            if example_id in seen:
                raise ValueError(f"{path}: duplicate id {example_id!r} at line {lineno}")
            seen.add(example_id)
            label: int | None = None
            if label_idx is not None and row[label_idx] != "":
                try:
                    label = int(row[label_idx])
                except ValueError:
                    raise ValueError(
                        f"{path}: malformed row at line {lineno}: "
                        f"label {row[label_idx]!r} is not an integer"
                    ) from None
                if label < 0:
                    raise ValueError(
                        f"{path}: malformed row at line {lineno}: label {label} is negative"
                    )
            examples.append(LabeledExample(id=example_id, text=row[text_idx], label=label))
    return examples


def save_corpus(path, examples: Sequence[LabeledExample], schema: CorpusSchema | None = None) -> None:
    """Write examples in the corpus file format (labels only if any present)."""
    schema = schema or CorpusSchema()
    with_labels = any(e.label is not None for e in examples)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=schema.delimiter)
        header = [schema.id_column, schema.text_column]
        if with_labels:
            header.append(schema.label_column)
        writer.writerow(header)
        for e in examples:
            row = [e.id, e.text]
            if with_labels:
                row.append("" if e.label is None else str(e.label))
            writer.writerow(row)


def build_vocab(corpus: Sequence[LabeledExample], max_size: int) -> Vocabulary:
    """Rank tokens by frequency, ties broken lexicographically; reserve two
    slots for PAD and UNK. ``max_size`` counts the reserved ids."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if max_size < 3:
        raise ValueError(f"max_size must be >= 3 (PAD, UNK, one token), got {max_size}")
    counts: Counter[str] = Counter()
    for example in corpus:
        counts.update(example.text.split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[: max_size - 2]])


def tokenize(text: str, vocab: Vocabulary, max_length: int) -> list[int]:
    """Whitespace-split token ids, UNK for unseen tokens, truncated to
    ``max_length``. Empty text yields an empty sequence."""
    if max_length < 1:
        raise ValueError(f"max_length must be >= 1, got {max_length}")
    return [vocab.id_of(tok) for tok in text.split()[:max_length]]


def batches(
    corpus: Sequence[LabeledExample],
    vocab: Vocabulary,
    batch_size: int,
    max_length: int,
    shuffle_seed: int | None = None,
) -> Iterator[TokenizedBatch]:
    """Yield every example exactly once, padded to the longest sequence in
    each batch. ``shuffle_seed=None`` preserves file order; the final short
    batch is emitted so evaluation denominators match the corpus size.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(corpus))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(corpus))

    for start in range(0, len(corpus), batch_size):
        chunk = [corpus[i] for i in order[start : start + batch_size]]
        sequences = [tokenize(e.text, vocab, max_length) for e in chunk]
        width = max((len(s) for s in sequences), default=0)
        token_ids = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(chunk), width), dtype=np.int64)
        for row, seq in enumerate(sequences):
            token_ids[row, : len(seq)] = seq
            mask[row, : len(seq)] = 1
        labels = None
        if all(e.label is not None for e in chunk):
            labels = np.array([e.label for e in chunk], dtype=np.int64)
        yield TokenizedBatch(
            ids=[e.id for e in chunk], token_ids=token_ids, mask=mask, labels=labels
        )
