"""Synthetic class-conditional token corpora for desk-scale experiments.

Each class draws most tokens from its own token pool and the rest from a
shared pool, so the task is separable but not trivial at the single-token
level. Long documents can be mixed in to exercise truncation.
"""

from __future__ import annotations

import numpy as np

from robust_finetune.corpus import LabeledExample


def make_toy_corpus(
    n_per_class: int,
    num_classes: int = 14,
    seed: int = 0,
    id_prefix: str = "ex",
    class_tokens: int = 20,
    common_tokens: int = 40,
    min_len: int = 25,
    max_len: int = 45,
    class_token_prob: float = 0.65,
    n_long_docs: int = 0,
    long_doc_len: int = 300,
) -> list[LabeledExample]:
    rng = np.random.default_rng(seed)

    def sample_text(label: int, length: int) -> str:
        tokens = []
        for _ in range(length):
            if rng.random() < class_token_prob:
                tokens.append(f"c{label:02d}t{rng.integers(class_tokens)}")
            else:
                tokens.append(f"shared{rng.integers(common_tokens)}")
        return " ".join(tokens)

    examples = []
    index = 0
    for label in range(num_classes):
        for _ in range(n_per_class):
            length = int(rng.integers(min_len, max_len + 1))
            examples.append(LabeledExample(f"{id_prefix}{index}", sample_text(label, length), label))
            index += 1
    # Lengthen a few existing documents past the truncation limit instead of
    # appending, so corpus sizes stay exact.
    for i in rng.choice(len(examples), size=min(n_long_docs, len(examples)), replace=False):
        doc = examples[i]
        examples[i] = LabeledExample(doc.id, sample_text(doc.label, long_doc_len), doc.label)
    order = rng.permutation(len(examples))
    return [examples[i] for i in order]


def with_label_noise(
    examples: list[LabeledExample], noise_rate: float, num_classes: int, seed: int
) -> list[LabeledExample]:
    """Symmetric label noise: each label flips to a uniformly random other
    class with probability noise_rate."""
    rng = np.random.default_rng(seed)
    noisy = []
    for e in examples:
        label = e.label
        if rng.random() < noise_rate:
            label = (label + int(rng.integers(1, num_classes))) % num_classes
        noisy.append(LabeledExample(e.id, e.text, label))
    return noisy
