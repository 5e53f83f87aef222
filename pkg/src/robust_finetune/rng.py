"""Deterministic seed derivation.

Every source of randomness in a run (parameter init, batch shuffling,
dropout, gradient masks, bootstrap resampling) draws its seed from one
master seed through `derive_seed`, so a single config key reproduces the
whole run.
"""

from __future__ import annotations

import hashlib

_SEED_BITS = 63


def derive_seed(master: int, *labels: object) -> int:
    """Derive a stable per-purpose seed from a master seed and labels.

    Labels are typically strings ("dropout", "shuffle") plus indices
    (step, epoch). The same (master, labels) always yields the same seed.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode("utf-8"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") % (1 << _SEED_BITS)
