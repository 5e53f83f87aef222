"""Classification losses: cross-entropy, the DCE acceleration term, and
their In-trust combination, with analytic gradients through softmax.

The In-trust loss mixes trust between the (possibly noisy) label vector q
and the model's own belief p:

    dce(p, q)      = -sum_i p_i * log(delta * p_i + (1 - delta) * q_i)
    in_trust(p, q) = alpha * ce(p, q) + beta * dce(p, q)

All functions operate on probability vectors in float64. The log argument
is clamped from below by ``clamp_eps`` so that delta = 0 with one-hot q
stays finite; the clamp is inactive for any softmax output at reasonable
logit scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_KINDS = ("ce", "in_trust")


@dataclass(frozen=True)
class InTrustParams:
    """Hyperparameters of the In-trust loss.

    alpha weighs the cross-entropy term, beta the DCE term, delta mixes
    model belief into the log argument. Defaults are config-exposed and
    recorded in run metadata.
    """

    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 0.5
    clamp_eps: float = 1e-12

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be >= 0, got ({self.alpha}, {self.beta})")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.clamp_eps <= 0:
            raise ValueError(f"clamp_eps must be > 0, got {self.clamp_eps}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} outside [0, {num_classes})")
    q = np.zeros(num_classes, dtype=np.float64)
    q[label] = 1.0
    return q


def _check_lengths(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"p and q have mismatched shapes {p.shape} vs {q.shape}")
    return p, q


def cross_entropy(p: np.ndarray, q: np.ndarray, clamp_eps: float = 1e-12) -> float:
    """-sum_i q_i log(max(p_i, clamp_eps)) for a one-hot q."""
    p, q = _check_lengths(p, q)
    return float(-(q * np.log(np.maximum(p, clamp_eps))).sum())


def dce(p: np.ndarray, q: np.ndarray, delta: float, clamp_eps: float = 1e-12) -> float:
    """-sum_i p_i log(max(delta p_i + (1-delta) q_i, clamp_eps)).

    delta = 1 collapses to the entropy of p; p = q one-hot gives 0.
    """
    p, q = _check_lengths(p, q)
    mix = np.maximum(delta * p + (1.0 - delta) * q, clamp_eps)
    return float(-(p * np.log(mix)).sum())


def in_trust(p: np.ndarray, q: np.ndarray, params: InTrustParams | None = None) -> float:
    """alpha * cross_entropy + beta * dce."""
    params = params or InTrustParams()
    return params.alpha * cross_entropy(p, q, params.clamp_eps) + params.beta * dce(
        p, q, params.delta, params.clamp_eps
    )


def loss_value(kind: str, p: np.ndarray, q: np.ndarray, params: InTrustParams | None = None) -> float:
    params = params or InTrustParams()
    if kind == "ce":
        return cross_entropy(p, q, params.clamp_eps)
    if kind == "in_trust":
        return in_trust(p, q, params)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _dce_grad_probs(p: np.ndarray, q: np.ndarray, delta: float, clamp_eps: float) -> np.ndarray:
    """d(dce)/dp. The clamp freezes the mixture where it is active, so the
    inner derivative carries an indicator for the unclamped region."""
    mix = delta * p + (1.0 - delta) * q
    clamped = np.maximum(mix, clamp_eps)
    active = (mix > clamp_eps).astype(np.float64)
    return -np.log(clamped) - active * delta * p / clamped


def _grad_logits_from_grad_probs(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull a d(loss)/dp back through softmax: dz = p * (g - <p, g>)."""
    inner = (p * grad_p).sum(axis=-1, keepdims=True)
    return p * (grad_p - inner)


def loss_grad_logits(
    kind: str, logits: np.ndarray, q: np.ndarray, params: InTrustParams | None = None
) -> np.ndarray:
    """Analytic d(loss)/d(logits) for a single example.

    For cross-entropy this is the softmax identity p - q; for In-trust the
    DCE part is pulled back through the softmax Jacobian.
    """
    params = params or InTrustParams()
    logits, q = _check_lengths(logits, q)
    p = softmax(logits)
    if kind == "ce":
        return p - q
    if kind == "in_trust":
        grad = params.alpha * (p - q)
        if params.beta != 0.0:
            grad_p = _dce_grad_probs(p, q, params.delta, params.clamp_eps)
            grad = grad + params.beta * _grad_logits_from_grad_probs(p, grad_p)
        return grad
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def batch_loss_and_grad(
    kind: str,
    logits: np.ndarray,
    labels: np.ndarray,
    params: InTrustParams | None = None,
) -> tuple[float, np.ndarray]:
    """Mean loss over a batch plus d(mean loss)/d(logits), shape [B, C].

    ``labels`` are integer class indices. Batch reduction is the mean.
    """
    params = params or InTrustParams()
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError(f"expected logits [B, C], got shape {logits.shape}")
    labels = np.asarray(labels)
    num, num_classes = logits.shape
    if labels.shape != (num,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {num}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")

    q = np.zeros_like(logits)
    q[np.arange(num), labels] = 1.0
    p = softmax(logits)

    eps = params.clamp_eps
    ce_terms = -(q * np.log(np.maximum(p, eps))).sum(axis=-1)
    if kind == "ce":
        per_example = ce_terms
        grad = p - q
    elif kind == "in_trust":
        mix = np.maximum(params.delta * p + (1.0 - params.delta) * q, eps)
        dce_terms = -(p * np.log(mix)).sum(axis=-1)
        per_example = params.alpha * ce_terms + params.beta * dce_terms
        grad = params.alpha * (p - q)
        if params.beta != 0.0:
            grad_p = _dce_grad_probs(p, q, params.delta, eps)
            grad = grad + params.beta * _grad_logits_from_grad_probs(p, grad_p)
    else:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")

    return float(per_example.mean()), grad / num
