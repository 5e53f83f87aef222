"""Task-free child-tuning: per-step Bernoulli gradient masks.

Each optimizer step draws a fresh 0/1 mask per targeted gradient tensor and
multiplies elementwise before the update, so only a random child subset of
the parameters moves. Masked gradients are NOT rescaled by 1/p_f; the
update is the literal masked gradient.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Mapping

import torch

from .rng import derive_seed


@dataclass(frozen=True)
class MaskConfig:
    """p_f is the Bernoulli keep probability; target_names is an fnmatch
    pattern over parameter names (default: every parameter)."""

    p_f: float = 0.3
    rng_seed: int = 0
    target_names: str = "*"

    def __post_init__(self) -> None:
        if not 0.0 < self.p_f <= 1.0:
            raise ValueError(f"p_f must be in (0, 1], got {self.p_f}")


@dataclass
class GradientMask:
    """0/1 tensors keyed by parameter name, shapes matching the gradients."""

    tensors: "OrderedDict[str, torch.Tensor]"


def sample_mask(
    shapes: Mapping[str, tuple[int, ...]], config: MaskConfig, step: int
) -> GradientMask:
    """i.i.d. Bernoulli(p_f) entries, deterministic given (rng_seed, step);
    a new step yields a fresh, independent mask."""
    gen = torch.Generator().manual_seed(derive_seed(config.rng_seed, "mask", step))
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for name, shape in shapes.items():
        if not fnmatchcase(name, config.target_names):
            continue
        tensors[name] = (torch.rand(tuple(shape), generator=gen) < config.p_f).to(
            torch.float32
        )
    return GradientMask(tensors=tensors)


def apply_mask(
    grads: "OrderedDict[str, torch.Tensor]", mask: GradientMask
) -> "OrderedDict[str, torch.Tensor]":
    """Elementwise product on targeted gradients; untargeted gradients pass
    through untouched."""
    masked: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for name, grad in grads.items():
        m = mask.tensors.get(name)
        if m is None:
            masked[name] = grad
            continue
        if tuple(m.shape) != tuple(grad.shape):
            raise ValueError(
                f"mask shape {tuple(m.shape)} does not match gradient "
                f"{name!r} shape {tuple(grad.shape)}"
            )
        masked[name] = grad * m.to(grad.dtype)
    return masked
