"""Fast-gradient adversarial perturbation of embedding parameters.

One adversarial step runs backward on the clean batch, pushes each targeted
tensor a distance epsilon along its normalized gradient, runs backward
again on the perturbed model, restores the originals exactly, and returns
the sum of clean and adversarial gradients. Both passes reuse the same
dropout seed so that epsilon = 0 degenerates to exactly twice the clean
gradient.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from fnmatch import fnmatchcase

import torch

from .corpus import TokenizedBatch
from .losses import InTrustParams

DEFAULT_TARGET = "embeddings.token"


@dataclass(frozen=True)
class FgmConfig:
    """epsilon is the L2 radius of the perturbation; target_names is an
    fnmatch pattern over parameter names; tensors whose gradient norm is at
    or below norm_floor are left untouched."""

    epsilon: float = 1.0
    target_names: str = DEFAULT_TARGET
    norm_floor: float = 1e-12

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.norm_floor < 0:
            raise ValueError(f"norm_floor must be >= 0, got {self.norm_floor}")


@dataclass
class PerturbationBackup:
    """Saved copies of every attacked tensor, keyed by parameter name."""

    tensors: "OrderedDict[str, torch.Tensor]"


@dataclass
class AdversarialStepResult:
    grads: "OrderedDict[str, torch.Tensor]"
    clean_loss: float
    adversarial_loss: float
    embedding_grad: torch.Tensor


def attack(
    params: "OrderedDict[str, torch.Tensor]",
    grads: "OrderedDict[str, torch.Tensor]",
    config: FgmConfig,
) -> PerturbationBackup:
    """Perturb each targeted tensor t to t + epsilon * g / ||g||_2 in place
    (tensor-wide L2 norm) and return a backup of the originals."""
    matched = [name for name in params if fnmatchcase(name, config.target_names)]
    if not matched:
        raise ValueError(
            f"FGM target pattern {config.target_names!r} matches no parameter; "
            f"available: {list(params)}"
        )
    backup: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for name in matched:
        if name not in grads:
            raise ValueError(f"no gradient supplied for targeted parameter {name!r}")
        tensor = params[name]
        backup[name] = tensor.detach().clone()
        grad = grads[name]
        norm = torch.linalg.vector_norm(grad)
        if config.epsilon != 0.0 and norm > config.norm_floor:
            tensor.data += config.epsilon * grad / norm
    return PerturbationBackup(tensors=backup)


def restore(params: "OrderedDict[str, torch.Tensor]", backup: PerturbationBackup) -> None:
    """Copy every backed-up tensor back, bit-identically."""
    for name, saved in backup.tensors.items():
        if name not in params:
            raise ValueError(f"backup refers to unknown parameter {name!r}")
        if params[name].shape != saved.shape:
            raise ValueError(
                f"backup shape {tuple(saved.shape)} does not match parameter "
                f"{name!r} shape {tuple(params[name].shape)}"
            )
        params[name].data.copy_(saved)


def adversarial_step(
    classifier,
    batch: TokenizedBatch,
    loss_kind: str = "ce",
    loss_params: InTrustParams | None = None,
    config: FgmConfig | None = None,
    train_mode: bool = True,
    dropout_seed: int = 0,
) -> AdversarialStepResult:
    """Clean backward, attack, adversarial backward, restore; gradients are
    the sum of both passes."""
    config = config or FgmConfig()
    clean = classifier.backward(batch, loss_kind, loss_params, train_mode, dropout_seed)
    backup = attack(classifier.params, clean.grads, config)
    try:
        adv = classifier.backward(batch, loss_kind, loss_params, train_mode, dropout_seed)
    finally:
        restore(classifier.params, backup)
    grads = OrderedDict(
        (name, clean.grads[name] + adv.grads[name]) for name in clean.grads
    )
    return AdversarialStepResult(
        grads=grads,
        clean_loss=clean.loss,
        adversarial_loss=adv.loss,
        embedding_grad=clean.embedding_grad,
    )
