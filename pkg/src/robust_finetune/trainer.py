"""Training loop: AdamW with decoupled weight decay, warm-up plus linear
decay, global-norm gradient clipping, and strategy dispatch.

Per step: batch -> backward (adversarial two-pass when FGM is on) ->
Bernoulli gradient mask (when child-tuning is on) -> global-norm clip ->
AdamW update at the scheduled learning rate. Validation accuracy is
measured after each epoch and the checkpoint keeps the best-validation
parameters (ties broken by the earlier epoch).

All randomness derives from ``TrainConfig.seed``: shuffling per epoch,
dropout per step, masks per step. Two runs with the same seeds on the same
machine produce bit-identical metrics histories.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .childtune import MaskConfig, apply_mask, sample_mask
from .corpus import LabeledExample, Vocabulary, batches
from .fgm import FgmConfig, adversarial_step
from .losses import LOSS_KINDS, InTrustParams
from .model import EncoderConfig, TextClassifier, load_checkpoint, save_checkpoint
from .rng import derive_seed


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite; the message names the step."""


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear 0 -> peak over [0, warmup_steps], then linear peak -> 0 over
    [warmup_steps, total_steps]. total_steps = 0 means "derive from the run
    length" at training time."""

    peak_lr: float = 1e-5
    warmup_steps: int = 100
    total_steps: int = 0

    def __post_init__(self) -> None:
        if self.peak_lr <= 0:
            raise ValueError(f"peak_lr must be > 0, got {self.peak_lr}")
        if self.warmup_steps < 0 or self.total_steps < 0:
            raise ValueError("warmup_steps and total_steps must be >= 0")
        if self.total_steps and self.warmup_steps > self.total_steps:
            raise ValueError(
                f"warmup_steps {self.warmup_steps} exceeds total_steps {self.total_steps}"
            )


def lr_at(step: int, schedule: ScheduleConfig) -> float:
    if schedule.total_steps <= 0:
        raise ValueError("schedule.total_steps must be resolved before lr_at")
    if step < 0 or step > schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    decay_span = schedule.total_steps - schedule.warmup_steps
    if decay_span == 0:
        return 0.0
    return schedule.peak_lr * (schedule.total_steps - step) / decay_span


def clip_gradients(
    grads: "OrderedDict[str, torch.Tensor]", threshold: float
) -> "OrderedDict[str, torch.Tensor]":
    """Scale all gradients by threshold/norm when the global L2 norm over
    every tensor exceeds the threshold."""
    if threshold <= 0:
        raise ValueError(f"clip threshold must be > 0, got {threshold}")
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if total <= threshold:
        return grads
    scale = threshold / total
    return OrderedDict((name, g * scale) for name, g in grads.items())


@dataclass
class OptimizerState:
    """Per-tensor first/second moments plus the shared step counter."""

    m: "OrderedDict[str, torch.Tensor]"
    v: "OrderedDict[str, torch.Tensor]"
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params: "OrderedDict[str, torch.Tensor]", **hyper) -> "OptimizerState":
        zeros = lambda: OrderedDict(
            (name, torch.zeros_like(t.detach())) for name, t in params.items()
        )
        return cls(m=zeros(), v=zeros(), **hyper)


def adamw_step(
    params: "OrderedDict[str, torch.Tensor]",
    grads: "OrderedDict[str, torch.Tensor]",
    opt: OptimizerState,
    lr: float,
) -> None:
    """Bias-corrected Adam with decoupled weight decay:
    w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * w."""
    opt.step += 1
    bias1 = 1.0 - opt.beta1 ** opt.step
    bias2 = 1.0 - opt.beta2 ** opt.step
    for name, param in params.items():
        if name not in grads:
            raise ValueError(f"no gradient for parameter {name!r}")
        grad = grads[name]
        if not torch.isfinite(grad).all():
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        m, v = opt.m[name], opt.v[name]
        m.mul_(opt.beta1).add_(grad, alpha=1.0 - opt.beta1)
        v.mul_(opt.beta2).addcmul_(grad, grad, value=1.0 - opt.beta2)
        update = lr * (m / bias1) / ((v / bias2).sqrt() + opt.eps)
        if opt.weight_decay != 0.0:
            update = update + lr * opt.weight_decay * param.data
        param.data.sub_(update)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    clip_threshold: float = 1.0
    seed: int = 42
    max_length: int = 280
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    loss_kind: str = "ce"
    use_fgm: bool = False
    use_childtune: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_threshold <= 0:
            raise ValueError(f"clip_threshold must be > 0, got {self.clip_threshold}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    valid_acc: float


@dataclass
class Checkpoint:
    """Best-validation parameters plus everything needed to reproduce
    predictions: encoder and train configs, metrics history, best epoch."""

    params: "OrderedDict[str, torch.Tensor]"
    encoder_config: EncoderConfig
    train_config: TrainConfig
    metrics_history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0

    def save(self, path) -> None:
        extra = {
            "train_config": asdict(self.train_config),
            "metrics_history": [asdict(m) for m in self.metrics_history],
            "best_epoch": self.best_epoch,
        }
        save_checkpoint(path, self.params, self.encoder_config, extra)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params, encoder_config, extra = load_checkpoint(path)
        return cls(
            params=params,
            encoder_config=encoder_config,
            train_config=TrainConfig(**extra["train_config"]),
            metrics_history=[EpochMetrics(**m) for m in extra["metrics_history"]],
            best_epoch=extra["best_epoch"],
        )


def evaluate_accuracy(
    classifier: TextClassifier,
    examples: Sequence[LabeledExample],
    vocab: Vocabulary,
    batch_size: int,
    max_length: int,
) -> float:
    """Fraction of correct argmax predictions over a labeled split."""
    correct = 0
    total = 0
    for batch in batches(examples, vocab, batch_size, max_length, shuffle_seed=None):
        if batch.labels is None:
            raise ValueError("evaluation split must be fully labeled")
        predicted = np.argmax(classifier.forward(batch).probabilities, axis=1)
        correct += int((predicted == batch.labels).sum())
        total += batch.size
    return correct / total


def _check_split(name: str, examples: Sequence[LabeledExample], num_classes: int) -> None:
    if not examples:
        raise ValueError(f"{name} split is empty")
    for e in examples:
        if e.label is None:
            raise ValueError(f"{name} split contains unlabeled example {e.id!r}")
        if not 0 <= e.label < num_classes:
            raise ValueError(
                f"{name} split example {e.id!r} has label {e.label} outside [0, {num_classes})"
            )


def train(
    encoder_config: EncoderConfig,
    train_split: Sequence[LabeledExample],
    valid_split: Sequence[LabeledExample],
    vocab: Vocabulary,
    train_config: TrainConfig | None = None,
    schedule: ScheduleConfig | None = None,
    loss_params: InTrustParams | None = None,
    fgm_config: FgmConfig | None = None,
    mask_config: MaskConfig | None = None,
) -> Checkpoint:
    cfg = train_config or TrainConfig()
    schedule = schedule or ScheduleConfig()
    loss_params = loss_params or InTrustParams()
    _check_split("train", train_split, encoder_config.num_classes)
    _check_split("valid", valid_split, encoder_config.num_classes)
    overlap = {e.id for e in train_split} & {e.id for e in valid_split}
    if overlap:
        raise ValueError(f"train and valid splits overlap on ids {sorted(overlap)[:5]}")

    steps_per_epoch = math.ceil(len(train_split) / cfg.batch_size)
    needed_steps = cfg.epochs * steps_per_epoch
    if schedule.total_steps == 0:
        schedule = ScheduleConfig(
            peak_lr=schedule.peak_lr,
            warmup_steps=min(schedule.warmup_steps, needed_steps),
            total_steps=needed_steps,
        )
    elif schedule.total_steps < needed_steps:
        raise ValueError(
            f"schedule.total_steps {schedule.total_steps} < run length {needed_steps}"
        )

    if cfg.use_fgm:
        fgm_config = fgm_config or FgmConfig()
    if cfg.use_childtune and mask_config is None:
        mask_config = MaskConfig(rng_seed=derive_seed(cfg.seed, "childtune"))

    classifier = TextClassifier(encoder_config)
    opt = OptimizerState.for_params(
        classifier.params,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )

    history: list[EpochMetrics] = []
    best_epoch = 0
    best_acc = -1.0
    best_params: "OrderedDict[str, torch.Tensor]" = classifier.params
    global_step = 0

    for epoch in range(1, cfg.epochs + 1):
        epoch_losses: list[float] = []
        shuffle_seed = derive_seed(cfg.seed, "shuffle", epoch)
        for batch in batches(train_split, vocab, cfg.batch_size, cfg.max_length, shuffle_seed):
            dropout_seed = derive_seed(cfg.seed, "dropout", global_step)
            if cfg.use_fgm:
                result = adversarial_step(
                    classifier, batch, cfg.loss_kind, loss_params, fgm_config,
                    train_mode=True, dropout_seed=dropout_seed,
                )
                loss, grads = result.clean_loss, result.grads
            else:
                backward = classifier.backward(
                    batch, cfg.loss_kind, loss_params,
                    train_mode=True, dropout_seed=dropout_seed,
                )
                loss, grads = backward.loss, backward.grads
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at step {global_step} (epoch {epoch})"
                )
            if cfg.use_childtune:
                shapes = OrderedDict((n, tuple(g.shape)) for n, g in grads.items())
                grads = apply_mask(grads, sample_mask(shapes, mask_config, global_step))
            grads = clip_gradients(grads, cfg.clip_threshold)
            adamw_step(classifier.params, grads, opt, lr_at(global_step, schedule))
            global_step += 1
            epoch_losses.append(loss)

        valid_acc = evaluate_accuracy(
            classifier, valid_split, vocab, cfg.batch_size, cfg.max_length
        )
        history.append(
            EpochMetrics(epoch=epoch, train_loss=float(np.mean(epoch_losses)), valid_acc=valid_acc)
        )
        if valid_acc > best_acc:
            best_acc = valid_acc
            best_epoch = epoch
            best_params = OrderedDict(
                (name, t.detach().clone().requires_grad_(True))
                for name, t in classifier.params.items()
            )

    return Checkpoint(
        params=best_params,
        encoder_config=encoder_config,
        train_config=cfg,
        metrics_history=history,
        best_epoch=best_epoch,
    )


def write_metrics(path, history: Sequence[EpochMetrics]) -> None:
    """One row per epoch: ``epoch,train_loss,valid_acc``. Floats are written
    in full precision so reruns are byte-comparable."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_acc"])
        for m in history:
            writer.writerow([m.epoch, repr(m.train_loss), repr(m.valid_acc)])
