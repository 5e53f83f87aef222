"""Training strategies for multi-class artificial-text detection.

The package bundles a small transformer-encoder classifier with the
strategies used to harden its fine-tuning: adversarial perturbation of the
embedding table, Bernoulli gradient masking, a noise-robust loss, and
majority-vote ensembling, plus the corpus/evaluation plumbing and a CLI to
run reproducible experiments.
"""

__version__ = "0.1.0"

from .childtune import GradientMask, MaskConfig, apply_mask, sample_mask
from .corpus import (
    CorpusSchema,
    LabeledExample,
    LabelSet,
    TokenizedBatch,
    Vocabulary,
    batches,
    build_vocab,
    default_label_set,
    load_corpus,
    save_corpus,
    tokenize,
)
from .ensemble import (
    PredictionRow,
    PredictionTable,
    bootstrap_split,
    majority_vote,
    read_prediction_table,
    write_prediction_table,
)
from .eval_report import (
    CaseStudy,
    EvalResult,
    accuracy,
    case_study,
    render_method_comparison,
    render_report,
)
from .fgm import FgmConfig, PerturbationBackup, adversarial_step, attack, restore
from .losses import (
    InTrustParams,
    cross_entropy,
    dce,
    in_trust,
    loss_grad_logits,
    softmax,
)
from .model import (
    EncoderConfig,
    ForwardResult,
    TextClassifier,
    init_params,
    load_checkpoint,
    predict_corpus,
    save_checkpoint,
)
from .rng import derive_seed
from .trainer import (
    Checkpoint,
    OptimizerState,
    ScheduleConfig,
    TrainConfig,
    TrainingDivergedError,
    adamw_step,
    clip_gradients,
    evaluate_accuracy,
    lr_at,
    train,
    write_metrics,
)

__all__ = [
    "__version__",
    "GradientMask", "MaskConfig", "apply_mask", "sample_mask",
    "CorpusSchema", "LabeledExample", "LabelSet", "TokenizedBatch", "Vocabulary",
    "batches", "build_vocab", "default_label_set", "load_corpus", "save_corpus", "tokenize",
    "PredictionRow", "PredictionTable", "bootstrap_split", "majority_vote",
    "read_prediction_table", "write_prediction_table",
    "CaseStudy", "EvalResult", "accuracy", "case_study",
    "render_method_comparison", "render_report",
    "FgmConfig", "PerturbationBackup", "adversarial_step", "attack", "restore",
    "InTrustParams", "cross_entropy", "dce", "in_trust", "loss_grad_logits", "softmax",
    "EncoderConfig", "ForwardResult", "TextClassifier", "init_params",
    "load_checkpoint", "predict_corpus", "save_checkpoint",
    "derive_seed",
    "Checkpoint", "OptimizerState", "ScheduleConfig", "TrainConfig",
    "TrainingDivergedError", "adamw_step", "clip_gradients", "evaluate_accuracy",
    "lr_at", "train", "write_metrics",
]
