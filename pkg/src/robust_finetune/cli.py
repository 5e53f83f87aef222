"""Command-line entry point.

Subcommands: ``train``, ``predict``, ``evaluate``, ``ensemble``, ``report``,
``defaults``. A training run writes its manifest (resolved config, seeds,
input digests, artifact paths) before the first step so the run is
reproducible from the manifest alone; rerunning with the same inputs
produces byte-identical artifacts, timestamps excepted (those live only in
the manifest).

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import (
    ConfigError,
    SEED_ENV_VAR,
    encoder_config_from,
    fgm_config_from,
    format_defaults,
    loss_params_from,
    mask_config_from,
    resolve_config,
    schedule_from,
    train_config_from,
)
from .corpus import LabelSet, Vocabulary, build_vocab, default_label_set, load_corpus
from .ensemble import (
    PredictionTable,
    majority_vote,
    read_prediction_table,
    write_prediction_table,
)
from .eval_report import accuracy, case_study, render_report
from .model import TextClassifier, predict_corpus
from .rng import derive_seed
from .trainer import Checkpoint, train, write_metrics

CHECKPOINT_NAME = "checkpoint.ckpt"
VOCAB_NAME = "vocab.tsv"
METRICS_NAME = "metrics.csv"
MANIFEST_NAME = "manifest.json"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.override or ())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_split = load_corpus(args.train_file)
    valid_split = load_corpus(args.valid_file)

    try:
        train_cfg = train_config_from(config)
        schedule = schedule_from(config)
        loss_params = loss_params_from(config)
        fgm_cfg = fgm_config_from(config) if config["fgm.enabled"] else None
        mask_cfg = mask_config_from(config) if config["childtune.enabled"] else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    vocab = build_vocab(train_split, max_size=config["model.vocab_size"])
    try:
        encoder_cfg = encoder_config_from(config, vocab_size=len(vocab))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    seeds = {
        "master": train_cfg.seed,
        "init": encoder_cfg.seed,
        "childtune": derive_seed(train_cfg.seed, "childtune"),
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest = {
        "command": "train",
        "package_version": __version__,
        "started_at": _utc_now(),
        "finished_at": None,
        "duration_seconds": None,
        "config": config,
        "seeds": seeds,
        "inputs": {
            "train_file": {"path": str(args.train_file), "sha256": _sha256(Path(args.train_file))},
            "valid_file": {"path": str(args.valid_file), "sha256": _sha256(Path(args.valid_file))},
            "config_file": (
                {"path": str(args.config), "sha256": _sha256(Path(args.config))}
                if args.config
                else None
            ),
        },
        "artifacts": {
            "checkpoint": str(out_dir / CHECKPOINT_NAME),
            "vocab": str(out_dir / VOCAB_NAME),
            "metrics": str(out_dir / METRICS_NAME),
            "manifest": str(manifest_path),
        },
        "result": None,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    started = time.monotonic()
    checkpoint = train(
        encoder_cfg, train_split, valid_split, vocab,
        train_cfg, schedule, loss_params, fgm_cfg, mask_cfg,
    )

    vocab.save(out_dir / VOCAB_NAME)
    checkpoint.save(out_dir / CHECKPOINT_NAME)
    write_metrics(out_dir / METRICS_NAME, checkpoint.metrics_history)

    best = checkpoint.metrics_history[checkpoint.best_epoch - 1]
    manifest["finished_at"] = _utc_now()
    manifest["duration_seconds"] = time.monotonic() - started
    manifest["result"] = {"best_epoch": checkpoint.best_epoch, "best_valid_acc": best.valid_acc}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    print(
        f"trained {train_cfg.epochs} epochs; best epoch {checkpoint.best_epoch} "
        f"(valid acc {best.valid_acc:.3f}); artifacts in {out_dir}"
    )
    return 0


def cmd_predict(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else Path(args.checkpoint).parent / VOCAB_NAME
    vocab = Vocabulary.load(vocab_path)
    if len(vocab) != checkpoint.encoder_config.vocab_size:
        raise ValueError(
            f"vocabulary size {len(vocab)} from {vocab_path} does not match the "
            f"checkpoint's embedding table ({checkpoint.encoder_config.vocab_size}); "
            "pass the vocab saved by the training run"
        )
    corpus = load_corpus(args.input)
    classifier = TextClassifier(checkpoint.encoder_config, checkpoint.params)
    rows = predict_corpus(
        classifier, corpus, vocab,
        batch_size=checkpoint.train_config.batch_size,
        max_length=checkpoint.train_config.max_length,
        with_probs=args.probs,
    )
    table = PredictionTable(rows)
    if args.out:
        write_prediction_table(args.out, table)
        print(f"wrote {len(table)} predictions to {args.out}")
    else:
        for row in table:
            sys.stdout.write(f"{row.id},{row.predicted}\n")
    return 0


def cmd_evaluate(args) -> int:
    preds = read_prediction_table(args.predictions)
    gold = load_corpus(args.gold)
    result = accuracy(preds, gold)
    print(f"accuracy {result.accuracy:.3f} (right {result.right} / all {result.total})")
    return 0


def cmd_ensemble(args) -> int:
    tables = [read_prediction_table(path) for path in args.inputs]
    voted = majority_vote(tables, tie_rule=args.tie_rule)
    write_prediction_table(args.out, voted)
    print(f"voted over {len(tables)} tables ({len(voted)} rows) -> {args.out}")
    return 0


def cmd_report(args) -> int:
    preds = read_prediction_table(args.predictions)
    gold = load_corpus(args.gold)
    result = accuracy(preds, gold)
    study = case_study(preds, gold, k=args.k)
    if args.labels:
        label_names = LabelSet.load(args.labels).names
    elif result.confusion.shape[0] == 14:
        label_names = default_label_set().names
    else:
        label_names = None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = render_report(result, study, "text", label_names)
    (out_dir / "report.txt").write_text(text)
    (out_dir / "case_study.csv").write_text(render_report(result, study, "csv", label_names))
    sys.stdout.write(text)
    return 0


def cmd_defaults(_args) -> int:
    sys.stdout.write(format_defaults())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-finetune",
        description=(
            "Training strategies for multi-class artificial-text detection: "
            "adversarial embedding perturbation, Bernoulli gradient masking, "
            "a noise-robust loss, and vote ensembling."
        ),
        epilog=f"The {SEED_ENV_VAR} environment variable supplies train.seed when unset.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_train = sub.add_parser("train", help="train a classifier and write run artifacts")
    p_train.add_argument("--config", help="key = value config file")
    p_train.add_argument(
        "--override", action="append", metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p_train.add_argument("--train-file", required=True, help="labeled training corpus CSV")
    p_train.add_argument("--valid-file", required=True, help="labeled validation corpus CSV")
    p_train.add_argument("--out-dir", required=True, help="directory for run artifacts")
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser("predict", help="predict classes for a corpus")
    p_predict.add_argument("--checkpoint", required=True)
    p_predict.add_argument("--input", required=True, help="corpus CSV (label column optional)")
    p_predict.add_argument("--vocab", help="vocab file (default: vocab.tsv beside the checkpoint)")
    p_predict.add_argument("--out", help="prediction CSV path (default: print id,class)")
    p_predict.add_argument("--probs", action="store_true", help="include per-class probabilities")
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate", help="accuracy of predictions against gold labels")
    p_eval.add_argument("predictions")
    p_eval.add_argument("gold")
    p_eval.set_defaults(func=cmd_evaluate)

    p_ens = sub.add_parser("ensemble", help="majority-vote several prediction tables")
    p_ens.add_argument("inputs", nargs="+", help="prediction CSVs")
    p_ens.add_argument("--out", required=True)
    p_ens.add_argument("--tie-rule", choices=("mean_prob", "lowest_index"), default="mean_prob")
    p_ens.set_defaults(func=cmd_ensemble)

    p_report = sub.add_parser("report", help="accuracy report plus worst-prediction case study")
    p_report.add_argument("predictions", help="prediction CSV with probability columns")
    p_report.add_argument("gold")
    p_report.add_argument("--k", type=int, default=100, help="case-study sample budget")
    p_report.add_argument("--out-dir", default=".")
    p_report.add_argument("--labels", help="class-name file, one name per line")
    p_report.set_defaults(func=cmd_report)

    p_defaults = sub.add_parser("defaults", help="print every config key with its default")
    p_defaults.set_defaults(func=cmd_defaults)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
