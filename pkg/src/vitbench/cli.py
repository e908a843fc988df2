"""Command-line harness.

Subcommands: ``train``, ``evaluate``, ``compare``, ``benchmark``,
``validate-manifest``, ``synth-data``. Global flags ``--config``, ``--seed``,
``--out``, ``--precision {32,64}`` work on every subcommand; ``train``
additionally accepts dotted overrides for any config key, e.g.
``--train.learning_rate 1e-3`` or ``--model.preset ViT-B/16``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(manifest/image problems, count mismatches), 3 runtime failure.

Every run writes wall-clock details to a separate ``run_metadata.txt`` so
that the report artifacts themselves are byte-identical across reruns with
the same seed.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import data, metrics, models, training
from .config import (_parse_resolution, build_model, build_policy,
                     load_experiment_config)
from .errors import ConfigError, ContractError, DataError, VitbenchError
from .tensor import Tensor, no_grad, set_default_dtype


class _UsageError(Exception):
    """Command line that cannot be parsed (maps to exit code 1)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; this harness reserves 2
    # for data errors, so raise instead and let main() map it to 1.
    def error(self, message):
        raise _UsageError(message)


def _set_precision(precision: str | None) -> None:
    if precision is None:
        precision = "64"
    set_default_dtype(np.float32 if precision == "32" else np.float64)


def _write_run_metadata(out_dir: Path, command: str, started: float,
                        extra: dict | None = None) -> None:
    """Timestamps and timings live here, segregated from the deterministic
    report files."""
    lines = [
        f"command: {command}",
        f"timestamp: {datetime.now(timezone.utc).isoformat()}",
        f"elapsed_seconds: {time.time() - started:.3f}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    (out_dir / "run_metadata.txt").write_text("\n".join(lines) + "\n",
                                              encoding="utf-8")


# -- train -----------------------------------------------------------------------


def cmd_train(args, overrides) -> int:
    started = time.time()
    config = load_experiment_config(args.config, overrides)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.output.dir = args.out
    if args.precision is not None:
        config.precision = args.precision
    # one run seed drives everything unless train.seed was set deliberately
    if "train.seed" not in config.explicit:
        config.train = replace(config.train, seed=config.seed)
    _set_precision(config.precision)

    if not config.dataset.manifest:
        raise ConfigError("dataset.manifest is required (set it in the config "
                          "file or with --dataset.manifest)")
    manifest = data.load_manifest(config.dataset.manifest)
    model = build_model(config, manifest.num_classes, seed=config.seed)
    policy = build_policy(config)
    resolution = config.dataset.resolution
    out_dir = Path(config.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    valid_split = "valid" if manifest.split_counts()["valid"] else "test"
    if valid_split != "valid":
        print("note: manifest has no valid records; validating on the test split")

    def train_batches(epoch):
        rng = np.random.default_rng([config.seed, 1000 + epoch])
        return data.batches(manifest, "train", config.train.batch_size,
                            resolution, policy=policy, rng=rng)

    def valid_batches():
        return data.batches(manifest, valid_split, config.train.batch_size,
                            resolution)

    log_path = out_dir / "train_log.csv"
    with open(log_path, "w", encoding="utf-8", newline="") as log:
        log.write("epoch,lr,train_loss,valid_loss,valid_accuracy\n")

        def on_epoch(row):
            log.write("%d,%r,%r,%r,%r\n" % (
                row["epoch"], float(row["lr"]), float(row["train_loss"]),
                float(row["valid_loss"]), float(row["valid_accuracy"])))
            log.flush()  # keep a partial log if a later epoch dies
            print(f"epoch {row['epoch']:>3}  lr {row['lr']:.6g}  "
                  f"train_loss {row['train_loss']:.6f}  "
                  f"valid_loss {row['valid_loss']:.6f}  "
                  f"valid_accuracy {row['valid_accuracy']:.4f}")

        training.fit(model, train_batches, valid_batches, config.train,
                     on_epoch=on_epoch)

    ckpt_dir = out_dir / "checkpoint"
    models.save_checkpoint(ckpt_dir, model, classes=manifest.classes)
    _write_run_metadata(out_dir, "train", started,
                        extra={"validated_on": valid_split})
    print(f"checkpoint: {ckpt_dir}")
    print(f"log: {log_path}")
    return 0


# -- evaluate / compare ----------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _evaluate_checkpoint(checkpoint, manifest, split: str, batch_size: int,
                         resolution=None):
    """Load a checkpoint and run augmentation-free inference over one split
    in manifest order. Returns (model, records, preds, labels, scores,
    report)."""
    model, classes = models.load_checkpoint(checkpoint)
    if classes is not None and list(classes) != list(manifest.classes):
        raise ConfigError(
            f"checkpoint classes {classes} do not match manifest classes "
            f"{manifest.classes}")
    if model.config.num_classes != manifest.num_classes:
        raise ConfigError(
            f"checkpoint has {model.config.num_classes} outputs but the "
            f"manifest declares {manifest.num_classes} classes")
    if resolution is not None and tuple(resolution) != tuple(model.config.image_size):
        h, w = model.config.image_size
        raise ConfigError(
            f"requested resolution {resolution[0]}x{resolution[1]} does not "
            f"match checkpoint resolution {h}x{w}")
    records = manifest.split_records(split)
    if not records:
        raise DataError(f"split {split!r} has no records")
    logit_blocks = []
    label_blocks = []
    with no_grad():
        for images, batch_labels in data.batches(
                manifest, split, batch_size, model.config.image_size):
            logit_blocks.append(model.forward(images).data)
            label_blocks.append(batch_labels)
    scores = _softmax(np.concatenate(logit_blocks).astype(np.float64))
    labels = np.concatenate(label_blocks)
    preds = scores.argmax(axis=1)
    report = metrics.evaluate_predictions(preds, labels, scores,
                                          manifest.classes,
                                          model_name=model.name)
    return model, records, preds, labels, scores, report


def _preds_csv(records, preds, labels, scores) -> str:
    k = scores.shape[1]
    lines = ["path,true,pred," + ",".join(f"score_{i}" for i in range(k))]
    for rec, pred, true, row in zip(records, preds, labels, scores):
        lines.append(f"{rec.path},{int(true)},{int(pred)},"
                     + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _row_header() -> str:
    return " | ".join(("model", "precision", "recall", "f1", "accuracy",
                       "mcc", "p_value", "fps"))


def cmd_evaluate(args, overrides) -> int:
    started = time.time()
    _set_precision(args.precision)
    manifest = data.load_manifest(args.manifest)
    resolution = _parse_resolution(args.resolution) if args.resolution else None
    model, records, preds, labels, scores, report = _evaluate_checkpoint(
        args.checkpoint, manifest, args.split, args.batch_size, resolution)

    out_dir = Path(args.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "preds.csv").write_text(_preds_csv(records, preds, labels, scores),
                                       encoding="utf-8")
    (out_dir / "report.txt").write_text(metrics.render_report(report),
                                        encoding="utf-8")
    (out_dir / "roc.csv").write_text(metrics.roc_csv(report.roc),
                                     encoding="utf-8")
    (out_dir / "confusion.csv").write_text(metrics.confusion_csv(report.cm),
                                           encoding="utf-8")
    _write_run_metadata(out_dir, "evaluate", started,
                        extra={"checkpoint": args.checkpoint,
                               "split": args.split,
                               "samples": len(labels)})
    print(_row_header())
    print(metrics.report_row(report))
    return 0


def cmd_compare(args, overrides) -> int:
    started = time.time()
    _set_precision(args.precision)
    if len(args.checkpoints) < 2:
        raise ConfigError("compare needs at least 2 checkpoints")
    manifest = data.load_manifest(args.manifest)
    seed = args.seed if args.seed is not None else 0

    entries = []
    for ckpt in args.checkpoints:
        try:
            _, _, preds, labels, _, report = _evaluate_checkpoint(
                ckpt, manifest, args.split, args.batch_size)
        except VitbenchError as exc:
            raise type(exc)(f"checkpoint {ckpt}: {exc}") from None
        entries.append((preds, labels, report))

    best = max(range(len(entries)), key=lambda i: entries[i][2].mcc)
    labels = entries[best][1]
    best_samples = np.asarray(metrics.bootstrap_mcc_samples(
        entries[best][0], labels, n_resamples=args.resamples, seed=seed,
        num_classes=manifest.num_classes))
    for i, (preds, _, report) in enumerate(entries):
        if i == best:
            report.p_value = None  # rendered as "-" in the best row
            continue
        samples = np.asarray(metrics.bootstrap_mcc_samples(
            preds, labels, n_resamples=args.resamples, seed=seed,
            num_classes=manifest.num_classes))
        report.p_value = metrics.paired_t_test(best_samples, samples).p

    lines = [_row_header()]
    lines.extend(metrics.report_row(report) for _, _, report in entries)
    best_report = entries[best][2]
    lines.append(f"best: {best_report.model_name} (mcc {best_report.mcc:.6f})")
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "comparison.txt").write_text(table, encoding="utf-8")
        _write_run_metadata(out_dir, "compare", started,
                            extra={"checkpoints": " ".join(args.checkpoints),
                                   "split": args.split,
                                   "resamples": args.resamples,
                                   "seed": seed})
    return 0


# -- benchmark / manifest / synthetic data -----------------------------------------


def cmd_benchmark(args, overrides) -> int:
    _set_precision(args.precision)
    model, _ = models.load_checkpoint(args.checkpoint)
    h, w = model.config.image_size
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    batch = Tensor(rng.random((args.batch_size, h, w, model.config.channels)))
    result = metrics.fps(model, batch, warmup=args.warmup, iters=args.iters)
    print(f"{model.name},{result.batch_size},{result.fps:.2f}")
    return 0


def cmd_validate_manifest(args, overrides) -> int:
    manifest = data.load_manifest(args.manifest)
    if args.expect in data.MANIFEST_COUNT_PRESETS:
        expected = data.MANIFEST_COUNT_PRESETS[args.expect]
    else:
        parts = args.expect.split(",")
        if len(parts) != 3:
            raise ConfigError(
                f"--expect must be a preset ({', '.join(data.MANIFEST_COUNT_PRESETS)}) "
                f"or train,valid,test counts; got {args.expect!r}")
        try:
            expected = tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"cannot parse counts {args.expect!r}") from None
    diffs = data.check_counts(manifest, expected)
    if not diffs:
        print("ok")
        return 0
    for diff in diffs:
        print(diff)
    return 2


def cmd_synth_data(args, overrides) -> int:
    if args.out is None:
        raise ConfigError("synth-data requires --out for the dataset directory")
    imbalance = None
    if args.imbalance:
        try:
            imbalance = [float(v) for v in args.imbalance.split(",")]
        except ValueError:
            raise ConfigError(
                f"cannot parse --imbalance {args.imbalance!r}") from None
    class_names = None
    if args.class_names:
        class_names = [n.strip() for n in args.class_names.split(",")]
    manifest_path = data.synthesize_toy_dataset(
        args.out, num_classes=args.classes, per_class=args.per_class,
        resolution=args.resolution,
        seed=args.seed if args.seed is not None else 0,
        imbalance=imbalance, class_names=class_names)
    print(f"manifest: {manifest_path}")
    return 0


# -- parser / entry point --------------------------------------------------------


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="experiment config file (INI sections)")
    common.add_argument("--seed", type=int, default=None, help="run seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--precision", choices=("32", "64"), default=None,
                        help="float precision (default 64)")

    parser = _Parser(prog="vitbench",
                     description="Train, evaluate, and compare from-scratch "
                                 "transformer image classifiers.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("train", parents=[common],
                       help="train a model from an experiment config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="run inference over a split and write report artifacts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=data.SPLITS)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--resolution", default=None,
                   help="expected input resolution; must match the checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common],
                       help="evaluate several checkpoints and test each "
                            "against the best by MCC")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=data.SPLITS)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--resamples", type=int, default=1000,
                   help="bootstrap resamples for the paired t-test")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("benchmark", parents=[common],
                       help="measure forward-pass frames per second")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("validate-manifest", parents=[common],
                       help="check split counts against expectations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--expect", required=True,
                   help="preset name (%s) or train,valid,test counts"
                        % ", ".join(data.MANIFEST_COUNT_PRESETS))
    p.set_defaults(func=cmd_validate_manifest)

    p = sub.add_parser("synth-data", parents=[common],
                       help="write a deterministic geometric-pattern dataset")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--per-class", type=int, default=16)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--imbalance", default=None,
                   help="per-class count multipliers, e.g. '10,1'")
    p.add_argument("--class-names", default=None)
    p.set_defaults(func=cmd_synth_data)

    return parser


def _collect_overrides(extras: list[str]) -> list[tuple[str, str]]:
    """Parse leftover ``--section.key value`` / ``--section.key=value`` flags."""
    overrides = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise _UsageError(f"unrecognized argument {token!r}")
        body = token[2:]
        if "=" in body:
            dotted, value = body.split("=", 1)
            i += 1
        else:
            dotted = body
            if i + 1 >= len(extras):
                raise _UsageError(f"flag --{dotted} expects a value")
            value = extras[i + 1]
            i += 2
        if "." not in dotted and dotted not in ("seed", "precision"):
            raise _UsageError(f"unrecognized flag --{dotted}")
        overrides.append((dotted, value))
    return overrides


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help(sys.stderr)
            return 1
        if extras and args.command != "train":
            raise _UsageError(f"unrecognized arguments: {' '.join(extras)}")
        overrides = _collect_overrides(extras)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args, overrides)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        # an input file the user named does not exist — a data problem,
        # not a runtime fault
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:  # runtime failures (IO mid-run, numerical, ...)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
