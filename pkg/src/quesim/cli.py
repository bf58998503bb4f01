"""Command-line entry point: ``quesim <command> [options]``.

Exit status is 0 on success, 1 on usage or configuration errors and 2 on
data or numeric errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import container, pipeline
from .embeddings import EmbeddingStore, load_glove
from .errors import ConfigError, QuesimError
from .features import FeatureContext, load_stopwords
from .gru import load_model, save_model
from .secondary import accuracy, log_loss
from .text_prep import (
    DEFAULT_MAX_LEN, format_histogram, length_histogram, merge_histograms, read_pairs, read_token_file, tokenize,
)

log = logging.getLogger("quesim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def cmd_preprocess(args):
    store = pipeline.preprocess_files([Path(args.input)], args.glove, args.dim, args.max_len, args.out, args.jobs)
    print(f"vocabulary: {store.n_w} entries (incl. PAD, UNK), dim {store.dim}; wrote {args.out}")


def cmd_stats(args):
    d = Path(args.tokens)
    files = sorted(d.glob("*.tok")) if d.is_dir() else [d]
    if not files:
        raise UsageError(f"no .tok files in {d}")
    hists = [length_histogram(read_token_file(f)) for f in files]
    print(format_histogram(merge_histograms(hists)))


def cmd_augment(args):
    data = pipeline.write_augmented(args.input, args.out, args.seed)
    print(f"pairs: {len(data.pairs)}  positives: {data.n_positive}  negatives: {data.n_negative}  "
          f"ratio: {data.ratio:.4f}  shortfall: {data.shortfall}")


def cmd_train_gru(args):
    if args.config:
        parser = pipeline.read_ini(args.config)
    else:
        parser = pipeline.configparser.ConfigParser()
    model_cfg, train_cfg = pipeline.model_and_train_config(parser, max_len=args.max_len, name=args.model_name)
    overrides = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs), ("lr", args.lr),
                                   ("batch_size", args.batch_size)) if v is not None}
    if args.freeze_embeddings:
        overrides["freeze_embeddings"] = True
    train_cfg = replace(train_cfg, **overrides)
    pairs = read_pairs(args.data)
    if container.is_container(args.glove):
        store = EmbeddingStore.load(args.glove)
    else:
        vocab = {t for p in pairs for text in (p.q1_text, p.q2_text) for t in tokenize(text)}
        store = load_glove(args.glove, args.dim, vocab)
    model, history = pipeline.train_gru_model(pairs, store, model_cfg, train_cfg)
    save_model(args.out, model, {"train": asdict(train_cfg)})
    for rec in history:
        print(json.dumps(rec))


def cmd_featurize(args):
    model = load_model(args.model)
    stop = load_stopwords(args.stopwords) if args.stopwords else load_stopwords()
    ctx = FeatureContext(read_pairs(args.train_data), stop)
    rows = pipeline.featurize_file(args.data, model, ctx, args.out)
    print(f"wrote {len(rows)} feature rows to {args.out}")


def cmd_train_secondary(args):
    parser = pipeline.read_ini(args.config) if args.config else pipeline.configparser.ConfigParser()
    cfg = pipeline.secondary_config(parser)
    overrides = {"kind": args.kind}
    for key in ("seed", "n_trees", "n_rounds", "lam", "epochs", "dev_fraction"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.max_depth is not None:
        overrides["max_depth"] = pipeline._optional_int(args.max_depth)
    cfg = replace(cfg, **overrides)
    report = pipeline.train_secondary_file(args.features, cfg, args.out)
    print(json.dumps(report, sort_keys=True))


def cmd_evaluate(args):
    if args.submission:
        if not args.labels:
            raise UsageError("--submission requires --labels")
        sub = pipeline.read_submission(args.submission)
        labels = pipeline.read_submission(args.labels)
        if set(sub) != set(labels):
            raise UsageError("submission and label ids differ")
        keys = sorted(labels)
        probs = np.array([sub[k] for k in keys])
        y = np.array([labels[k] for k in keys])
        result = {"log_loss": log_loss(probs, y), "accuracy": accuracy(probs, y), "n": len(keys)}
    else:
        if not (args.features and args.model):
            raise UsageError("evaluate needs --features and --model (or --submission and --labels)")
        result = pipeline.evaluate_features(args.features, args.model)
    print(f"log_loss\t{result['log_loss']:.17g}")
    print(f"accuracy\t{result['accuracy']:.17g}")
    print(f"n\t{result['n']}")


def cmd_predict(args):
    n = pipeline.predict_file(args.features, args.model, args.out, args.test)
    print(f"wrote {n} predictions to {args.out}")


def cmd_run_all(args):
    cfg = pipeline.load_config(args.config, work_dir=args.work_dir)
    manifest = pipeline.run_all(cfg)
    recent = manifest.records[-len(pipeline.STAGES):]
    for rec in recent:
        status = "skipped" if rec["skipped"] else f"ran in {rec['wall_time']:.2f}s"
        print(f"{rec['stage']:<16} {status}")
    print(f"submission: {cfg.work_dir / 'submission.csv'}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quesim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("preprocess", help="tokenize a corpus CSV and build the embedding store")
    p.add_argument("--input", required=True, help="corpus CSV (train or test schema)")
    p.add_argument("--glove", required=True, help="GloVe text file")
    p.add_argument("--max-len", type=_positive_int, default=DEFAULT_MAX_LEN, help="sequence length (default 40)")
    p.add_argument("--dim", type=_positive_int, default=50, help="embedding dimension (default 50)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="tokenizer worker processes (default 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", help="print the token-length histogram of a preprocessed corpus")
    p.add_argument("--tokens", required=True, help="directory of .tok files (or one .tok file)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("augment", help="flip, self-pair and balance a labeled training CSV")
    p.add_argument("--input", required=True, help="labeled training CSV")
    p.add_argument("--seed", type=int, default=0, help="negative-sampling seed (default 0)")
    p.add_argument("--out", required=True, help="output CSV (adds a provenance column)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-gru", help="train the Siamese GRU")
    p.add_argument("--data", required=True, help="labeled (typically augmented) training CSV")
    p.add_argument("--glove", required=True, help="GloVe text file or a store.qsim from preprocess")
    p.add_argument("--config", help="config file with [model] and [train] sections")
    p.add_argument("--seed", type=int, help="training seed (overrides [train] seed)")
    p.add_argument("--dim", type=_positive_int, default=50, help="GloVe dimension (default 50)")
    p.add_argument("--max-len", type=_positive_int, help="sequence length (default: config or 40)")
    p.add_argument("--model-name", help="named variant such as GRU_1_1, GRU_3_1, GRU_3_2")
    p.add_argument("--epochs", type=int, help="override [train] epochs")
    p.add_argument("--lr", type=float, help="override [train] lr")
    p.add_argument("--batch-size", type=_positive_int, help="override [train] batch_size")
    p.add_argument("--freeze-embeddings", action="store_true", help="keep GloVe vectors fixed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train_gru)

    p = sub.add_parser("featurize", help="compute feature rows for a pairs CSV")
    p.add_argument("--data", required=True, help="pairs CSV to featurize (train or test schema)")
    p.add_argument("--model", required=True, help="GRU checkpoint")
    p.add_argument("--train-data", required=True, help="original training CSV (graph and IDF source)")
    p.add_argument("--stopwords", help="stopword file, one word per line (default: built-in list)")
    p.add_argument("--out", required=True, help="features CSV")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train-secondary", help="fit a secondary classifier on feature rows")
    p.add_argument("--features", required=True, help="labeled features CSV")
    p.add_argument("--kind", choices=("rf", "ada", "svm"), default="rf", help="classifier (default rf)")
    p.add_argument("--config", help="config file with a [secondary] section")
    p.add_argument("--seed", type=int, help="split and classifier seed")
    p.add_argument("--n-trees", type=_positive_int, help="forest size (default 100)")
    p.add_argument("--max-depth", help="tree depth limit, or 'none' (default 8)")
    p.add_argument("--n-rounds", type=_positive_int, help="AdaBoost rounds (default 100)")
    p.add_argument("--lam", type=float, help="SVM regularization (default 1e-4)")
    p.add_argument("--epochs", type=_positive_int, help="SVM epochs (default 20)")
    p.add_argument("--dev-fraction", type=float, help="held-out fraction for the dev report (default 0.1)")
    p.add_argument("--out", required=True, help="model path")
    p.set_defaults(func=cmd_train_secondary)

    p = sub.add_parser("evaluate", help="print log loss and accuracy")
    p.add_argument("--features", help="labeled features CSV")
    p.add_argument("--model", help="secondary model")
    p.add_argument("--submission", help="submission CSV to score instead")
    p.add_argument("--labels", help="CSV test_id,is_duplicate with true labels")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write a test_id,is_duplicate submission")
    p.add_argument("--features", required=True, help="features CSV for the test pairs")
    p.add_argument("--model", required=True, help="secondary model")
    p.add_argument("--test", help="test CSV; checks that row counts match")
    p.add_argument("--out", required=True, help="submission CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("run-all", help="run every stage, skipping those whose inputs are unchanged")
    p.add_argument("--config", required=True, help="pipeline config file")
    p.add_argument("--work-dir", help="override [paths] work_dir")
    p.set_defaults(func=cmd_run_all)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "out", None):
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"quesim: error: {exc}", file=sys.stderr)
        return 1
    except QuesimError as exc:
        print(f"quesim: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, IndexError, ValueError) as exc:
        print(f"quesim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
