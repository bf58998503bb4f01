"""End-to-end orchestration: config, stage functions and the digest manifest.

Stages run in a fixed order::

    preprocess -> augment -> train-gru -> featurize -> train-secondary -> predict

Each stage declares its input files and parameters; a stage is skipped when
its outputs exist and the recorded input digests still match.  Once a stage
runs, every later stage runs too.  Augmented pairs only ever reach
train-gru.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import augment as aug
from .embeddings import EmbeddingStore, load_glove
from .errors import ConfigError, DataError, QuesimError, StageError, StaleDigestError
from .features import FeatureContext, featurize, load_stopwords, read_features, rows_to_arrays, write_features
from .gru import ModelConfig, SiameseModel, TrainConfig, load_model, save_model, train
from .secondary import accuracy, fit_classifier, load_classifier, log_loss, save_classifier
from .text_prep import (
    QuestionPair, encode, read_pairs, tokenize_many, write_id_cache, write_pairs, write_token_file,
)

log = logging.getLogger(__name__)

STAGES = ("preprocess", "augment", "train-gru", "featurize", "train-secondary", "predict")


# -- configuration ----------------------------------------------------------

@dataclass
class SecondaryConfig:
    kind: str = "rf"
    seed: int = 0
    dev_fraction: float = 0.1
    n_trees: int = 100
    max_depth: int | None = 8
    features_per_split: int = 2
    n_rounds: int = 100
    lam: float = 1e-4
    epochs: int = 20

    def __post_init__(self):
        if self.kind not in ("rf", "ada", "svm"):
            raise ConfigError(f"secondary kind must be rf, ada or svm, got {self.kind!r}")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ConfigError("secondary dev_fraction must be in [0, 1)")

    def classifier_params(self) -> dict:
        if self.kind == "rf":
            return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                    "features_per_split": self.features_per_split, "seed": self.seed}
        if self.kind == "ada":
            return {"n_rounds": self.n_rounds}
        return {"lam": self.lam, "epochs": self.epochs, "seed": self.seed}


@dataclass
class PipelineConfig:
    train_path: Path
    test_path: Path
    glove_path: Path
    work_dir: Path
    embedding_dim: int = 50
    jobs: int = 1
    augment_seed: int = 0
    stopwords_path: Path | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    secondary: SecondaryConfig = field(default_factory=SecondaryConfig)

    def check_paths(self) -> None:
        for name in ("train_path", "test_path", "glove_path"):
            path = getattr(self, name)
            if not Path(path).is_file():
                raise ConfigError(f"{name.replace('_path', '')} file not found: {path}")


def _int_list(text):
    return [int(v) for v in text.replace(",", " ").split()]


def _optional_int(text):
    return None if text.strip().lower() in ("", "none", "unlimited") else int(text)


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _bool(text):
    return _BOOL[text.strip().lower()]


def _coerce(section, key, value, converter):
    try:
        return converter(value)
    except (ValueError, KeyError):
        raise ConfigError(f"[{section}] {key}: cannot parse {value!r}") from None


_MODEL_KEYS = {"hidden": _int_list, "head": _int_list, "keep_prob": float, "join": str}
_TRAIN_KEYS = {"batch_size": int, "epochs": int, "seed": int, "lr": float, "beta1": float,
               "beta2": float, "eps": float, "clip_norm": float, "dev_fraction": float,
               "freeze_embeddings": _bool}
_SECONDARY_KEYS = {"kind": str, "seed": int, "dev_fraction": float, "n_trees": int,
                   "max_depth": _optional_int, "features_per_split": int, "n_rounds": int,
                   "lam": float, "epochs": int}


def read_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def _parse_items(name, items, keys):
    out = {}
    for key, value in items.items():
        if key not in keys:
            raise ConfigError(f"unknown key [{name}] {key}")
        out[key] = _coerce(name, key, value, keys[key])
    return out


def _section(parser, name, keys):
    return _parse_items(name, dict(parser.items(name)) if parser.has_section(name) else {}, keys)


def model_and_train_config(parser, max_len: int | None = None, name: str | None = None):
    """ModelConfig and TrainConfig from the [model]/[train] sections.

    ``[model] name = GRU_3_2`` (optionally ``dropout = yes``) selects a named
    variant; explicit keys override it.
    """
    raw = dict(parser.items("model")) if parser.has_section("model") else {}
    name = name or raw.pop("name", None)
    dropout = _coerce("model", "dropout", raw.pop("dropout", "no"), _bool)
    if parser.has_section("preprocess") and parser.has_option("preprocess", "max_len") and max_len is None:
        max_len = _coerce("preprocess", "max_len", parser.get("preprocess", "max_len"), int)
    model_kw = _parse_items("model", raw, _MODEL_KEYS)
    if max_len is not None:
        model_kw["max_len"] = max_len
    model = ModelConfig.from_name(name, dropout, **model_kw) if name else ModelConfig(**model_kw)
    return model, TrainConfig(**_section(parser, "train", _TRAIN_KEYS))


def secondary_config(parser) -> SecondaryConfig:
    return SecondaryConfig(**_section(parser, "secondary", _SECONDARY_KEYS))


def load_config(path, work_dir=None) -> PipelineConfig:
    """Parse a ``key = value`` sectioned config.  Relative paths resolve
    against the config file's directory."""
    path = Path(path)
    parser = read_ini(path)
    base = path.resolve().parent

    def p(key, default=None):
        value = parser.get("paths", key, fallback=default)
        if value is None:
            raise ConfigError(f"[paths] {key} is required")
        return (base / value).resolve()

    pre = _section(parser, "preprocess", {"max_len": int, "embedding_dim": int, "jobs": int})
    model, train_cfg = model_and_train_config(parser, max_len=pre.get("max_len", 40))
    stop = parser.get("paths", "stopwords", fallback=None)
    return PipelineConfig(
        train_path=p("train"), test_path=p("test"), glove_path=p("glove"),
        work_dir=Path(work_dir).resolve() if work_dir else p("work_dir", "work"),
        embedding_dim=pre.get("embedding_dim", 50), jobs=pre.get("jobs", 1),
        augment_seed=_section(parser, "augment", {"seed": int}).get("seed", 0),
        stopwords_path=(base / stop).resolve() if stop else None,
        model=model, train=train_cfg, secondary=secondary_config(parser),
    )


# -- manifest ---------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_digest(params) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest()


class RunManifest:
    """Append-only stage log stored as JSON next to the stage outputs."""

    def __init__(self, path):
        self.path = Path(path)
        self.records: list[dict] = []
        if self.path.exists():
            self.records = json.loads(self.path.read_text(encoding="utf-8"))["records"]

    def last(self, stage):
        for rec in reversed(self.records):
            if rec["stage"] == stage:
                return rec
        return None

    def append(self, record: dict) -> None:
        self.records.append(record)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"records": self.records}, indent=1, sort_keys=True), encoding="utf-8")
        tmp.replace(self.path)


@dataclass
class Stage:
    name: str
    inputs: dict[str, Path]
    outputs: dict[str, Path]
    params: dict
    seed: int | None
    action: Callable[[], None]


def _relpath(path, root):
    try:
        return str(Path(path).relative_to(root))
    except ValueError:
        return str(path)


def run_stage(stage: Stage, manifest: RunManifest, force: bool, root: Path) -> bool:
    """Run or skip one stage; returns True if it ran."""
    inputs = {k: file_digest(v) for k, v in stage.inputs.items()}
    inputs["params"] = params_digest(stage.params)
    prev = manifest.last(stage.name)
    outputs_exist = all(p.exists() for p in stage.outputs.values())
    if not force and prev is not None and prev["inputs"] == inputs and outputs_exist:
        for key, path in stage.outputs.items():
            if file_digest(path) != prev["outputs"].get(key):
                raise StaleDigestError(
                    f"stage {stage.name!r}: output {_relpath(path, root)} changed since it was produced; "
                    "delete it to rebuild"
                )
        manifest.append({**prev, "skipped": True, "wall_time": 0.0})
        log.info("skip %s (inputs unchanged)", stage.name)
        return False
    for path in stage.outputs.values():
        path.parent.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        stage.action()
    except QuesimError as exc:
        raise StageError(stage.name, exc) from exc
    except (OSError, ValueError) as exc:
        raise StageError(stage.name, exc) from exc
    manifest.append({
        "stage": stage.name,
        "inputs": inputs,
        "input_paths": {k: _relpath(v, root) for k, v in stage.inputs.items()},
        "outputs": {k: file_digest(v) for k, v in stage.outputs.items()},
        "seed": stage.seed,
        "wall_time": round(time.perf_counter() - start, 3),
        "skipped": False,
    })
    log.info("ran %s", stage.name)
    return True


# -- stage bodies -----------------------------------------------------------

def preprocess_files(csv_paths: Sequence[Path], glove_path, dim: int, max_len: int, out_dir, jobs: int = 1):
    """Tokenize questions, build the GloVe-backed store and write the caches.

    For each input ``name.csv`` writes ``name.tok`` (tokens) and ``name.ids``
    (padded ids), two lines per pair (question1, question2).  The store's
    vocabulary covers tokens from every input file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tokenized = []
    vocab: set[str] = set()
    for path in csv_paths:
        pairs = read_pairs(path)
        texts = [t for p in pairs for t in (p.q1_text, p.q2_text)]
        toks = tokenize_many(texts, jobs)
        tokenized.append((Path(path).stem, toks))
        for seq in toks:
            vocab.update(seq)
    store = load_glove(glove_path, dim, vocab)
    store.save(out / "store.qsim")
    for stem, toks in tokenized:
        write_token_file(out / f"{stem}.tok", toks)
        ids = np.array([encode(t, store.vocab.word_to_id, max_len) for t in toks]).reshape(len(toks), max_len)
        write_id_cache(out / f"{stem}.ids", ids)
    return store


def write_augmented(in_csv, out_csv, seed: int) -> aug.AugmentedDataset:
    data = aug.augment_all(read_pairs(in_csv), seed)
    write_pairs(out_csv, data.pairs, data.provenance)
    return data


def train_gru_model(pairs: Sequence[QuestionPair], store: EmbeddingStore, model_cfg: ModelConfig,
                    train_cfg: TrainConfig):
    if not pairs:
        raise DataError("no training pairs")
    if any(p.label is None for p in pairs):
        raise DataError("train-gru needs labeled pairs")
    model = SiameseModel.initialize(model_cfg, store, seed=train_cfg.seed)
    ids1 = model.encode_texts([p.q1_text for p in pairs])
    ids2 = model.encode_texts([p.q2_text for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    return train(model, ids1, ids2, labels, train_cfg)


def featurize_file(data_csv, model, ctx: FeatureContext, out_csv):
    rows = featurize(read_pairs(data_csv), model, ctx)
    write_features(out_csv, rows)
    return rows


def split_indices(n: int, dev_fraction: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_dev = int(round(n * dev_fraction))
    if n_dev >= n:
        n_dev = 0
    return np.sort(perm[n_dev:]), np.sort(perm[:n_dev])


def train_secondary_file(features_csv, cfg: SecondaryConfig, out_path) -> dict:
    """Fit on a seeded train split of the feature rows and report dev metrics."""
    X, y = rows_to_arrays(read_features(features_csv))
    if y is None:
        raise DataError(f"{features_csv}: feature rows need labels for training")
    tr, dev = split_indices(len(y), cfg.dev_fraction, cfg.seed)
    model = fit_classifier(cfg.kind, X[tr], y[tr], cfg.classifier_params())
    report = {"kind": cfg.kind, "n_train": int(len(tr)), "n_dev": int(len(dev))}
    if len(dev):
        probs = model.predict_proba(X[dev])
        report.update(dev_log_loss=log_loss(probs, y[dev]), dev_accuracy=accuracy(probs, y[dev]))
    save_classifier(out_path, model, {"config": asdict(cfg), "report": report})
    return report


def evaluate_features(features_csv, model_path) -> dict:
    X, y = rows_to_arrays(read_features(features_csv))
    if y is None:
        raise DataError(f"{features_csv}: evaluation needs labeled feature rows")
    probs = load_classifier(model_path).predict_proba(X)
    return {"log_loss": log_loss(probs, y), "accuracy": accuracy(probs, y), "n": int(len(y))}


def write_submission(path, ids: Sequence[int], probs) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["test_id", "is_duplicate"])
        for i, p in zip(ids, probs):
            writer.writerow([i, f"{float(p):.17g}"])


def read_submission(path) -> dict[int, float]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {int(r["test_id"]): float(r["is_duplicate"]) for r in csv.DictReader(fh)}


def predict_file(features_csv, model_path, out_csv, test_csv=None) -> int:
    rows = read_features(features_csv)
    if test_csv is not None:
        n_test = len(read_pairs(test_csv))
        if n_test != len(rows):
            raise DataError(f"feature rows ({len(rows)}) do not match test rows ({n_test})")
    if rows:
        X, _ = rows_to_arrays(rows)
        probs = load_classifier(model_path).predict_proba(X)
    else:
        probs = []
    write_submission(out_csv, [r.id for r in rows], probs)
    return len(rows)


# -- orchestration ----------------------------------------------------------

def build_stages(cfg: PipelineConfig) -> list[Stage]:
    w = cfg.work_dir
    prep, store_path = w / "prep", w / "prep" / "store.qsim"
    augmented = w / "augment" / "augmented.csv"
    gru_path, history = w / "gru" / "model.qsim", w / "gru" / "history.json"
    train_feat, test_feat = w / "features" / "train.csv", w / "features" / "test.csv"
    sec_path = w / "secondary" / "model.qsim"
    submission = w / "submission.csv"
    max_len = cfg.model.max_len
    stop_inputs = {"stopwords": cfg.stopwords_path} if cfg.stopwords_path else {}
    # Token caches are named after the input files.
    stems = {"train": cfg.train_path.stem, "test": cfg.test_path.stem}
    if stems["train"] == stems["test"]:
        raise ConfigError("train and test files must have different names")

    def do_preprocess():
        preprocess_files([cfg.train_path, cfg.test_path], cfg.glove_path, cfg.embedding_dim,
                         max_len, prep, cfg.jobs)

    def do_augment():
        data = write_augmented(cfg.train_path, augmented, cfg.augment_seed)
        if data.shortfall:
            log.warning("augment: %d negatives short of balance", data.shortfall)

    def do_train_gru():
        model, hist = train_gru_model(read_pairs(augmented), EmbeddingStore.load(store_path), cfg.model, cfg.train)
        save_model(gru_path, model, {"train": asdict(cfg.train)})
        history.write_text(json.dumps(hist, indent=1), encoding="utf-8")

    def do_featurize():
        model = load_model(gru_path)
        stop = load_stopwords(cfg.stopwords_path) if cfg.stopwords_path else load_stopwords()
        ctx = FeatureContext(read_pairs(cfg.train_path), stop)
        featurize_file(cfg.train_path, model, ctx, train_feat)
        featurize_file(cfg.test_path, model, ctx, test_feat)

    def do_train_secondary():
        report = train_secondary_file(train_feat, cfg.secondary, sec_path)
        log.info("secondary dev metrics: %s", report)

    def do_predict():
        predict_file(test_feat, sec_path, submission, cfg.test_path)

    model_params = {"model": asdict(cfg.model), "train": asdict(cfg.train)}
    return [
        Stage("preprocess", {"train": cfg.train_path, "test": cfg.test_path, "glove": cfg.glove_path},
              {"store": store_path, "train_tok": prep / f"{stems['train']}.tok",
               "train_ids": prep / f"{stems['train']}.ids", "test_tok": prep / f"{stems['test']}.tok",
               "test_ids": prep / f"{stems['test']}.ids"},
              {"dim": cfg.embedding_dim, "max_len": max_len}, None, do_preprocess),
        Stage("augment", {"train": cfg.train_path}, {"augmented": augmented},
              {"seed": cfg.augment_seed}, cfg.augment_seed, do_augment),
        Stage("train-gru", {"augmented": augmented, "store": store_path},
              {"model": gru_path, "history": history}, model_params, cfg.train.seed, do_train_gru),
        Stage("featurize", {"train": cfg.train_path, "test": cfg.test_path, "model": gru_path, **stop_inputs},
              {"train_features": train_feat, "test_features": test_feat}, {}, None, do_featurize),
        Stage("train-secondary", {"features": train_feat}, {"model": sec_path},
              asdict(cfg.secondary), cfg.secondary.seed, do_train_secondary),
        Stage("predict", {"features": test_feat, "model": sec_path, "test": cfg.test_path},
              {"submission": submission}, {}, None, do_predict),
    ]


def run_all(cfg: PipelineConfig) -> RunManifest:
    cfg.check_paths()
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.work_dir / "manifest.json")
    upstream_ran = False
    for stage in build_stages(cfg):
        upstream_ran = run_stage(stage, manifest, upstream_ran, cfg.work_dir) or upstream_ran
    return manifest
