"""Siamese stacked bidirectional GRU with a feed-forward sigmoid head.

Everything is plain numpy in float64.  Batches are processed together:
a question batch is an ``(B, L)`` int array and the recurrence runs over
``L`` with ``(B, d)`` states.  Row-vector convention throughout, so an
input-to-hidden matrix has shape ``(d_in, d_h)``.

Parameters live in one ordered ``dict[str, ndarray]``; gradients use the
same keys.  Both questions of a pair go through the same parameters.
"""

from __future__ import annotations

import copy
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import container
from .embeddings import EmbeddingStore, Vocabulary
from .errors import ConfigError, DataError, NumericError
from .text_prep import PAD_ID, encode_texts

log = logging.getLogger(__name__)

GATES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
DIRECTIONS = ("fwd", "bwd")
DEFAULT_HIDDEN = (250, 500, 250)
DEFAULT_HEAD = (1000, 1024)


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class ModelConfig:
    """Architecture.  ``hidden`` is per-direction GRU width per stacked layer;
    ``head`` lists the hidden fully-connected widths (the scalar output layer
    is implicit).  ``join`` is "full" for (g1, g2, |g1-g2|, g1*g2) or
    "concat" for (g1, g2).
    """

    hidden: list[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    head: list[int] = field(default_factory=lambda: list(DEFAULT_HEAD))
    keep_prob: float = 0.8
    max_len: int = 40
    join: str = "full"

    def __post_init__(self):
        self.hidden = [int(h) for h in self.hidden]
        self.head = [int(h) for h in self.head]
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"hidden sizes must be positive, got {self.hidden}")
        if self.head and min(self.head) < 1:
            raise ConfigError(f"head sizes must be positive, got {self.head}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if self.join not in ("full", "concat"):
            raise ConfigError(f"join must be 'full' or 'concat', got {self.join!r}")

    @property
    def name(self) -> str:
        return f"GRU_{len(self.hidden)}_{len(self.head)}"

    @classmethod
    def from_name(cls, name: str, dropout: bool = False, **overrides) -> "ModelConfig":
        """Build a GRU_a_b variant: ``a`` stacked GRU layers, ``b`` hidden FC layers.

        Widths come from the 250/500/250 and 1000/1024 defaults, cycled if a
        variant asks for more layers.  Without ``dropout`` keep_prob is 1.
        """
        m = re.fullmatch(r"GRU_(\d+)_(\d+)", name)
        if not m:
            raise ConfigError(f"model name must look like GRU_<a>_<b>, got {name!r}")
        a, b = int(m.group(1)), int(m.group(2))
        if a < 1:
            raise ConfigError("need at least one GRU layer")
        hidden = [DEFAULT_HIDDEN[i % 3] for i in range(a)]
        head = [DEFAULT_HEAD[i % 2] for i in range(b)]
        kw = {"hidden": hidden, "head": head, "keep_prob": 0.8 if dropout else 1.0}
        kw.update(overrides)
        return cls(**kw)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    dev_fraction: float = 0.1
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ConfigError(f"dev_fraction must be in [0, 1), got {self.dev_fraction}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


class SiameseModel:
    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: dict[str, np.ndarray]):
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, store: EmbeddingStore, seed: int = 0) -> "SiameseModel":
        rng = np.random.default_rng(seed)
        params = {"embedding": store.matrix.copy()}
        d_in = store.dim
        for k, d_h in enumerate(config.hidden):
            for direction in DIRECTIONS:
                prefix = f"gru{k}.{direction}"
                for gate in ("z", "r", "h"):
                    params[f"{prefix}.W_{gate}"] = _glorot(rng, d_in, d_h)
                for gate in ("z", "r", "h"):
                    params[f"{prefix}.U_{gate}"] = _glorot(rng, d_h, d_h)
                for gate in ("z", "r", "h"):
                    params[f"{prefix}.b_{gate}"] = np.zeros(d_h)
            d_in = 2 * d_h
        width = _join_width(config, 2 * config.hidden[-1])
        for j, size in enumerate(config.head):
            params[f"head{j}.W"] = _glorot(rng, width, size)
            params[f"head{j}.b"] = np.zeros(size)
            width = size
        params["out.W"] = _glorot(rng, width, 1)
        params["out.b"] = np.zeros(1)
        return cls(config, store.vocab, params)

    @property
    def embedding(self) -> np.ndarray:
        return self.params["embedding"]

    @property
    def name(self) -> str:
        return self.config.name

    def cell(self, layer: int, direction: str) -> dict[str, np.ndarray]:
        prefix = f"gru{layer}.{direction}."
        return {g: self.params[prefix + g] for g in GATES}

    def copy(self) -> "SiameseModel":
        return SiameseModel(copy.deepcopy(self.config), self.vocab,
                            {k: v.copy() for k, v in self.params.items()})

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        return encode_texts(texts, self.vocab.word_to_id, self.config.max_len)


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _join_width(config, g_width):
    return g_width * (4 if config.join == "full" else 2)


# -- GRU cell ---------------------------------------------------------------

def gru_cell_forward(p: Mapping[str, np.ndarray], x, h_prev):
    """One GRU step.  ``x`` is ``(..., d_in)``, ``h_prev`` is ``(..., d_h)``.

    z = sigma(x W_z + h U_z + b_z), r = sigma(x W_r + h U_r + b_r),
    h~ = tanh(x W_h + (r*h) U_h + b_h), h' = (1 - z) * h + z * h~.
    """
    z = sigmoid(x @ p["W_z"] + h_prev @ p["U_z"] + p["b_z"])
    r = sigmoid(x @ p["W_r"] + h_prev @ p["U_r"] + p["b_r"])
    rh = r * h_prev
    h_tilde = np.tanh(x @ p["W_h"] + rh @ p["U_h"] + p["b_h"])
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, (x, h_prev, z, r, rh, h_tilde)


def gru_cell_backward(p, cache, dh, grads):
    """Backprop one step; accumulates parameter grads into ``grads`` (keyed by
    gate name) and returns (dx, dh_prev)."""
    x, h_prev, z, r, rh, h_tilde = cache
    da_h = dh * z * (1.0 - h_tilde ** 2)
    da_z = dh * (h_tilde - h_prev) * z * (1.0 - z)
    d_rh = da_h @ p["U_h"].T
    da_r = d_rh * h_prev * r * (1.0 - r)

    grads["W_z"] += x.T @ da_z
    grads["W_r"] += x.T @ da_r
    grads["W_h"] += x.T @ da_h
    grads["U_z"] += h_prev.T @ da_z
    grads["U_r"] += h_prev.T @ da_r
    grads["U_h"] += rh.T @ da_h
    grads["b_z"] += da_z.sum(axis=0)
    grads["b_r"] += da_r.sum(axis=0)
    grads["b_h"] += da_h.sum(axis=0)

    dx = da_z @ p["W_z"].T + da_r @ p["W_r"].T + da_h @ p["W_h"].T
    dh_prev = dh * (1.0 - z) + d_rh * r + da_z @ p["U_z"].T + da_r @ p["U_r"].T
    return dx, dh_prev


def _sweep(cell, xs, reverse):
    T, B = xs.shape[:2]
    d_h = cell["U_z"].shape[0]
    hs = np.empty((T, B, d_h))
    caches = [None] * T
    h = np.zeros((B, d_h))
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        h, caches[t] = gru_cell_forward(cell, xs[t], h)
        hs[t] = h
    return hs, caches


def _sweep_backward(cell, caches, dhs, reverse, grads):
    T, B = dhs.shape[:2]
    dxs = np.empty((T, B, cell["W_z"].shape[0]))
    dh = np.zeros((B, cell["U_z"].shape[0]))
    for t in (range(T) if reverse else range(T - 1, -1, -1)):
        dxs[t], dh = gru_cell_backward(cell, caches[t], dhs[t] + dh, grads)
    return dxs


# -- encoder and head -------------------------------------------------------

def encode_question(model: SiameseModel, ids, train_mode: bool = False, rng=None):
    """Sentence vectors for a batch of id rows.

    Returns ``g`` of shape ``(B, 2 * hidden[-1])``: the top layer's forward
    state after the last position joined with its backward state after the
    first.  Dropout lives in the head, so ``train_mode`` does not change the
    result here.
    """
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    emb = model.embedding
    if ids.size and (ids.min() < 0 or ids.max() >= emb.shape[0]):
        raise IndexError(f"token id out of range [0, {emb.shape[0]})")
    xs = emb[ids.T]  # (T, B, d_w)
    layer_caches = []
    for k in range(len(model.config.hidden)):
        fwd_hs, fwd_c = _sweep(model.cell(k, "fwd"), xs, reverse=False)
        bwd_hs, bwd_c = _sweep(model.cell(k, "bwd"), xs, reverse=True)
        if not (np.all(np.isfinite(fwd_hs)) and np.all(np.isfinite(bwd_hs))):
            raise NumericError(f"non-finite GRU state in layer {k}")
        layer_caches.append((fwd_c, bwd_c))
        xs = np.concatenate([fwd_hs, bwd_hs], axis=-1)
    d_h = model.config.hidden[-1]
    g = np.concatenate([xs[-1, :, :d_h], xs[0, :, d_h:]], axis=-1)
    return g, {"ids": ids, "layers": layer_caches, "T": ids.shape[1]}


def _direction_backward(model, grads, layer, direction, caches, dhs):
    prefix = f"gru{layer}.{direction}."
    cell_grads = {g: grads[prefix + g] for g in GATES}
    return _sweep_backward(model.cell(layer, direction), caches, dhs, direction == "bwd", cell_grads)


def _encode_backward(model, cache, dg, grads):
    T = cache["T"]
    B = dg.shape[0]
    d_h = model.config.hidden[-1]
    d_out = np.zeros((T, B, 2 * d_h))
    d_out[-1, :, :d_h] = dg[:, :d_h]
    d_out[0, :, d_h:] = dg[:, d_h:]
    for k in range(len(model.config.hidden) - 1, -1, -1):
        d_h = model.config.hidden[k]
        fwd_c, bwd_c = cache["layers"][k]
        d_out = (_direction_backward(model, grads, k, "fwd", fwd_c, d_out[:, :, :d_h])
                 + _direction_backward(model, grads, k, "bwd", bwd_c, d_out[:, :, d_h:]))
    np.add.at(grads["embedding"], cache["ids"].T, d_out)
    grads["embedding"][PAD_ID] = 0.0


def _join(config, g1, g2):
    if config.join == "concat":
        return np.concatenate([g1, g2], axis=-1)
    return np.concatenate([g1, g2, np.abs(g1 - g2), g1 * g2], axis=-1)


def _join_backward(config, g1, g2, d_joint):
    w = g1.shape[-1]
    dg1 = d_joint[:, :w].copy()
    dg2 = d_joint[:, w:2 * w].copy()
    if config.join == "full":
        d_abs = d_joint[:, 2 * w:3 * w] * np.sign(g1 - g2)
        d_prod = d_joint[:, 3 * w:]
        dg1 += d_abs + d_prod * g2
        dg2 += -d_abs + d_prod * g1
    return dg1, dg2


def forward_pair(model: SiameseModel, ids1, ids2, train_mode: bool = False, rng=None):
    """Duplicate probability for each pair in the batch, plus a backprop cache."""
    ids1 = np.atleast_2d(np.asarray(ids1, dtype=np.int64))
    ids2 = np.atleast_2d(np.asarray(ids2, dtype=np.int64))
    if ids1.shape != ids2.shape:
        raise DataError(f"question batches differ in shape: {ids1.shape} vs {ids2.shape}")
    B = ids1.shape[0]
    # One encoder call over both arms: the Siamese weights are literally shared.
    g, enc_cache = encode_question(model, np.concatenate([ids1, ids2]), train_mode, rng)
    g1, g2 = g[:B], g[B:]
    h = _join(model.config, g1, g2)
    acts = [h]
    pre = []
    mask = None
    keep = model.config.keep_prob
    for j in range(len(model.config.head)):
        a = h @ model.params[f"head{j}.W"] + model.params[f"head{j}.b"]
        h = np.maximum(a, 0.0)
        if j == 0 and train_mode and keep < 1.0:
            if rng is None:
                raise ValueError("train_mode with dropout needs an rng")
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        pre.append(a)
        acts.append(h)
    logit = (h @ model.params["out.W"] + model.params["out.b"])[:, 0]
    y_hat = sigmoid(logit)
    if not np.all(np.isfinite(y_hat)):
        raise NumericError("non-finite model output")
    cache = {"enc": enc_cache, "g1": g1, "g2": g2, "acts": acts, "pre": pre, "mask": mask, "y_hat": y_hat}
    return y_hat, cache


def bce_loss(y_hat, y):
    """Elementwise binary cross-entropy with y_hat clipped to [1e-12, 1 - 1e-12]."""
    p = np.clip(y_hat, 1e-12, 1.0 - 1e-12)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def backward(model: SiameseModel, cache, y) -> dict[str, np.ndarray]:
    """Exact gradients of the batch-mean BCE w.r.t. every parameter."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    B = y.shape[0]
    d_logit = ((cache["y_hat"] - y) / B)[:, None]
    acts, pre = cache["acts"], cache["pre"]
    grads["out.W"] += acts[-1].T @ d_logit
    grads["out.b"] += d_logit.sum(axis=0)
    dh = d_logit @ model.params["out.W"].T
    for j in range(len(model.config.head) - 1, -1, -1):
        if j == 0 and cache["mask"] is not None:
            dh = dh * cache["mask"]
        da = dh * (pre[j] > 0)
        grads[f"head{j}.W"] += acts[j].T @ da
        grads[f"head{j}.b"] += da.sum(axis=0)
        dh = da @ model.params[f"head{j}.W"].T
    dg1, dg2 = _join_backward(model.config, cache["g1"], cache["g2"], dh)
    _encode_backward(model, cache["enc"], np.concatenate([dg1, dg2]), grads)
    return grads


# -- optimisation -----------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **hyper) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, **hyper)


def adam_step(params: dict, grads: Mapping, state: AdamState, skip: Sequence[str] = ()):
    """In-place Adam update of every param not named in ``skip``."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        if k in skip:
            continue
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# -- training ---------------------------------------------------------------

def mean_loss(model, ids1, ids2, labels, batch_size=512) -> float:
    if len(labels) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(labels), batch_size):
        y_hat, _ = forward_pair(model, ids1[s:s + batch_size], ids2[s:s + batch_size])
        total += float(bce_loss(y_hat, labels[s:s + batch_size]).sum())
    return total / len(labels)


def train(model: SiameseModel, ids1, ids2, labels, cfg: TrainConfig):
    """Mini-batch Adam on the mean BCE.

    A ``dev_fraction`` slice is split off by a seeded shuffle; when it is
    nonempty the returned model holds the parameters from the epoch with
    the lowest dev loss.  Returns ``(model, history)`` where history has
    one dict per epoch.
    """
    ids1 = np.asarray(ids1, dtype=np.int64)
    ids2 = np.asarray(ids2, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    if n == 0:
        raise DataError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_dev = int(round(n * cfg.dev_fraction))
    if n_dev >= n:
        n_dev = n - 1
    dev, tr = perm[:n_dev], perm[n_dev:]
    state = AdamState.zeros_like(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    skip = ("embedding",) if cfg.freeze_embeddings else ()
    history = []
    best = (math.inf, None)
    batch_index = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(tr)
        seen, total = 0, 0.0
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            try:
                y_hat, cache = forward_pair(model, ids1[b], ids2[b], True, rng)
            except NumericError as exc:
                raise NumericError(f"batch {batch_index}: {exc}") from None
            loss = bce_loss(y_hat, labels[b])
            if not np.all(np.isfinite(loss)):
                raise NumericError(f"non-finite loss at batch {batch_index}")
            grads = backward(model, cache, labels[b])
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(model.params, grads, state, skip)
            model.params["embedding"][PAD_ID] = 0.0
            total += float(loss.sum())
            seen += len(b)
            batch_index += 1
        record = {"epoch": epoch + 1, "train_loss": total / max(seen, 1)}
        if n_dev:
            dev_loss = mean_loss(model, ids1[dev], ids2[dev], labels[dev])
            record["dev_loss"] = dev_loss
            if dev_loss < best[0]:
                best = (dev_loss, {k: v.copy() for k, v in model.params.items()})
        history.append(record)
        log.info("epoch %d: %s", epoch + 1, record)
    if best[1] is not None:
        model.params = best[1]
    return model, history


def predict_ids(model: SiameseModel, ids1, ids2, batch_size: int = 256) -> np.ndarray:
    ids1 = np.asarray(ids1, dtype=np.int64)
    ids2 = np.asarray(ids2, dtype=np.int64)
    out = np.empty(len(ids1))
    for s in range(0, len(ids1), batch_size):
        out[s:s + batch_size], _ = forward_pair(model, ids1[s:s + batch_size], ids2[s:s + batch_size])
    return out


def predict_pairs(model: SiameseModel, texts1: Sequence[str], texts2: Sequence[str], batch_size: int = 256) -> np.ndarray:
    if not len(texts1):
        return np.empty(0)
    return predict_ids(model, model.encode_texts(texts1), model.encode_texts(texts2), batch_size)


# -- persistence ------------------------------------------------------------

def save_model(path, model: SiameseModel, meta: Mapping | None = None) -> None:
    header = {"config": asdict(model.config), "vocab": model.vocab.id_to_word}
    if meta:
        header["extra"] = dict(meta)
    container.save(path, "gru", header, model.params)


def load_model(path) -> SiameseModel:
    _, meta, tensors = container.load(path, expect_kind="gru")
    return SiameseModel(ModelConfig(**meta["config"]), Vocabulary(list(meta["vocab"])), tensors)
