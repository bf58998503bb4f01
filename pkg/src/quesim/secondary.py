"""Secondary classifiers over feature rows: random forest, AdaBoost, linear SVM.

All three expose ``fit(X, y, ...)`` style constructors and ``predict_proba(X)``
returning the probability of the positive class.  ``X`` is ``(n, d)`` float
and ``y`` holds 0/1 labels.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import container
from .errors import DataError

log = logging.getLogger(__name__)


def log_loss(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise DataError(f"length mismatch: {probs.shape} probabilities vs {labels.shape} labels")
    if probs.size == 0:
        raise DataError("log_loss of an empty set")
    p = np.clip(probs, 1e-15, 1.0 - 1e-15)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log1p(-p)))


def accuracy(probs, labels, threshold=0.5) -> float:
    return float(np.mean((np.asarray(probs) >= threshold) == np.asarray(labels, dtype=bool)))


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("need a nonempty 2-d feature matrix")
    if len(y) != len(X):
        raise DataError("X and y lengths differ")
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("labels must be 0 or 1")
    return X, y.astype(np.int64)


# -- decision trees ---------------------------------------------------------

def _best_gini_split(x, y, w=None):
    """Best threshold on one feature by weighted Gini impurity.

    Returns (impurity, threshold) or None when the feature is constant.
    Among equal impurities the lowest threshold wins.
    """
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    boundary = np.nonzero(xs[1:] > xs[:-1])[0]
    if boundary.size == 0:
        return None
    n = len(xs)
    pos_left = np.cumsum(ys)[boundary]
    n_left = boundary + 1
    n_right = n - n_left
    pos_right = ys.sum() - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    gini = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
    k = int(np.argmin(gini))
    b = boundary[k]
    return float(gini[k]), float((xs[b] + xs[b + 1]) / 2.0)


class DecisionTree:
    """CART classifier stored as flat node arrays.

    ``feature[i] < 0`` marks a leaf; ``value[i]`` is the positive fraction
    of training rows reaching node i.  Rows with ``x[feature] <= threshold``
    go left.
    """

    def __init__(self, feature, threshold, left, right, value, count, max_depth=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.count = np.asarray(count, dtype=np.int64)
        self.max_depth = max_depth

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            go_left = X[idx, f[active]] <= self.threshold[node[active]]
            node[idx] = np.where(go_left, self.left[node[active]], self.right[node[active]])
        return self.value[node]

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.feature, self.threshold, self.left, self.right, self.value, self.count])

    @classmethod
    def from_array(cls, arr, max_depth=None) -> "DecisionTree":
        arr = np.asarray(arr)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5], max_depth)


def fit_tree(X, y, max_depth=None, features_per_split=None, rng=None) -> DecisionTree:
    """Greedy CART on Gini impurity.

    Each node considers ``features_per_split`` features drawn without
    replacement (all of them when None).  Splitting stops at ``max_depth``
    (None = unlimited), at a pure node, or below 2 samples.  Ties go to the
    lowest feature index, then the lowest threshold.
    """
    X, y = _check_xy(X, y)
    n_features = X.shape[1]
    k = n_features if features_per_split is None else int(features_per_split)
    if not 1 <= k <= n_features:
        raise DataError(f"features_per_split must be in [1, {n_features}]")
    if rng is None:
        rng = np.random.default_rng(0)
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        count.append(len(rows))
        return len(feature) - 1

    root_rows = np.arange(len(y))
    stack = [(new_node(root_rows), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        yr = y[rows]
        if (max_depth is not None and depth >= max_depth) or len(rows) < 2 or yr.min() == yr.max():
            continue
        candidates = np.arange(n_features) if k == n_features else np.sort(rng.choice(n_features, k, replace=False))
        best = None
        for f in candidates:
            split = _best_gini_split(X[rows, f], yr)
            if split is not None and (best is None or split[0] < best[0]):
                best = (split[0], split[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        mask = X[rows, f] <= thr
        l_rows, r_rows = rows[mask], rows[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(l_rows)
        right[node] = new_node(r_rows)
        # Right pushed first so the left subtree is numbered first.
        stack.append((right[node], r_rows, depth + 1))
        stack.append((left[node], l_rows, depth + 1))
    return DecisionTree(feature, threshold, left, right, value, count, max_depth)


class RandomForest:
    kind = "rf"

    def __init__(self, trees, features_per_split, seed, max_depth=None):
        self.trees = list(trees)
        self.features_per_split = features_per_split
        self.seed = seed
        self.max_depth = max_depth

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @classmethod
    def fit(cls, X, y, n_trees=100, max_depth=8, features_per_split=2, seed=0, bootstrap=True, n_jobs=1):
        """Bagged CART trees; tree i draws from ``default_rng(seed ^ i)``.

        Trees are independent, so ``n_jobs > 1`` fits them on a thread pool
        and yields the same forest as sequential fitting.
        """
        X, y = _check_xy(X, y)
        if n_trees < 1:
            raise DataError("n_trees must be >= 1")
        fps = min(features_per_split or X.shape[1], X.shape[1])

        def fit_one(i):
            rng = np.random.default_rng(seed ^ i)
            rows = rng.integers(0, len(y), size=len(y)) if bootstrap else np.arange(len(y))
            return fit_tree(X[rows], y[rows], max_depth, fps, rng)

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                trees = list(pool.map(fit_one, range(n_trees)))
        else:
            trees = [fit_one(i) for i in range(n_trees)]
        return cls(trees, fps, seed, max_depth)

    def predict_proba(self, X) -> np.ndarray:
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def state(self):
        meta = {"features_per_split": self.features_per_split, "seed": self.seed, "max_depth": self.max_depth}
        return meta, {f"tree{i}": t.to_array() for i, t in enumerate(self.trees)}

    @classmethod
    def from_state(cls, meta, tensors):
        trees = [DecisionTree.from_array(tensors[f"tree{i}"], meta["max_depth"]) for i in range(len(tensors))]
        return cls(trees, meta["features_per_split"], meta["seed"], meta["max_depth"])


# -- AdaBoost ---------------------------------------------------------------

@dataclass
class Stump:
    feature: int
    threshold: float
    # vote for x[feature] <= threshold; the other side votes -polarity
    polarity: int

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.where(X[:, self.feature] <= self.threshold, self.polarity, -self.polarity)


def fit_stump(X, y_pm, w) -> tuple[Stump, float]:
    """Stump with the lowest weighted error; labels in {-1, +1}.

    Ties go to lowest feature, then lowest threshold, then polarity +1.
    """
    best = None
    total_pos = w[y_pm > 0].sum()
    total_neg = w[y_pm < 0].sum()
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        boundary = np.nonzero(xs[1:] > xs[:-1])[0]
        if boundary.size == 0:
            continue
        wp = np.cumsum(np.where(y_pm[order] > 0, w[order], 0.0))[boundary]
        wn = np.cumsum(np.where(y_pm[order] < 0, w[order], 0.0))[boundary]
        # polarity +1: left votes +1, so errors are left negatives + right positives
        err_plus = wn + (total_pos - wp)
        err_minus = wp + (total_neg - wn)
        for errs, pol in ((err_plus, 1), (err_minus, -1)):
            k = int(np.argmin(errs))
            thr = float((xs[boundary[k]] + xs[boundary[k] + 1]) / 2.0)
            cand = (float(errs[k]), f, thr, -pol)
            if best is None or cand < best:
                best = cand
    if best is None:
        raise DataError("every feature is constant; no stump can split the data")
    err, f, thr, neg_pol = best
    return Stump(f, thr, -neg_pol), max(err, 0.0)


class AdaBoostModel:
    kind = "ada"
    # floor on the weighted error so a perfect stump gets a large finite vote
    MIN_ERROR = 1e-10

    def __init__(self, stumps, alphas):
        self.stumps = list(stumps)
        self.alphas = [float(a) for a in alphas]

    @classmethod
    def fit(cls, X, y, n_rounds=100):
        X, y = _check_xy(X, y)
        if y.min() == y.max():
            raise DataError("AdaBoost needs both classes in the training data")
        y_pm = np.where(y == 1, 1, -1)
        w = np.full(len(y), 1.0 / len(y))
        stumps, alphas = [], []
        for _ in range(n_rounds):
            stump, err = fit_stump(X, y_pm, w)
            if err >= 0.5:
                break
            alpha = 0.5 * math.log((1.0 - max(err, cls.MIN_ERROR)) / max(err, cls.MIN_ERROR))
            stumps.append(stump)
            alphas.append(alpha)
            if err <= 0.0:
                break
            w = w * np.exp(-alpha * y_pm * stump.predict(X))
            w /= w.sum()
        return cls(stumps, alphas)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        F = np.zeros(len(X))
        for s, a in zip(self.stumps, self.alphas):
            F += a * s.predict(X)
        return F

    def predict_proba(self, X) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-2.0 * self.decision_function(X)))

    def state(self):
        arr = np.array([[s.feature, s.threshold, s.polarity, a] for s, a in zip(self.stumps, self.alphas)])
        return {}, {"stumps": arr.reshape(-1, 4)}

    @classmethod
    def from_state(cls, meta, tensors):
        arr = tensors["stumps"]
        return cls([Stump(int(r[0]), float(r[1]), int(r[2])) for r in arr], arr[:, 3])


# -- linear SVM -------------------------------------------------------------

def platt_fit(margins, labels, tol=1e-8, max_iter=100) -> tuple[float, float]:
    """Fit p = sigmoid(a * margin + b) by Newton's method.

    Uses Platt's smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2) so a
    separable calibration set still has a finite optimum.
    """
    f = np.asarray(margins, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(a, b):
        z = a * f + b
        return float(np.sum(np.logaddexp(0.0, z) - t * z))

    a, b = 1.0, 0.0
    obj = objective(a, b)
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(a * f + b)))
        d = p - t
        grad = np.array([np.dot(d, f), d.sum()])
        s = p * (1 - p)
        H = np.array([[np.dot(s, f * f), np.dot(s, f)], [np.dot(s, f), s.sum()]]) + 1e-12 * np.eye(2)
        step = np.linalg.solve(H, grad)
        decrease = float(grad @ step)
        lr = 1.0
        while lr > 1e-10:
            na, nb = a - lr * step[0], b - lr * step[1]
            new_obj = objective(na, nb)
            if new_obj <= obj - 1e-4 * lr * decrease:
                break
            lr /= 2
        else:
            break
        moved = max(abs(na - a), abs(nb - b))
        a, b, obj = na, nb, new_obj
        if moved < tol:
            break
    return float(a), float(b)


class SvmModel:
    """Linear SVM trained with Pegasos on z-scored features, Platt-calibrated.

    The bias is learned as the weight of a constant feature, so it is
    regularized along with ``w``.
    """

    kind = "svm"

    def __init__(self, w, b, mean, std, platt_a=1.0, platt_b=0.0):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.platt_a = float(platt_a)
        self.platt_b = float(platt_b)

    @classmethod
    def fit(cls, X, y, lam=1e-4, epochs=20, seed=0, calibration_fraction=0.2):
        X, y = _check_xy(X, y)
        if y.min() == y.max():
            raise DataError("SVM needs both classes in the training data")
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(y))
        n_cal = int(round(len(y) * calibration_fraction))
        cal, tr = perm[:n_cal], perm[n_cal:]
        mean = X[tr].mean(axis=0)
        std = X[tr].std(axis=0)
        std[std == 0] = 1.0
        Z = np.column_stack([(X[tr] - mean) / std, np.ones(len(tr))])
        y_pm = np.where(y[tr] == 1, 1.0, -1.0)
        theta = pegasos(Z, y_pm, lam, epochs, rng)
        model = cls(theta[:-1], theta[-1], mean, std)
        yc = y[cal]
        if len(cal) == 0 or yc.min() == yc.max():
            log.warning("calibration split has a single class; using a=1, b=0")
        else:
            model.platt_a, model.platt_b = platt_fit(model.margin(X[cal]), yc)
        return model

    def margin(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return ((X - self.mean) / self.std) @ self.w + self.b

    def predict_proba(self, X) -> np.ndarray:
        z = self.platt_a * self.margin(X) + self.platt_b
        return np.exp(-np.logaddexp(0.0, -z))

    def state(self):
        meta = {"b": self.b, "platt_a": self.platt_a, "platt_b": self.platt_b}
        return meta, {"w": self.w, "mean": self.mean, "std": self.std}

    @classmethod
    def from_state(cls, meta, tensors):
        return cls(tensors["w"], meta["b"], tensors["mean"], tensors["std"], meta["platt_a"], meta["platt_b"])


def pegasos(Z, y_pm, lam, epochs, rng) -> np.ndarray:
    """Stochastic subgradient descent on the primal hinge objective.

    Step size 1/(lam * t), one pass over a fresh permutation per epoch,
    followed by projection onto the ball of radius 1/sqrt(lam).
    """
    w = np.zeros(Z.shape[1])
    radius = 1.0 / math.sqrt(lam)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(Z)):
            t += 1
            eta = 1.0 / (lam * t)
            violated = y_pm[i] * (Z[i] @ w) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y_pm[i] * Z[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
    return w


# -- persistence ------------------------------------------------------------

CLASSIFIERS = {"rf": RandomForest, "ada": AdaBoostModel, "svm": SvmModel}


def fit_classifier(kind, X, y, params=None):
    params = dict(params or {})
    if kind == "rf":
        return RandomForest.fit(X, y, **params)
    if kind == "ada":
        return AdaBoostModel.fit(X, y, **params)
    if kind == "svm":
        return SvmModel.fit(X, y, **params)
    raise DataError(f"unknown classifier kind {kind!r}; choose rf, ada or svm")


def save_classifier(path, model, extra=None) -> None:
    meta, tensors = model.state()
    container.save(path, "classifier", {"classifier": model.kind, "params": meta, "extra": extra or {}}, tensors)


def load_classifier(path):
    _, meta, tensors = container.load(path, expect_kind="classifier")
    cls = CLASSIFIERS.get(meta["classifier"])
    if cls is None:
        raise DataError(f"{path}: unknown classifier kind {meta['classifier']!r}")
    return cls.from_state(meta["params"], tensors)
