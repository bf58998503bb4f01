"""Synthetic feature matrices for classifier tests."""

import numpy as np

DIRECTION = np.array([1.0, -2.0, 0.5, 1.5]) / np.linalg.norm([1.0, -2.0, 0.5, 1.5])


def separable(n, seed, gap=0.5, direction=DIRECTION):
    """n points in 4-d, labeled by the side of a hyperplane, none within ``gap`` of it."""
    rng = np.random.default_rng(seed)
    X = np.empty((0, len(direction)))
    while len(X) < n:
        batch = rng.normal(size=(2 * n, len(direction)))
        X = np.vstack([X, batch[np.abs(batch @ direction) > gap]])
    X = X[:n]
    return X, (X @ direction > 0).astype(int)


def axis_separable(n, seed, gap=0.5):
    return separable(n, seed, gap, direction=np.array([0.0, 0.0, 1.0, 0.0]))


def noisy(n, seed, flip=0.25):
    """Labels from a linear rule with a fraction ``flip`` of them inverted."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    flips = rng.random(n) < flip
    return X, np.where(flips, 1 - y, y)
