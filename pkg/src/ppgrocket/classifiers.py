"""Class-balanced ridge classifier and balanced random forest.

Ridge: features are standardised, targets encoded as -1/+1, and each row
weighted by ``N / (2 * N_class)``. The regularisation strength is chosen
from a grid by closed-form leave-one-out error.

Forest: every tree is grown on a bootstrap sample whose majority class is
under-sampled to the minority count, using Gini splits over ``mtry`` random
candidate features per node.
"""

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DegenerateLabelsError, ModelError
from .validation import check_features, check_X_y

DEFAULT_LAMBDAS = (0.01, 0.1, 1.0, 10.0, 100.0)

RIDGE_MAGIC = b"RDGM"
FOREST_MAGIC = b"BRFM"
MODEL_VERSION = 1


def balanced_class_weights(y):
    """Per-row weights ``N / (2 * N_c)`` so each class carries half the mass."""
    y = np.asarray(y)
    n = len(y)
    counts = np.bincount(y, minlength=2)
    if np.any(counts == 0):
        raise DegenerateLabelsError("both classes must be present to balance weights")
    return (n / (2.0 * counts))[y]


# -- ridge ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    lam: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    lambda_grid: tuple = ()
    loo_errors: tuple = ()

    @property
    def n_features(self):
        return len(self.weights)

    def decision_function(self, X):
        X = check_features(X, self.n_features)
        return ((X - self.feature_means) / self.feature_scales) @ self.weights + self.intercept

    def predict(self, X):
        # a score of exactly zero counts as hypertension
        return (self.decision_function(X) >= 0).astype(np.int64)

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(RIDGE_MAGIC)
        buf.write(struct.pack("<HIddI", MODEL_VERSION, self.n_features, self.lam,
                              self.intercept, len(self.lambda_grid)))
        buf.write(np.asarray(self.lambda_grid, dtype="<f8").tobytes())
        buf.write(np.asarray(self.loo_errors, dtype="<f8").tobytes())
        for arr in (self.feature_means, self.feature_scales, self.weights):
            buf.write(np.asarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != RIDGE_MAGIC:
            raise ModelError("not a ridge model file (bad magic)")
        head = struct.Struct("<HIddI")
        version, D, lam, intercept, n_grid = head.unpack_from(data, 4)
        if version != MODEL_VERSION:
            raise ModelError(f"unsupported ridge model version {version}")
        pos = 4 + head.size
        if len(data) != pos + 8 * (2 * n_grid + 3 * D):
            raise ModelError("ridge model file has the wrong size")
        grid = np.frombuffer(data, "<f8", n_grid, pos)
        pos += 8 * n_grid
        loo = np.frombuffer(data, "<f8", n_grid, pos)
        pos += 8 * n_grid
        means, scales, weights = (
            np.frombuffer(data, "<f8", D, pos + 8 * D * i).copy() for i in range(3)
        )
        return cls(weights, intercept, lam, means, scales, tuple(grid), tuple(loo))

    def to_text(self):
        """Human-readable dump: header lines, then one line per feature."""
        lines = [
            f"lambda {self.lam!r}",
            f"intercept {self.intercept!r}",
            "feature mean scale weight",
        ]
        for i, (m, s, w) in enumerate(zip(self.feature_means, self.feature_scales, self.weights)):
            lines.append(f"{i} {m!r} {s!r} {w!r}")
        return "\n".join(lines) + "\n"


def _canonical_order(X, y):
    # sort rows so that a row permutation of the input cannot change the fit
    keys = np.column_stack([y, X])
    return np.lexsort(keys.T[::-1])


def fit_ridge(X, y, lambda_grid=DEFAULT_LAMBDAS, seed=0):
    """Weighted ridge on standardised features with leave-one-out lambda choice.

    Minimises ``sum_i w_i (t_i - b - z_i . beta)^2 + lam * |beta|^2`` where
    ``z`` are standardised features, ``t = 2y - 1`` and ``w`` the balanced
    class weights. For each grid value the leave-one-out residuals come from
    the hat-matrix identity ``e_i / (1 - h_ii)``; the lambda with the lowest
    weighted mean squared LOO residual wins, ties to the earlier grid entry.
    ``seed`` is accepted for interface symmetry; the fit is deterministic.
    """
    X, y = check_X_y(X, y, min_rows=2)
    grid = tuple(float(v) for v in lambda_grid)
    if not grid or any(not (lam > 0) for lam in grid):
        raise ConfigError(f"lambda grid must be non-empty and positive, got {grid}")

    order = _canonical_order(X, y)
    X, y = X[order], y[order]

    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales <= 1e-12 * np.maximum(1.0, np.abs(means))] = 1.0
    Z = (X - means) / scales
    t = 2.0 * y - 1.0
    w = balanced_class_weights(y)
    w_sum = w.sum()

    z_mean = (w @ Z) / w_sum
    t_mean = (w @ t) / w_sum
    sw = np.sqrt(w)
    A = sw[:, None] * (Z - z_mean)
    r = sw * (t - t_mean)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    Ur = U.T @ r
    s2 = s * s
    U2 = U * U
    intercept_leverage = w / w_sum

    errors = []
    for lam in grid:
        shrink = s2 / (s2 + lam)
        h = U2 @ shrink + intercept_leverage
        resid = r - U @ (shrink * Ur)
        with np.errstate(divide="ignore", invalid="ignore"):
            loo = resid / (1.0 - h)
        err = float(np.mean(loo * loo)) if np.all(h < 1.0 - 1e-12) else math.inf
        errors.append(err)
    best = int(np.argmin(errors)) if np.isfinite(min(errors)) else 0
    lam = grid[best]
    beta = Vt.T @ (s / (s2 + lam) * Ur)
    intercept = float(t_mean - z_mean @ beta)
    return RidgeModel(beta, intercept, lam, means, scales, grid, tuple(errors))


def predict_ridge(m, X):
    return m.predict(X)


# -- forest --------------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_leaf: int = 1
    mtry: Optional[int] = None

    def validate(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be at least 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError(f"max_depth must be non-negative, got {self.max_depth}")
        if self.min_leaf < 1:
            raise ConfigError(f"min_leaf must be at least 1, got {self.min_leaf}")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigError(f"mtry must be at least 1, got {self.mtry}")

    def resolved_mtry(self, n_features):
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return min(self.mtry, n_features)


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    ``value`` is the fraction of class-1 training rows in each node and
    ``gain`` the node's impurity decrease weighted by its share of rows.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def apply(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X):
        return (self.value[self.apply(X)] >= 0.5).astype(np.int64)


def _gini(n1, n):
    p = n1 / n
    return 2.0 * p * (1.0 - p)


def _best_split(Xn, yn, min_leaf):
    """Best (candidate column, threshold, gain) for one node, or None."""
    n, m = Xn.shape
    if n < 2 * min_leaf:
        return None
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = yn[order]
    left1 = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    total1 = yn.sum()
    right1 = total1 - left1
    child = (n_left * _gini(left1, n_left) + n_right * _gini(right1, n_right)) / n
    gain = _gini(total1, n) - child
    valid = xs[:-1] < xs[1:]
    valid[: min_leaf - 1] = False
    if min_leaf > 1:
        valid[n - min_leaf:] = False
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain.T))  # candidate-major: earliest candidate wins ties
    col, pos = divmod(flat, n - 1)
    best = gain[pos, col]
    if not np.isfinite(best):
        return None
    lo, hi = xs[pos, col], xs[pos + 1, col]
    threshold = lo + (hi - lo) / 2.0
    if not (lo <= threshold < hi):
        threshold = lo
    return col, threshold, max(float(best), 0.0)


def _grow_tree(X, y, rows, rng, config, mtry):
    D = X.shape[1]
    feature, threshold, left, right, value, gain = [], [], [], [], [], []
    n_root = len(rows)

    def build(idx, depth):
        node = len(feature)
        yn = y[idx]
        n1 = int(yn.sum())
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1),
                       (value, n1 / len(idx)), (gain, 0.0)):
            lst.append(v)
        if n1 == 0 or n1 == len(idx):
            return node
        if config.max_depth is not None and depth >= config.max_depth:
            return node
        if mtry >= D:
            candidates = np.arange(D)
        else:
            candidates = np.sort(rng.choice(D, size=mtry, replace=False))
        split = _best_split(X[np.ix_(idx, candidates)], yn, config.min_leaf)
        if split is None:
            return node
        col, thr, g = split
        f = int(candidates[col])
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        gain[node] = g * len(idx) / n_root
        left[node] = build(idx[mask], depth + 1)
        right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.asarray(rows), 0)
    return Tree(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64), np.array(gain, dtype=np.float64),
    )


def balanced_bootstrap(y, rng, max_attempts=100):
    """Bootstrap rows, then under-sample the majority class to the minority count."""
    n = len(y)
    for _ in range(max_attempts):
        boot = rng.integers(0, n, size=n)
        pos = boot[y[boot] == 1]
        neg = boot[y[boot] == 0]
        k = min(len(pos), len(neg))
        if k == 0:
            continue
        if len(pos) > k:
            pos = rng.choice(pos, size=k, replace=False)
        else:
            neg = rng.choice(neg, size=k, replace=False)
        return np.sort(np.concatenate([neg, pos]))
    raise DegenerateLabelsError("could not draw a bootstrap containing both classes")


def _tree_rng(seed, t):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(t)]))


def _fit_one_tree(X, y, config, mtry, seed, t):
    rng = _tree_rng(seed, t)
    rows = balanced_bootstrap(y, rng)
    return _grow_tree(X, y, rows, rng, config, mtry), np.bincount(y[rows], minlength=2)


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple
    n_features: int
    config: ForestConfig
    seed: int
    class_counts: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def n_trees(self):
        return len(self.trees)

    def votes(self, X):
        X = check_features(X, self.n_features)
        return np.sum([tree.predict(X) for tree in self.trees], axis=0)

    def predict(self, X):
        # a tied vote counts as hypertension
        return (2 * self.votes(X) >= self.n_trees).astype(np.int64)

    def feature_importance(self):
        return feature_importance(self)

    def to_bytes(self):
        cfg = self.config
        buf = io.BytesIO()
        buf.write(FOREST_MAGIC)
        buf.write(struct.pack(
            "<HIIiIIq", MODEL_VERSION, self.n_features, self.n_trees,
            -1 if cfg.max_depth is None else cfg.max_depth, cfg.min_leaf,
            0 if cfg.mtry is None else cfg.mtry, int(self.seed),
        ))
        for tree, counts in zip(self.trees, self.class_counts):
            buf.write(struct.pack("<III", int(counts[0]), int(counts[1]), tree.n_nodes))
            buf.write(tree.feature.astype("<i4").tobytes())
            buf.write(tree.threshold.astype("<f8").tobytes())
            buf.write(tree.left.astype("<i4").tobytes())
            buf.write(tree.right.astype("<i4").tobytes())
            buf.write(tree.value.astype("<f8").tobytes())
            buf.write(tree.gain.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != FOREST_MAGIC:
            raise ModelError("not a forest model file (bad magic)")
        head = struct.Struct("<HIIiIIq")
        version, D, n_trees, max_depth, min_leaf, mtry, seed = head.unpack_from(data, 4)
        if version != MODEL_VERSION:
            raise ModelError(f"unsupported forest model version {version}")
        config = ForestConfig(n_trees, None if max_depth < 0 else max_depth, min_leaf, mtry or None)
        pos = 4 + head.size
        trees, counts = [], []
        try:
            for _ in range(n_trees):
                n0, n1, k = struct.unpack_from("<III", data, pos)
                pos += 12
                arrays = []
                for dtype, size in (("<i4", 4), ("<f8", 8), ("<i4", 4), ("<i4", 4), ("<f8", 8), ("<f8", 8)):
                    arrays.append(np.frombuffer(data, dtype, k, pos).astype(
                        np.int64 if dtype == "<i4" else np.float64))
                    pos += size * k
                trees.append(Tree(*arrays))
                counts.append((n0, n1))
        except (struct.error, ValueError):
            raise ModelError("truncated forest model file") from None
        if pos != len(data):
            raise ModelError("trailing bytes in forest model file")
        return cls(tuple(trees), D, config, seed, np.array(counts, dtype=np.int64).reshape(-1, 2))


def fit_balanced_forest(X, y, config=ForestConfig(), seed=0, n_jobs=None):
    """Grow ``config.n_trees`` trees on balanced bootstrap samples.

    Tree ``t`` draws all its randomness from ``SeedSequence([seed, t])`` so
    sequential and threaded training give the same forest.
    """
    config.validate()
    X, y = check_X_y(X, y)
    if seed < 0:
        raise ConfigError(f"forest seed must be non-negative, got {seed}")
    mtry = config.resolved_mtry(X.shape[1])
    if n_jobs in (None, 1):
        results = [_fit_one_tree(X, y, config, mtry, seed, t) for t in range(config.n_trees)]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_fit_one_tree)(X, y, config, mtry, seed, t) for t in range(config.n_trees)
        )
    trees = tuple(r[0] for r in results)
    counts = np.array([r[1] for r in results], dtype=np.int64)
    return ForestModel(trees, X.shape[1], config, int(seed), counts)


def predict_forest(m, X):
    return m.predict(X)


def feature_importance(m):
    """Mean impurity decrease per feature, normalised to sum to one.

    Each tree's decreases are normalised before averaging; a forest of
    single-leaf trees yields all zeros.
    """
    total = np.zeros(m.n_features)
    for tree in m.trees:
        per_tree = np.zeros(m.n_features)
        split = tree.feature >= 0
        np.add.at(per_tree, tree.feature[split], tree.gain[split])
        if per_tree.sum() > 0:
            total += per_tree / per_tree.sum()
    if total.sum() > 0:
        total /= total.sum()
    return total


# -- estimators ----------------------------------------------------------

class BalancedRidgeClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`fit_ridge`.

    Attributes
    ----------
    model_ : RidgeModel
    alpha_ : float
        Selected regularisation strength.
    """

    def __init__(self, lambdas=DEFAULT_LAMBDAS, random_state=0):
        self.lambdas = lambdas
        self.random_state = random_state

    def fit(self, X, y):
        self.model_ = fit_ridge(X, y, self.lambdas, self.random_state)
        self.alpha_ = self.model_.lam
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.model_.n_features
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)


class BalancedRandomForestClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`fit_balanced_forest`."""

    def __init__(self, n_trees=200, max_depth=None, min_leaf=1, mtry=None,
                 random_state=0, n_jobs=None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        config = ForestConfig(self.n_trees, self.max_depth, self.min_leaf, self.mtry)
        seed = 0 if self.random_state is None else int(self.random_state)
        self.model_ = fit_balanced_forest(X, y, config, seed, self.n_jobs)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.model_.n_features
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)

    @property
    def feature_importances_(self):
        check_is_fitted(self, "model_")
        return feature_importance(self.model_)
