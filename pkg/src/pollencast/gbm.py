"""Gradient-boosted regression trees with squared-error loss, from scratch.

Stagewise boosting: each tree fits the current residuals with greedy CART
splits chosen by variance reduction.  Candidate thresholds sit at midpoints
between consecutive distinct sorted values; ties go to the lowest feature
index, then the smallest threshold.

Determinism is part of the contract: training rows are brought into a
canonical order before fitting so the resulting model is bit-identical
under any permutation of the input rows, and serialized models round-trip
losslessly through JSON.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    InvalidRecordError,
    LengthMismatchError,
    NonFiniteError,
    TooFewRowsError,
    WrongFeatureCountError,
)

try:
    from numba import njit

    ACCELERATED = True
except ImportError:  # numba is optional; the numpy path is the reference
    ACCELERATED = False

SERIALIZATION_FORMAT = "gbm-json-v1"


@dataclass(frozen=True)
class GBMConfig:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.05
    min_samples_leaf: int = 5
    subsample_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise InvalidRecordError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise InvalidRecordError("max_depth must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise InvalidRecordError("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise InvalidRecordError("min_samples_leaf must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise InvalidRecordError("subsample_fraction must be in (0, 1]")


@dataclass(frozen=True)
class TreeNode:
    """Either a split (feature, threshold, left, right) or a leaf (value).

    Split rule: rows with ``x[feature] <= threshold`` go left.
    """

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None

    def __post_init__(self) -> None:
        if self.is_leaf:
            if self.value is None:
                raise InvalidRecordError("leaf node needs a value")
        else:
            if self.left is None or self.right is None or self.threshold is None:
                raise InvalidRecordError("split node needs threshold and children")
            if not np.isfinite(self.threshold):
                raise NonFiniteError("split threshold must be finite")

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def apply(self, x: np.ndarray) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    def apply_batch(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.float64)
        stack = [(self, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            if node.is_leaf:
                out[rows] = node.value
            else:
                goes_left = X[rows, node.feature] <= node.threshold
                stack.append((node.left, rows[goes_left]))
                stack.append((node.right, rows[~goes_left]))
        return out

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


@dataclass(frozen=True)
class GBMModel:
    base_prediction: float
    trees: tuple[TreeNode, ...]
    learning_rate: float
    feature_count: int
    config: GBMConfig
    catalog_version: str = ""


class FitResult(NamedTuple):
    model: GBMModel
    curve: np.ndarray  # training MSE before any tree, then after each tree


def _validate_matrix(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise WrongFeatureCountError(f"X must be 2-D, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise LengthMismatchError(
            f"y length {y.shape} does not match {X.shape[0]} rows"
        )
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise NonFiniteError("training data contains non-finite values")
    return X, y


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order independent of input permutation: sort by all columns, then y."""
    keys = tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1))
    return np.lexsort((y,) + keys)


def _best_splits(
    V: np.ndarray, R: np.ndarray, node_mean: float, min_leaf: int
) -> tuple[np.ndarray, np.ndarray]:
    """Best split gain and position for every feature of one node.

    ``V`` and ``R`` are (features, k) matrices of values and residuals, each
    row in that feature's ascending value order.  Gain is the SSE reduction
    of splitting after position i; positions failing the distinct-value or
    min_leaf constraints get -inf.
    """
    k = V.shape[1]
    centered = R - node_mean
    csum = np.cumsum(centered, axis=1)
    total = csum[:, -1:]
    n_left = np.arange(1, k, dtype=np.float64)
    n_right = k - n_left
    s_left = csum[:, :-1]
    s_right = total - s_left
    gain = s_left**2 / n_left + s_right**2 / n_right - total**2 / k
    valid = (V[:, :-1] < V[:, 1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    pos = np.argmax(gain, axis=1)
    return gain[np.arange(V.shape[0]), pos], pos


if ACCELERATED:

    @njit(cache=True)
    def _split_kernel(XT, residual, node_order, node_mean, min_leaf):
        """Best (feature, position, gain) of one node, no temporaries.

        ``XT`` is (features, rows).  Mirrors the numpy path exactly:
        sequential left-to-right accumulation and the same per-position
        gain expression, so both routes produce bit-identical trees.
        """
        n_features, k = node_order.shape
        best_f = -1
        best_pos = -1
        best_gain = -np.inf
        for f in range(n_features):
            total = 0.0
            for i in range(k):
                total += residual[node_order[f, i]] - node_mean
            feat_gain = -np.inf
            feat_pos = -1
            s_left = 0.0
            for i in range(k - 1):
                row = node_order[f, i]
                s_left += residual[row] - node_mean
                if i + 1 < min_leaf or k - i - 1 < min_leaf:
                    continue
                if not XT[f, row] < XT[f, node_order[f, i + 1]]:
                    continue
                n_left = float(i + 1)
                n_right = float(k - i - 1)
                s_right = total - s_left
                gain = (
                    s_left**2 / n_left + s_right**2 / n_right - total**2 / k
                )
                if gain > feat_gain:
                    feat_gain = gain
                    feat_pos = i
            if feat_gain > best_gain:
                best_gain = feat_gain
                best_f = f
                best_pos = feat_pos
        return best_f, best_pos, best_gain

    @njit(cache=True)
    def _partition_kernel(node_order, in_left, k_left):
        n_features, k = node_order.shape
        left = np.empty((n_features, k_left), dtype=np.int64)
        right = np.empty((n_features, k - k_left), dtype=np.int64)
        for f in range(n_features):
            li = 0
            ri = 0
            for i in range(k):
                row = node_order[f, i]
                if in_left[row]:
                    left[f, li] = row
                    li += 1
                else:
                    right[f, ri] = row
                    ri += 1
        return left, right


def split_search(
    values: np.ndarray, targets: np.ndarray, min_leaf: int = 1
) -> tuple[float, float] | None:
    """Best (threshold, gain) for one feature, or None when no legal split.

    Thresholds are midpoints between consecutive distinct sorted values;
    gain is the variance-reduction SSE gain; equal gains resolve to the
    smallest threshold.
    """
    values = np.asarray(values, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if values.shape != targets.shape or values.ndim != 1:
        raise LengthMismatchError(
            f"values {values.shape} and targets {targets.shape} must match"
        )
    k = values.size
    if k < 2 or np.all(targets == targets[0]):
        return None
    order = np.lexsort((targets, values))
    v = values[order]
    r = targets[order]
    gains, pos = _best_splits(v[None, :], r[None, :], float(r.mean()), min_leaf)
    if not np.isfinite(gains[0]) or gains[0] <= 0.0:
        return None
    i = int(pos[0])
    lo, hi = v[i], v[i + 1]
    thr = (lo + hi) / 2.0
    if thr >= hi:  # adjacent floats: midpoint may round up to the right value
        thr = lo
    return float(thr), float(gains[0])


class _TreeBuilder:
    """Grows one tree on presorted per-feature row orders."""

    def __init__(
        self,
        X: np.ndarray,
        XT: np.ndarray,
        residual: np.ndarray,
        min_leaf: int,
        max_depth: int,
    ) -> None:
        self.X = X
        self.XT = XT  # (features, rows) contiguous copy for the fast kernel
        self.residual = residual
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.n_features = X.shape[1]
        self._col = np.arange(self.n_features)[:, None]
        # (rows, value) per leaf, for the fast residual-update path
        self.leaves: list[tuple[np.ndarray, float]] = []

    def _search(self, node_order: np.ndarray, value: float) -> tuple[int, int, float]:
        if ACCELERATED:
            return _split_kernel(
                self.XT, self.residual, node_order, value, self.min_leaf
            )
        V = self.X[node_order, self._col]
        R = self.residual[node_order]
        gains, pos = _best_splits(V, R, value, self.min_leaf)
        f = int(np.argmax(gains))
        if not np.isfinite(gains[f]):
            return -1, -1, -np.inf
        return f, int(pos[f]), float(gains[f])

    def _partition(
        self, node_order: np.ndarray, in_left: np.ndarray, k_left: int
    ) -> tuple[np.ndarray, np.ndarray]:
        if ACCELERATED:
            return _partition_kernel(node_order, in_left, k_left)
        mask = in_left[node_order]
        k = node_order.shape[1]
        left = node_order[mask].reshape(self.n_features, k_left)
        right = node_order[~mask].reshape(self.n_features, k - k_left)
        return left, right

    def build(self, node_order: np.ndarray, depth: int) -> TreeNode:
        rows = node_order[0]
        res = self.residual[rows]
        value = float(res.mean())
        k = rows.size
        if (
            depth >= self.max_depth
            or k < 2 * self.min_leaf
            or bool(np.all(res == res[0]))
        ):
            return self._leaf(rows, value)

        f, i, gain = self._search(node_order, value)
        if f < 0 or not np.isfinite(gain) or gain <= 0.0:
            return self._leaf(rows, value)
        lo = self.XT[f, node_order[f, i]]
        hi = self.XT[f, node_order[f, i + 1]]
        thr = (lo + hi) / 2.0
        if thr >= hi:
            thr = lo

        in_left = np.zeros(self.X.shape[0], dtype=bool)
        in_left[node_order[f, : i + 1]] = True
        left_order, right_order = self._partition(node_order, in_left, i + 1)
        return TreeNode(
            feature=f,
            threshold=float(thr),
            left=self.build(left_order, depth + 1),
            right=self.build(right_order, depth + 1),
        )

    def _leaf(self, rows: np.ndarray, value: float) -> TreeNode:
        self.leaves.append((rows, value))
        return TreeNode(value=value)


def fit(X: np.ndarray, y: np.ndarray, cfg: GBMConfig | None = None) -> FitResult:
    """Train a boosted ensemble; returns the model and its training curve.

    ``curve[0]`` is the MSE of the base prediction alone, ``curve[m]`` the
    MSE after m trees; with full subsampling the curve never increases.
    Constant targets are legal and produce a model that always predicts
    that constant.
    """
    cfg = cfg or GBMConfig()
    X, y = _validate_matrix(X, y)
    n = X.shape[0]
    min_rows = max(2 * cfg.min_samples_leaf, 2)
    if n < min_rows:
        raise TooFewRowsError(f"need at least {min_rows} rows, got {n}")

    order = _canonical_order(X, y)
    X = np.ascontiguousarray(X[order])
    y = y[order]

    base = float(y.mean())
    residual = y - base
    XT = np.ascontiguousarray(X.T)
    sorted_by_feature = np.ascontiguousarray(
        np.argsort(X, axis=0, kind="stable").T  # (features, n)
    )

    rng = np.random.default_rng(cfg.seed)
    subsample = cfg.subsample_fraction < 1.0
    m_rows = max(2 * cfg.min_samples_leaf, int(cfg.subsample_fraction * n))

    curve = np.empty(cfg.n_trees + 1)
    curve[0] = float(np.mean(residual**2))
    trees: list[TreeNode] = []
    for _ in range(cfg.n_trees):
        builder = _TreeBuilder(X, XT, residual, cfg.min_samples_leaf, cfg.max_depth)
        if subsample:
            chosen = rng.choice(n, size=min(m_rows, n), replace=False)
            in_sub = np.zeros(n, dtype=bool)
            in_sub[chosen] = True
            root = sorted_by_feature[in_sub[sorted_by_feature]].reshape(
                X.shape[1], int(in_sub.sum())
            )
        else:
            root = sorted_by_feature
        tree = builder.build(root, depth=0)
        if subsample:
            residual -= cfg.learning_rate * tree.apply_batch(X)
        else:
            for rows, value in builder.leaves:
                residual[rows] -= cfg.learning_rate * value
        trees.append(tree)
        curve[len(trees)] = float(np.mean(residual**2))

    model = GBMModel(
        base_prediction=base,
        trees=tuple(trees),
        learning_rate=cfg.learning_rate,
        feature_count=X.shape[1],
        config=cfg,
    )
    return FitResult(model=model, curve=curve)


def predict(model: GBMModel, x: np.ndarray) -> float:
    """Prediction for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.feature_count,):
        raise WrongFeatureCountError(
            f"expected {model.feature_count} features, got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise NonFiniteError("feature vector contains non-finite values")
    acc = sum(tree.apply(x) for tree in model.trees)
    return model.base_prediction + model.learning_rate * acc


def predict_batch(model: GBMModel, X: np.ndarray) -> np.ndarray:
    """Predictions for a matrix of rows; equals row-wise :func:`predict`."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise WrongFeatureCountError(
            f"expected (rows, {model.feature_count}), got shape {X.shape}"
        )
    if not np.isfinite(X).all():
        raise NonFiniteError("feature matrix contains non-finite values")
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for tree in model.trees:
        acc += tree.apply_batch(X)
    return model.base_prediction + model.learning_rate * acc


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _node_to_obj(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_obj(node.left),
        "right": _node_to_obj(node.right),
    }


def _node_from_obj(obj: dict) -> TreeNode:
    if "value" in obj:
        return TreeNode(value=float(obj["value"]))
    return TreeNode(
        feature=int(obj["feature"]),
        threshold=float(obj["threshold"]),
        left=_node_from_obj(obj["left"]),
        right=_node_from_obj(obj["right"]),
    )


def to_json(model: GBMModel) -> str:
    """Lossless, versioned JSON form; stable bytes for identical models."""
    doc = {
        "format": SERIALIZATION_FORMAT,
        "config": asdict(model.config),
        "base_prediction": model.base_prediction,
        "learning_rate": model.learning_rate,
        "feature_count": model.feature_count,
        "catalog_version": model.catalog_version,
        "trees": [_node_to_obj(t) for t in model.trees],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def from_json(text: str) -> GBMModel:
    doc = json.loads(text)
    if doc.get("format") != SERIALIZATION_FORMAT:
        raise InvalidRecordError(
            f"unsupported model format {doc.get('format')!r}"
        )
    return GBMModel(
        base_prediction=float(doc["base_prediction"]),
        trees=tuple(_node_from_obj(o) for o in doc["trees"]),
        learning_rate=float(doc["learning_rate"]),
        feature_count=int(doc["feature_count"]),
        config=GBMConfig(**doc["config"]),
        catalog_version=doc["catalog_version"],
    )
