"""Binary stress detector: a bagged ensemble of depth-limited decision trees.

Trees use axis-aligned splits chosen by Gini impurity over midpoint
candidates. The ensemble's raw score is the fraction of trees voting for
class 1, which downstream modules treat as the uncertainty input. Models are
immutable values; retraining builds a new model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from numba import njit

from .hrv import FEATURE_NAMES, FeatureVector

__all__ = [
    "StressLevel",
    "LabelScheme",
    "DEFAULT_SCHEME",
    "ForestConfig",
    "Tree",
    "ForestModel",
    "map_label",
    "train",
    "predict_raw",
    "predict",
    "evaluate_recall",
    "save_model",
    "load_model",
]


class StressLevel(IntEnum):
    NOT_AT_ALL = 0
    A_LITTLE_BIT = 1
    SOME = 2
    A_LOT = 3
    EXTREMELY = 4


@dataclass(frozen=True)
class LabelScheme:
    """Mapping from 5-level reports to binary classes; unmapped levels drop."""

    negative_set: frozenset
    positive_set: frozenset

    def __post_init__(self):
        object.__setattr__(self, "negative_set", frozenset(int(v) for v in self.negative_set))
        object.__setattr__(self, "positive_set", frozenset(int(v) for v in self.positive_set))
        if not self.negative_set or not self.positive_set:
            raise ValueError("both label sets must be non-empty")
        if self.negative_set & self.positive_set:
            raise ValueError("label sets must be disjoint")
        valid = {int(lv) for lv in StressLevel}
        if (self.negative_set | self.positive_set) - valid:
            raise ValueError("label sets may only contain levels 0..4")


DEFAULT_SCHEME = LabelScheme(negative_set=frozenset({0, 1, 2}), positive_set=frozenset({3, 4}))


def map_label(level: int, scheme: LabelScheme = DEFAULT_SCHEME) -> int | None:
    """Return 1/0 for mapped levels, None for levels the scheme drops."""
    level = int(level)
    if level in scheme.positive_set:
        return 1
    if level in scheme.negative_set:
        return 0
    return None


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    max_depth: int = 5
    min_samples_split: int = 2
    features_per_split: int | None = None  # None: ceil(sqrt(n_features))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")


@dataclass(frozen=True)
class Tree:
    """Flat-array decision tree; feature < 0 marks a leaf storing a class."""

    feature: np.ndarray  # (n_nodes,) int, -1 at leaves
    threshold: np.ndarray  # (n_nodes,) float, nan at leaves
    left: np.ndarray  # (n_nodes,) int child index, -1 at leaves
    right: np.ndarray
    leaf_class: np.ndarray  # (n_nodes,) int, -1 at internal nodes

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[idx]
            internal = feat >= 0
            if not internal.any():
                return self.leaf_class[idx]
            go_left = np.zeros_like(internal)
            rows = np.nonzero(internal)[0]
            go_left[rows] = X[rows, feat[rows]] <= self.threshold[idx[rows]]
            idx = np.where(internal, np.where(go_left, self.left[idx], self.right[idx]), idx)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    feature_count: int
    decision_threshold: float = 0.5
    config: ForestConfig = field(default_factory=ForestConfig)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@njit(cache=True)
def _gini_split_kernel(X, y, idx, feats):
    """Best (feature, midpoint) by weighted child Gini over the idx subset.

    Candidates are midpoints between consecutive distinct sorted values.
    Ties keep the first candidate in feats order, then the lowest threshold.
    Returns (feature, threshold, weighted_impurity); feature -1 = unsplittable.
    """
    n = idx.shape[0]
    total_ones = 0
    for i in range(n):
        total_ones += y[idx[i]]
    best_w = np.inf
    best_f = -1
    best_t = 0.0
    x = np.empty(n)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for i in range(n):
            x[i] = X[idx[i], f]
        order = np.argsort(x)
        feat_w = np.inf
        feat_t = 0.0
        ones_left = 0
        for i in range(n - 1):
            ones_left += y[idx[order[i]]]
            xv = x[order[i]]
            xv_next = x[order[i + 1]]
            if xv == xv_next:
                continue
            n_left = i + 1
            n_right = n - n_left
            p1l = ones_left / n_left
            p1r = (total_ones - ones_left) / n_right
            gini_l = 1.0 - p1l * p1l - (1.0 - p1l) * (1.0 - p1l)
            gini_r = 1.0 - p1r * p1r - (1.0 - p1r) * (1.0 - p1r)
            w = (n_left * gini_l + n_right * gini_r) / n
            if w < feat_w:
                feat_w = w
                feat_t = 0.5 * (xv + xv_next)
        if feat_w < best_w - 1e-15:
            best_w = feat_w
            best_f = f
            best_t = feat_t
    return best_f, best_t, best_w


def _gini_best_split(X, y, feature_ids):
    """Best split over the full sample set; None when unsplittable."""
    idx = np.arange(X.shape[0], dtype=np.int64)
    f, t, w = _gini_split_kernel(X, y, idx, np.asarray(feature_ids, dtype=np.int64))
    if f < 0:
        return None
    return w, int(f), float(t)


def _grow_tree(X, y, cfg: ForestConfig, k_features: int, rng: np.random.Generator) -> Tree:
    feature, threshold, left, right, leaf_class = [], [], [], [], []

    def leaf(node_y) -> int:
        i = len(feature)
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        ones = int(node_y.sum())
        # majority vote; ties go to class 0
        leaf_class.append(1 if ones * 2 > node_y.size else 0)
        return i

    def grow(idx, depth) -> int:
        node_y = y[idx]
        if (
            depth >= cfg.max_depth
            or idx.size < cfg.min_samples_split
            or node_y.min() == node_y.max()
        ):
            return leaf(node_y)
        feats = rng.permutation(X.shape[1])[:k_features]
        split = _gini_best_split(X[idx], node_y, feats)
        if split is None:
            return leaf(node_y)
        _, f, thr = split
        mask = X[idx, f] <= thr
        i = len(feature)
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        leaf_class.append(-1)
        left[i] = grow(idx[mask], depth + 1)
        right[i] = grow(idx[~mask], depth + 1)
        return i

    # root must be node 0: reserve ordering by growing from the full index set
    grow(np.arange(X.shape[0]), 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        leaf_class=np.asarray(leaf_class, dtype=np.int64),
    )


def _as_matrix(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2:
        X, y = dataset
        return np.asarray(X, dtype=float), np.asarray(y, dtype=np.int64)
    X = np.array([fv.as_array() if isinstance(fv, FeatureVector) else fv for fv, _ in dataset])
    y = np.array([int(lab) for _, lab in dataset], dtype=np.int64)
    return X.astype(float), y


def train(dataset, config: ForestConfig = ForestConfig()) -> ForestModel:
    """Fit a forest on (FeatureVector, label) pairs or an (X, y) tuple.

    Deterministic given config.seed. Raises ValueError when a class is absent.
    """
    X, y = _as_matrix(dataset)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("dataset must be non-empty with matching features and labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    for cls in (0, 1):
        if not np.any(y == cls):
            raise ValueError(f"training data contains no instances of class {cls}")

    n, d = X.shape
    k = config.features_per_split or math.ceil(math.sqrt(d))
    k = min(k, d)

    trees = []
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        if config.bootstrap:
            idx = rng.integers(0, n, size=n)
            Xb, yb = X[idx], y[idx]
            if yb.min() == yb.max():  # degenerate resample; fall back to full data
                Xb, yb = X, y
        else:
            Xb, yb = X, y
        trees.append(_grow_tree(Xb, yb, config, k, rng))

    return ForestModel(trees=tuple(trees), feature_count=d, config=config)


def _as_feature_rows(x, feature_count: int) -> tuple[np.ndarray, bool]:
    if isinstance(x, FeatureVector):
        return x.as_array()[None, :], True
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == feature_count:
        return arr, False
    raise ValueError(f"expected {feature_count} features per row, got shape {arr.shape}")


def predict_raw(model: ForestModel, x):
    """Vote fraction for class 1 in [0, 1]; scalar for one row, array for many."""
    rows, single = _as_feature_rows(x, model.feature_count)
    votes = np.zeros(rows.shape[0], dtype=float)
    for tree in model.trees:
        votes += tree.predict(rows)
    score = votes / model.n_trees
    return float(score[0]) if single else score


def predict(model: ForestModel, x):
    """Binary decision: score >= decision_threshold maps to class 1."""
    score = predict_raw(model, x)
    if isinstance(score, float):
        return int(score >= model.decision_threshold)
    return (score >= model.decision_threshold).astype(np.int64)


def evaluate_recall(model: ForestModel, test) -> float:
    """Recall on the positive (stressed) class: TP / (TP + FN)."""
    X, y = _as_matrix(test)
    positives = y == 1
    if not positives.any():
        raise ValueError("recall is undefined: test set has no positive instances")
    pred = predict(model, X)
    tp = int(np.sum((pred == 1) & positives))
    return tp / int(positives.sum())


MODEL_FORMAT = "stressloop-forest-v1"


def save_model(model: ForestModel, path) -> None:
    """Write a model as documented JSON (format stressloop-forest-v1)."""
    payload = {
        "format": MODEL_FORMAT,
        "feature_count": model.feature_count,
        "feature_names": list(FEATURE_NAMES) if model.feature_count == len(FEATURE_NAMES) else None,
        "decision_threshold": model.decision_threshold,
        "config": {
            "n_trees": model.config.n_trees,
            "max_depth": model.config.max_depth,
            "min_samples_split": model.config.min_samples_split,
            "features_per_split": model.config.features_per_split,
            "bootstrap": model.config.bootstrap,
            "seed": model.config.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [None if math.isnan(v) else v for v in t.threshold.tolist()],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "leaf_class": t.leaf_class.tolist(),
            }
            for t in model.trees
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_model(path) -> ForestModel:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format: {payload.get('format')!r}")
    trees = tuple(
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int64),
            threshold=np.asarray(
                [math.nan if v is None else v for v in t["threshold"]], dtype=float
            ),
            left=np.asarray(t["left"], dtype=np.int64),
            right=np.asarray(t["right"], dtype=np.int64),
            leaf_class=np.asarray(t["leaf_class"], dtype=np.int64),
        )
        for t in payload["trees"]
    )
    cfg = ForestConfig(**payload["config"])
    return ForestModel(
        trees=trees,
        feature_count=int(payload["feature_count"]),
        decision_threshold=float(payload["decision_threshold"]),
        config=cfg,
    )
