"""Self-contained random-forest classifier.

Bootstrap-bagged binary decision trees with Gini splits, majority-vote
prediction, out-of-bag error, and mean-decrease-in-impurity feature
importances.  Everything is deterministic given the config seed: per-tree
randomness is spawned from one seed sequence and trees are grown
depth-first in a fixed order.

Two stopping rules are supported and may be combined: ``max_depth`` caps
tree depth, ``max_splits`` caps the number of split nodes per tree (nodes
are split depth-first, left child first, until the budget runs out).

Vote ties resolve to ``tie_label``; the hole selector configures this as
"keep" while the map classifier configures it as "bad".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 20
    max_depth: int = 11
    min_leaf: int = 1
    n_feature_sub: int | None = None  # default: round(sqrt(d))
    max_splits: int | None = None
    tie_label: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_splits is not None and self.max_splits < 1:
            raise ValueError("max_splits must be >= 1 when set")
        if self.tie_label not in (0, 1):
            raise ValueError("tie_label must be 0 or 1")


@dataclass
class _Tree:
    """Flat node arrays; node 0 is the root.

    ``feature[i] == -1`` marks a leaf.  Internal nodes route
    ``x[feature] <= threshold`` to ``left`` and the rest to ``right``.
    ``counts[i]`` holds the class-0/class-1 training counts at the node.
    """

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    counts: list[list[int]] = field(default_factory=list)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append([0, 0])
        return len(self.feature) - 1

    def predict_one(self, x: np.ndarray, tie_label: int) -> int:
        i = 0
        while self.feature[i] != -1:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        c0, c1 = self.counts[i]
        if c0 == c1:
            return tie_label
        return int(c1 > c0)

    def predict_rows(self, X: np.ndarray, tie_label: int) -> np.ndarray:
        return np.array([self.predict_one(x, tie_label) for x in X], dtype=int)


def _gini(c0: float, c1: float) -> float:
    n = c0 + c1
    if n == 0:
        return 0.0
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - p0 * p0 - p1 * p1


def _best_split(X, y, rows, feature_ids, min_leaf):
    """Best (feature, threshold, gain, left_rows, right_rows) or None.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values of the feature within the node.  Gain is the unweighted impurity
    decrease n*imp - n_l*imp_l - n_r*imp_r (in sample counts).
    """
    n = rows.size
    total1 = int(y[rows].sum())
    total0 = n - total1
    node_imp = _gini(total0, total1)
    best = None
    best_score = -np.inf
    for f in feature_ids:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[rows][order]
        distinct = np.nonzero(np.diff(sv) > 0)[0]  # split after position i
        if distinct.size == 0:
            continue
        ones_prefix = np.cumsum(sy)
        n_left = distinct + 1
        n_right = n - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        n_left = n_left[valid]
        n_right = n_right[valid]
        pos = distinct[valid]
        left1 = ones_prefix[pos]
        left0 = n_left - left1
        right1 = total1 - left1
        right0 = n_right - right1
        imp_l = 1.0 - (left0 / n_left) ** 2 - (left1 / n_left) ** 2
        imp_r = 1.0 - (right0 / n_right) ** 2 - (right1 / n_right) ** 2
        scores = n * node_imp - n_left * imp_l - n_right * imp_r
        k = int(np.argmax(scores))
        if scores[k] > best_score + 1e-15:
            thr = 0.5 * (sv[pos[k]] + sv[pos[k] + 1])
            mask = vals <= thr
            best = (int(f), float(thr), float(scores[k]), rows[mask], rows[~mask])
            best_score = scores[k]
    return best


def _grow_tree(X, y, rows, cfg: ForestConfig, rng, importance_acc) -> _Tree:
    n_features = X.shape[1]
    k = cfg.n_feature_sub or max(1, round(np.sqrt(n_features)))
    k = min(k, n_features)
    tree = _Tree()
    splits_used = 0

    def build(node_rows, depth):
        nonlocal splits_used
        node = tree.add_node()
        n1 = int(y[node_rows].sum())
        n0 = node_rows.size - n1
        tree.counts[node] = [n0, n1]
        budget_left = cfg.max_splits is None or splits_used < cfg.max_splits
        if (
            depth >= cfg.max_depth
            or n0 == 0
            or n1 == 0
            or node_rows.size < 2 * cfg.min_leaf
            or not budget_left
        ):
            return node
        feature_ids = rng.choice(n_features, size=k, replace=False)
        found = _best_split(X, y, node_rows, feature_ids, cfg.min_leaf)
        if found is None:
            return node
        f, thr, gain, left_rows, right_rows = found
        splits_used += 1
        importance_acc[f] += gain
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = build(left_rows, depth + 1)
        tree.right[node] = build(right_rows, depth + 1)
        return node

    build(rows, 0)
    return tree


@dataclass
class TrainedForest:
    trees: list[_Tree]
    n_features: int
    config: ForestConfig
    oob_error: float
    importances: np.ndarray

    def predict(self, x: np.ndarray) -> tuple[int, float]:
        """Majority-vote label and the winning vote share."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n_features:
            raise ValueError(
                f"feature vector has {x.size} entries, forest expects {self.n_features}"
            )
        votes1 = sum(t.predict_one(x, self.config.tie_label) for t in self.trees)
        n = len(self.trees)
        votes0 = n - votes1
        if votes0 == votes1:
            return self.config.tie_label, 0.5
        label = int(votes1 > votes0)
        return label, max(votes0, votes1) / n

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.array([self.predict(x)[0] for x in X], dtype=int)


def train(X: np.ndarray, y: np.ndarray, cfg: ForestConfig) -> TrainedForest:
    """Train a bagged forest; deterministic for a given (data, config)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n, d) with one label per row")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two training rows")
    classes = np.unique(y)
    if not np.isin(classes, [0, 1]).all():
        raise ValueError("labels must be 0/1")
    if classes.size < 2:
        raise ValueError("training data contains a single class")

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    importance_acc = np.zeros(d)
    trees: list[_Tree] = []
    oob_votes = np.zeros((n, 2), dtype=int)
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(seeds[t])
        sample = rng.integers(0, n, size=n)
        tree = _grow_tree(X, y, np.asarray(sample), cfg, rng, importance_acc)
        trees.append(tree)
        oob_rows = np.setdiff1d(np.arange(n), sample)
        if oob_rows.size:
            preds = tree.predict_rows(X[oob_rows], cfg.tie_label)
            oob_votes[oob_rows, preds] += 1

    voted = oob_votes.sum(axis=1) > 0
    if voted.any():
        v = oob_votes[voted]
        pred = np.where(v[:, 1] > v[:, 0], 1, np.where(v[:, 0] > v[:, 1], 0, cfg.tie_label))
        oob_error = float(np.mean(pred != y[voted]))
    else:
        oob_error = float("nan")

    total = importance_acc.sum()
    importances = importance_acc / total if total > 0 else importance_acc
    return TrainedForest(
        trees=trees,
        n_features=d,
        config=cfg,
        oob_error=oob_error,
        importances=importances,
    )


def tune_oob(
    X: np.ndarray, y: np.ndarray, grid: list[tuple[int, int]], base: ForestConfig | None = None
) -> tuple[ForestConfig, list[tuple[int, int, float]]]:
    """Train once per (n_trees, max_depth) grid point and pick the OOB argmin.

    All grid points share the base config's seed.  Ties prefer fewer trees,
    then shallower depth.  Returns the winning config and the full surface
    as (n_trees, max_depth, oob_error) tuples in grid order.
    """
    if not grid:
        raise ValueError("tune_oob needs a non-empty grid")
    base = base or ForestConfig()
    surface = []
    for n_trees, max_depth in grid:
        cfg = replace(base, n_trees=n_trees, max_depth=max_depth)
        model = train(X, y, cfg)
        surface.append((n_trees, max_depth, model.oob_error))
    best = min(surface, key=lambda s: (s[2], s[0], s[1]))
    return replace(base, n_trees=best[0], max_depth=best[1]), surface


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_forest(model: TrainedForest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "n_features": model.n_features,
        "config": {
            "n_trees": model.config.n_trees,
            "max_depth": model.config.max_depth,
            "min_leaf": model.config.min_leaf,
            "n_feature_sub": model.config.n_feature_sub,
            "max_splits": model.config.max_splits,
            "tie_label": model.config.tie_label,
            "seed": model.config.seed,
        },
        "oob_error": model.oob_error,
        "importances": [float(v) for v in model.importances],
        "trees": [
            {
                "feature": t.feature,
                "threshold": t.threshold,
                "left": t.left,
                "right": t.right,
                "counts": t.counts,
            }
            for t in model.trees
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_forest(path) -> TrainedForest:
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(
            f"model file format {version!r} not supported (expected {MODEL_FORMAT_VERSION})"
        )
    cfg = ForestConfig(**payload["config"])
    trees = [
        _Tree(
            feature=t["feature"],
            threshold=t["threshold"],
            left=t["left"],
            right=t["right"],
            counts=t["counts"],
        )
        for t in payload["trees"]
    ]
    return TrainedForest(
        trees=trees,
        n_features=payload["n_features"],
        config=cfg,
        oob_error=payload["oob_error"],
        importances=np.array(payload["importances"]),
    )
