"""Decision trees, bagged forests, and boosted stages, from first
principles on numpy.

One flat-array tree structure serves both jobs: classification trees
split on Gini impurity and keep per-node class counts; regression trees
split on variance and keep per-node means. Split search is vectorized
per candidate feature: sort the node's values once, then evaluate every
distinct-value boundary with cumulative class counts (or cumulative
sums), so no Python loop runs per threshold.

Tie-breaking is structural and deterministic: candidate features are
scanned in ascending index order and a split must *strictly* beat the
incumbent to replace it, so equal-quality splits resolve to the lowest
feature index and the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    DimensionMismatchError,
    EmptyInputError,
    MissingClassError,
    ValidationError,
)

LEAF = -1
_EPS = 1e-12


@dataclass
class DecisionTree:
    """Flat-array binary tree. feature[i] == LEAF marks node i a leaf.
    Rule at internal nodes: x[feature] <= threshold goes left.

    value rows are class counts (classification, shape (n_nodes, K)) or
    scalar predictions (regression, shape (n_nodes,)). n_node and
    impurity are kept for every node so impurity-decrease importances
    can be recomputed from a deserialized tree.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray
    impurity: np.ndarray
    task: str                      # "classify" | "regress"

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row, fully vectorized."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            active = f != LEAF
            if not active.any():
                return node
            f_safe = np.where(active, f, 0)
            go_left = X[np.arange(X.shape[0]), f_safe] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(active, nxt, node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class index per row (classification) or value (regression)."""
        leaves = self.apply(X)
        if self.task == "classify":
            return np.argmax(self.value[leaves], axis=1)
        return self.value[leaves]

    def leaf_values_at(self, leaves: np.ndarray) -> np.ndarray:
        return self.value[leaves]

    def importance(self, n_features: int) -> np.ndarray:
        """Unnormalized impurity-decrease importance: for every internal
        node, weighted parent impurity minus weighted child impurities,
        credited to the split feature. Weights are node fractions of
        this tree's root count.
        """
        imp = np.zeros(n_features)
        total = float(self.n_node[0])
        internal = np.flatnonzero(self.feature != LEAF)
        for i in internal:
            l, r = self.left[i], self.right[i]
            decrease = (self.n_node[i] * self.impurity[i]
                        - self.n_node[l] * self.impurity[l]
                        - self.n_node[r] * self.impurity[r]) / total
            imp[self.feature[i]] += decrease
        return imp

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_node": self.n_node.tolist(),
            "impurity": self.impurity.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_node=np.asarray(d["n_node"], dtype=np.int64),
            impurity=np.asarray(d["impurity"], dtype=np.float64),
            task=d["task"],
        )


def gini(counts: np.ndarray) -> float:
    """Gini impurity of a class-count vector."""
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _best_split_gini(Xf: np.ndarray, onehot: np.ndarray, min_leaf: int
                     ) -> tuple[float, float] | None:
    """Best (score, threshold) for one feature column over one node.

    score is the weighted child Gini, lower is better. Returns None when
    the column admits no split honoring min_leaf. Candidate boundaries
    sit between consecutive *distinct* sorted values; thresholds are
    midpoints.
    """
    n = Xf.shape[0]
    order = np.argsort(Xf, kind="stable")
    xs = Xf[order]
    cum = np.cumsum(onehot[order], axis=0)           # (n, K)
    boundary = np.flatnonzero(xs[:-1] < xs[1:])      # split after index i
    if boundary.size == 0:
        return None
    n_left = boundary + 1
    n_right = n - n_left
    ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    if not ok.any():
        return None
    boundary = boundary[ok]
    n_left = n_left[ok]
    n_right = n_right[ok]
    cl = cum[boundary]                               # left class counts
    cr = cum[-1] - cl
    gini_l = 1.0 - np.sum((cl / n_left[:, None]) ** 2, axis=1)
    gini_r = 1.0 - np.sum((cr / n_right[:, None]) ** 2, axis=1)
    score = (n_left * gini_l + n_right * gini_r) / n
    j = int(np.argmin(score))                        # first minimum wins
    thr = 0.5 * (xs[boundary[j]] + xs[boundary[j] + 1])
    return float(score[j]), float(thr)


def _best_split_var(Xf: np.ndarray, g: np.ndarray, min_leaf: int
                    ) -> tuple[float, float] | None:
    """Variance analogue of _best_split_gini; score is the weighted
    child variance (biased estimator, consistent with the node metric).
    """
    n = Xf.shape[0]
    order = np.argsort(Xf, kind="stable")
    xs = Xf[order]
    gs = g[order]
    boundary = np.flatnonzero(xs[:-1] < xs[1:])
    if boundary.size == 0:
        return None
    n_left = boundary + 1
    n_right = n - n_left
    ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    if not ok.any():
        return None
    boundary = boundary[ok]
    n_left = n_left[ok]
    n_right = n_right[ok]
    cs = np.cumsum(gs)
    cs2 = np.cumsum(gs * gs)
    sl, sl2 = cs[boundary], cs2[boundary]
    sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
    var_l = np.maximum(sl2 / n_left - (sl / n_left) ** 2, 0.0)
    var_r = np.maximum(sr2 / n_right - (sr / n_right) ** 2, 0.0)
    score = (n_left * var_l + n_right * var_r) / n
    j = int(np.argmin(score))
    thr = 0.5 * (xs[boundary[j]] + xs[boundary[j] + 1])
    return float(score[j]), float(thr)


class _TreeGrower:
    """Accumulates flat arrays during a depth-first recursive build."""

    def __init__(self, X, target, task, n_classes, max_depth,
                 min_samples_split, min_samples_leaf, max_features,
                 feature_pool, rng):
        self.X = X
        self.task = task
        self.max_depth = max_depth
        self.min_split = min_samples_split
        self.min_leaf = min_samples_leaf
        self.max_features = max_features
        self.pool = feature_pool
        self.rng = rng
        if task == "classify":
            self.onehot = np.eye(n_classes)[target]
            self.y = target
        else:
            self.g = target.astype(np.float64)
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list = []
        self.n_node: list[int] = []
        self.impurity: list[float] = []

    def _node_stats(self, idx):
        if self.task == "classify":
            counts = self.onehot[idx].sum(axis=0)
            return counts, gini(counts)
        vals = self.g[idx]
        mean = float(vals.mean())
        return mean, float(np.maximum(vals.var(), 0.0))

    def _alloc(self, value, n, imp):
        node_id = len(self.feature)
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        self.n_node.append(n)
        self.impurity.append(imp)
        return node_id

    def _candidates(self):
        if self.max_features is None or self.max_features >= self.pool.size:
            return self.pool
        chosen = self.rng.choice(self.pool, size=self.max_features, replace=False)
        return np.sort(chosen)

    def grow(self, idx, depth):
        value, imp = self._node_stats(idx)
        node_id = self._alloc(value, idx.size, imp)
        if (depth >= self.max_depth or idx.size < self.min_split
                or imp <= _EPS):
            return node_id
        best = None         # (score, feature, threshold)
        for f in self._candidates():
            Xf = self.X[idx, f]
            if self.task == "classify":
                cand = _best_split_gini(Xf, self.onehot[idx], self.min_leaf)
            else:
                cand = _best_split_var(Xf, self.g[idx], self.min_leaf)
            if cand is None:
                continue
            score, thr = cand
            if best is None or score < best[0]:
                best = (score, int(f), thr)
        if best is None or best[0] >= imp - _EPS:
            return node_id                      # no useful split
        _, f, thr = best
        mask = self.X[idx, f] <= thr
        left_id = self.grow(idx[mask], depth + 1)
        right_id = self.grow(idx[~mask], depth + 1)
        self.feature[node_id] = f
        self.threshold[node_id] = thr
        self.left[node_id] = left_id
        self.right[node_id] = right_id
        return node_id

    def finish(self) -> DecisionTree:
        return DecisionTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
            n_node=np.asarray(self.n_node, dtype=np.int64),
            impurity=np.asarray(self.impurity, dtype=np.float64),
            task=self.task,
        )


def build_tree(X: np.ndarray, target: np.ndarray, *, task: str,
               n_classes: int = 0, max_depth: int, min_samples_split: int = 2,
               min_samples_leaf: int = 1, max_features: int | None = None,
               feature_pool: np.ndarray | None = None,
               rng: np.random.Generator | None = None) -> DecisionTree:
    """Grow one tree.

    max_features draws a fresh candidate subset per split (forest
    style); feature_pool restricts the whole tree to a fixed column set
    (boosting style). Both default to every column.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("build_tree: X must be a non-empty 2-D array")
    if task not in ("classify", "regress"):
        raise ValidationError(f"unknown tree task {task!r}")
    if task == "classify" and n_classes < 2:
        raise ValidationError("classification tree needs n_classes >= 2")
    pool = np.arange(X.shape[1]) if feature_pool is None \
        else np.sort(np.asarray(feature_pool, dtype=np.int64))
    grower = _TreeGrower(X, np.asarray(target), task, n_classes, max_depth,
                         min_samples_split, min_samples_leaf, max_features,
                         pool, rng or np.random.default_rng(0))
    grower.grow(np.arange(X.shape[0]), 0)
    return grower.finish()


def _check_predict_input(X: np.ndarray, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatchError(f"expected 2-D features, got shape {X.shape}")
    if X.shape[1] != n_features:
        raise DimensionMismatchError(
            f"model was trained on {n_features} features, got {X.shape[1]}")
    if X.shape[0] == 0:
        raise EmptyInputError("no rows to predict")
    return X


def _check_training_labels(y: np.ndarray, class_order: tuple[int, ...]) -> None:
    present = set(np.unique(y).tolist())
    missing = [c for c in class_order if c not in present]
    if missing:
        raise MissingClassError(f"training data lacks class(es) {missing}")
    extra = present - set(class_order)
    if extra:
        raise ValidationError(f"labels outside the class order: {sorted(extra)}")


@dataclass
class RandomForestModel:
    """Bagged Gini trees with per-split feature subsampling and hard
    majority voting (prediction ties resolve to the lowest class index).
    """

    kind: str
    config: dict
    class_order: tuple[int, ...]
    n_features: int
    trees: list[DecisionTree]
    training_meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _check_predict_input(X, self.n_features)
        k = len(self.class_order)
        votes = np.zeros((X.shape[0], k), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            votes[rows, tree.predict(X)] += 1
        return np.argmax(votes, axis=1)

    def feature_importances(self) -> np.ndarray:
        """Mean impurity-decrease importance, normalized to sum to 1."""
        raw = np.zeros(self.n_features)
        for tree in self.trees:
            raw += tree.importance(self.n_features)
        raw /= max(len(self.trees), 1)
        total = raw.sum()
        return raw / total if total > 0 else raw


def mtry_default(n_features: int) -> int:
    """Per-split candidate count: floor of the square root."""
    return max(1, int(np.sqrt(n_features)))


def train_random_forest(config, X: np.ndarray, y: np.ndarray,
                        class_order: tuple[int, ...], seed: int
                        ) -> RandomForestModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_training_labels(y, class_order)
    p = config.params
    n = X.shape[0]
    k = len(class_order)
    mtry = mtry_default(X.shape[1])
    trees = []
    for child in np.random.SeedSequence(seed).spawn(int(p["n_estimators"])):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        trees.append(build_tree(
            X[boot], y[boot], task="classify", n_classes=k,
            max_depth=int(p["max_depth"]),
            min_samples_split=int(p["min_samples_split"]),
            min_samples_leaf=int(p["min_samples_leaf"]),
            max_features=mtry, rng=rng))
    return RandomForestModel(
        kind="random_forest", config=config.to_dict(),
        class_order=tuple(class_order), n_features=X.shape[1], trees=trees,
        training_meta={"n_rows": int(n), "mtry": mtry, "seed": int(seed)})


def _softmax(F: np.ndarray) -> np.ndarray:
    z = F - F.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class GradientBoostedTreesModel:
    """Stagewise additive model for multiclass log loss: each stage fits
    one variance-split regression tree per class to the softmax
    residuals, with leaf values from the per-leaf Newton step.
    """

    kind: str
    config: dict
    class_order: tuple[int, ...]
    n_features: int
    learning_rate: float
    stages: list[list[DecisionTree]]       # [stage][class]
    training_meta: dict = field(default_factory=dict)

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = _check_predict_input(X, self.n_features)
        F = np.zeros((X.shape[0], len(self.class_order)))
        for stage in self.stages:
            for ki, tree in enumerate(stage):
                F[:, ki] += self.learning_rate * tree.predict(X)
        return F

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_scores(X), axis=1)

    def feature_importances(self) -> np.ndarray:
        """Summed impurity-decrease importance over every stage tree,
        normalized to sum to 1.
        """
        raw = np.zeros(self.n_features)
        for stage in self.stages:
            for tree in stage:
                raw += tree.importance(self.n_features)
        total = raw.sum()
        return raw / total if total > 0 else raw


def _newton_leaf_values(tree: DecisionTree, X: np.ndarray, g: np.ndarray,
                        k_classes: int) -> None:
    """Replace regression-leaf means with the multiclass log-loss Newton
    step: (K-1)/K * sum(g) / sum(|g| * (1 - |g|)) per leaf.
    """
    leaves = tree.apply(X)
    new_value = tree.value.copy()
    for leaf in np.unique(leaves):
        gl = g[leaves == leaf]
        denom = float(np.sum(np.abs(gl) * (1.0 - np.abs(gl))))
        if denom < _EPS:
            new_value[leaf] = 0.0
        else:
            new_value[leaf] = (k_classes - 1.0) / k_classes \
                * float(gl.sum()) / denom
    tree.value = new_value


def train_gradient_boosted_trees(config, X: np.ndarray, y: np.ndarray,
                                 class_order: tuple[int, ...], seed: int
                                 ) -> GradientBoostedTreesModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_training_labels(y, class_order)
    p = config.params
    n, n_feat = X.shape
    k = len(class_order)
    lr = float(p["learning_rate"])
    n_sub = max(1, int(round(float(p["subsample"]) * n)))
    n_cols = max(1, int(round(float(p["colsample"]) * n_feat)))
    onehot = np.eye(k)[y]
    F = np.zeros((n, k))                        # zero raw-score init
    stages: list[list[DecisionTree]] = []
    seeds = np.random.SeedSequence(seed).spawn(int(p["n_estimators"]))
    for child in seeds:
        rng = np.random.default_rng(child)
        rows = np.sort(rng.permutation(n)[:n_sub])
        P = _softmax(F)
        G = onehot - P
        stage: list[DecisionTree] = []
        for ki in range(k):
            pool = np.sort(rng.permutation(n_feat)[:n_cols])
            tree = build_tree(
                X[rows], G[rows, ki], task="regress",
                max_depth=int(p["max_depth"]), min_samples_split=2,
                min_samples_leaf=1, feature_pool=pool, rng=rng)
            _newton_leaf_values(tree, X[rows], G[rows, ki], k)
            F[:, ki] += lr * tree.predict(X)
            stage.append(tree)
        stages.append(stage)
    return GradientBoostedTreesModel(
        kind="gradient_boosted_trees", config=config.to_dict(),
        class_order=tuple(class_order), n_features=n_feat,
        learning_rate=lr, stages=stages,
        training_meta={"n_rows": int(n), "n_stage_trees": len(stages) * k,
                       "seed": int(seed)})
