"""Second-order gradient boosted trees with log-loss and early stopping.

Trees are grown greedily to a depth cap, maximizing the usual second-order
gain with an L2 leaf penalty; leaf values are Newton steps
sum(residual) / (sum(hessian) + l2). Split search runs on histograms whose
edges are the column's distinct values when few, else quantile boundaries,
so fits are deterministic and split choice depends only on value ranks.
Each split node records the fraction of training rows routed left, which
the importance module uses to neutralize features without retraining.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import DataError
from .logistic import _sigmoid
from .metrics import log_loss

GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GbmConfig:
    learning_rate: float = 0.1
    iterations: int = 500
    max_depth: int = 6
    subsample: float = 1.0
    l2_leaf: float = 1.0
    early_stopping_patience: int = 50
    seed: int = 0
    max_bins: int = 256

    def __post_init__(self):
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if self.iterations < 1 or self.max_depth < 1:
            raise ValueError("iterations and max_depth must be >= 1")
        if self.learning_rate <= 0 or self.l2_leaf < 0:
            raise ValueError("learning_rate must be > 0 and l2_leaf >= 0")


@dataclass
class TreeNode:
    feature: int = -1              # -1 marks a leaf
    threshold: float = float("nan")
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    left_fraction: float = 0.5     # training traffic share routed left
    value: float = 0.0             # leaf value (unscaled by learning rate)

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_dict(self) -> dict[str, Any]:
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left_fraction": self.left_fraction,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TreeNode":
        if "value" in d:
            return cls(value=float(d["value"]))
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left_fraction=float(d["left_fraction"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )

    def features_used(self, into: set[int] | None = None) -> set[int]:
        into = set() if into is None else into
        if not self.is_leaf:
            into.add(self.feature)
            self.left.features_used(into)
            self.right.features_used(into)
        return into


def tree_margin(node: TreeNode, x: np.ndarray) -> np.ndarray:
    out = np.empty(len(x))
    _route(node, x, np.arange(len(x)), out)
    return out


def _route(node: TreeNode, x: np.ndarray, idx: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[idx] = node.value
        return
    go_left = x[idx, node.feature] <= node.threshold
    _route(node.left, x, idx[go_left], out)
    _route(node.right, x, idx[~go_left], out)


@dataclass
class GbmModel:
    feature_names: list[str]
    trees: list[TreeNode]
    base_score: float
    best_iteration: int
    config: GbmConfig
    train_losses: list[float] = field(default_factory=list)
    valid_losses: list[float] | None = None

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1] != len(self.feature_names):
            raise DataError(
                f"model expects {len(self.feature_names)} columns, got {x.shape[1]}"
            )
        margin = np.full(len(x), self.base_score)
        for tree in self.trees[: self.best_iteration]:
            margin += self.config.learning_rate * tree_margin(tree, x)
        return margin

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(x))


def _bin_columns(x: np.ndarray, max_bins: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-column upper-edge arrays plus the binned matrix.

    Bin b holds values v with edges[b-1] < v <= edges[b]; the last edge is the
    column maximum so every training value lands in a bin.
    """
    n, p = x.shape
    edges_per_col: list[np.ndarray] = []
    binned = np.empty((n, p), dtype=np.int32)
    for j in range(p):
        col = x[:, j]
        edges = np.unique(col)
        if len(edges) > max_bins:
            qs = np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:])
            edges = np.unique(qs)
        edges_per_col.append(edges)
        binned[:, j] = np.searchsorted(edges, col, side="left")
    return edges_per_col, binned


class _TreeGrower:
    def __init__(
        self,
        binned: np.ndarray,
        edges: list[np.ndarray],
        max_depth: int,
        l2_leaf: float,
    ):
        self.binned = binned
        self.edges = edges
        self.max_depth = max_depth
        self.l2 = l2_leaf
        self.p = binned.shape[1]
        self.n_bins = max(len(e) for e in edges)
        # column offsets for composite histogram indices
        self._col_offsets = np.arange(self.p, dtype=np.int64) * self.n_bins

    def grow(self, residual: np.ndarray, hessian: np.ndarray, rows: np.ndarray) -> TreeNode:
        self.residual = residual
        self.hessian = hessian
        return self._build(rows, depth=0)

    def _histograms(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = (self.binned[rows] + self._col_offsets).ravel()
        size = self.p * self.n_bins
        g = np.bincount(idx, weights=np.repeat(self.residual[rows], self.p), minlength=size)
        h = np.bincount(idx, weights=np.repeat(self.hessian[rows], self.p), minlength=size)
        c = np.bincount(idx, minlength=size)
        shape = (self.p, self.n_bins)
        return g.reshape(shape), h.reshape(shape), c.reshape(shape)

    def _build(self, rows: np.ndarray, depth: int) -> TreeNode:
        g_sum = float(self.residual[rows].sum())
        h_sum = float(self.hessian[rows].sum())
        leaf = TreeNode(value=g_sum / (h_sum + self.l2))
        if depth >= self.max_depth or len(rows) < 2:
            return leaf

        g, h, c = self._histograms(rows)
        gl = np.cumsum(g, axis=1)
        hl = np.cumsum(h, axis=1)
        cl = np.cumsum(c, axis=1)
        gr = g_sum - gl
        hr = h_sum - hl
        cr = len(rows) - cl
        parent = g_sum**2 / (h_sum + self.l2)
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = gl**2 / (hl + self.l2) + gr**2 / (hr + self.l2) - parent
        gain[(cl < 1) | (cr < 1)] = -np.inf
        flat = int(np.argmax(gain))      # first max: lowest feature, then lowest bin
        feature, split_bin = divmod(flat, self.n_bins)
        if gain[feature, split_bin] <= GAIN_EPS:
            return leaf

        go_left = self.binned[rows, feature] <= split_bin
        left_rows, right_rows = rows[go_left], rows[~go_left]
        return TreeNode(
            feature=feature,
            threshold=float(self.edges[feature][split_bin]),
            left=self._build(left_rows, depth + 1),
            right=self._build(right_rows, depth + 1),
            left_fraction=len(left_rows) / len(rows),
            value=leaf.value,
        )


def fit_gbm(
    x: np.ndarray,
    y: np.ndarray,
    x_valid: np.ndarray | None = None,
    y_valid: np.ndarray | None = None,
    config: GbmConfig = GbmConfig(),
    feature_names: list[str] | None = None,
) -> GbmModel:
    """Boost depth-limited trees on log-loss, optionally early-stopping.

    With a validation set, training stops once the validation log-loss has
    not improved for ``early_stopping_patience`` rounds and ``best_iteration``
    marks the loss minimum (0 means the constant base score wins). Without
    one, all ``iterations`` trees are kept.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isnan(x).any():
        raise DataError("fit_gbm requires complete data; impute first")
    pos_rate = float(y.mean())
    if pos_rate <= 0.0 or pos_rate >= 1.0:
        raise DataError("degenerate outcome: labels are constant")
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(x.shape[1])]
    use_valid = x_valid is not None
    if use_valid:
        x_valid = np.asarray(x_valid, dtype=float)
        y_valid = np.asarray(y_valid, dtype=float)
        if len(x_valid) == 0:
            raise DataError("early stopping requested with an empty validation set")

    rng = np.random.default_rng(config.seed)
    n = len(x)
    base = float(np.log(pos_rate / (1.0 - pos_rate)))
    edges, binned = _bin_columns(x, config.max_bins)
    grower = _TreeGrower(binned, edges, config.max_depth, config.l2_leaf)

    margin = np.full(n, base)
    trees: list[TreeNode] = []
    train_losses: list[float] = []
    valid_losses: list[float] | None = None
    best_iteration = config.iterations
    if use_valid:
        v_margin = np.full(len(x_valid), base)
        best_loss = log_loss(_sigmoid(v_margin), y_valid)
        valid_losses = []
        best_iteration = 0
        rounds_since_best = 0

    n_sample = max(1, int(round(n * config.subsample)))
    for _ in range(config.iterations):
        p = _sigmoid(margin)
        residual = y - p
        hessian = p * (1.0 - p)
        if config.subsample < 1.0:
            rows = np.sort(rng.choice(n, size=n_sample, replace=False))
        else:
            rows = np.arange(n)
        tree = grower.grow(residual, hessian, rows)
        trees.append(tree)
        margin += config.learning_rate * tree_margin(tree, x)
        train_losses.append(log_loss(_sigmoid(margin), y))
        if use_valid:
            v_margin += config.learning_rate * tree_margin(tree, x_valid)
            v_loss = log_loss(_sigmoid(v_margin), y_valid)
            valid_losses.append(v_loss)
            if v_loss < best_loss:
                best_loss = v_loss
                best_iteration = len(trees)
                rounds_since_best = 0
            else:
                rounds_since_best += 1
                if rounds_since_best >= config.early_stopping_patience:
                    break

    return GbmModel(
        feature_names=list(feature_names),
        trees=trees,
        base_score=base,
        best_iteration=best_iteration,
        config=config,
        train_losses=train_losses,
        valid_losses=valid_losses,
    )
