"""Classical comparators over a shared day-level feature vector.

Feature layout (fixed order; ablation-excluded blocks are omitted, never
zero-padded): lagged demand (2 x lag_days, oldest first, out then in per
day; deviations under r_i, raw demand under o), target weekday one-hot
(7, Monday first), then per the event-features level an event count (1),
a time-of-day occupancy over time_bins, and a hashed bag-of-words block
(text_dim) for raw text under h or formatted text under h'.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import DayEvents, FormattedEvent
from .ioutil import atomic_writer
from .prompts import AblationConfig, DemandFeatures, EventFeatures, HistoryWindow

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class SingularSystemError(RuntimeError):
    """Normal equations are singular; retry with ridge_lambda > 0."""


@dataclass(frozen=True)
class FeaturizerConfig:
    lag_days: int = 28
    time_bins: int = 24
    text_dim: int = 32
    ablation: AblationConfig = AblationConfig()

    def __post_init__(self):
        if self.lag_days < 1 or self.time_bins < 1 or self.text_dim < 1:
            raise ValueError("featurizer dimensions must be positive")


def hashed_text_vector(text: str, dim: int) -> np.ndarray:
    """L1-normalized hashed bag of words; stable across processes."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    vec = np.zeros(dim)
    for token in _TOKEN_SPLIT.split(text.lower()):
        if len(token) < 2:
            continue
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        vec[int.from_bytes(digest, "big") % dim] += 1.0
    total = vec.sum()
    if total > 0:
        vec /= total
    return vec


def _time_bin_occupancy(events: DayEvents, bins: int) -> np.ndarray:
    """Each event adds 1 to every bin its start-end span touches."""
    vec = np.zeros(bins)
    for event in events.events:
        start_h = event.start_time.hour + event.start_time.minute / 60.0
        end_h = event.end_time.hour + event.end_time.minute / 60.0
        first = min(int(start_h * bins / 24.0), bins - 1)
        last = min(int(end_h * bins / 24.0), bins - 1)
        vec[first:last + 1] += 1.0
    return vec


def _event_text(events: DayEvents) -> str:
    parts = []
    for event in events.events:
        parts.append(event.title)
        if event.description:
            parts.append(event.description)
    return " ".join(parts)


def featurize_day(
    window: HistoryWindow,
    target_events: DayEvents,
    config: FeaturizerConfig,
    target_formatted: Sequence[FormattedEvent] | None = None,
) -> np.ndarray:
    """Feature vector for predicting the day after the window.

    Causal by construction: the target day's demand never appears. Under
    the h' ablation the formatted events for the target day must be given.
    """
    if window.t != config.lag_days:
        raise ValueError(
            f"window length {window.t} != configured lag_days {config.lag_days}"
        )
    target_date = target_events.date
    if (target_date - window.end).days != 1:
        raise ValueError("target_events date must follow the window end")

    blocks = []
    lags = np.empty(2 * config.lag_days)
    for i, day in enumerate(window.days):
        d = day.decomposition
        if config.ablation.demand_features is DemandFeatures.R_I:
            lags[2 * i] = d.deviation.outflow
            lags[2 * i + 1] = d.deviation.inflow
        else:
            lags[2 * i] = d.actual.outflow
            lags[2 * i + 1] = d.actual.inflow
    blocks.append(lags)

    weekday = np.zeros(7)
    weekday[target_date.weekday()] = 1.0
    blocks.append(weekday)

    level = config.ablation.event_features
    if level is not EventFeatures.NA:
        blocks.append(np.array([float(len(target_events.events))]))
    if level in (EventFeatures.C_T, EventFeatures.C_T_H, EventFeatures.C_T_H_PRIME):
        blocks.append(_time_bin_occupancy(target_events, config.time_bins))
    if level is EventFeatures.C_T_H:
        blocks.append(hashed_text_vector(_event_text(target_events), config.text_dim))
    elif level is EventFeatures.C_T_H_PRIME:
        if target_formatted is None:
            raise ValueError("formatted events required under the c_t_h_prime ablation")
        text = " ".join(f"{fe.category} {fe.summary}" for fe in target_formatted)
        blocks.append(hashed_text_vector(text, config.text_dim))
    return np.concatenate(blocks)


@dataclass(frozen=True)
class LinearModel:
    """Ridge/OLS single-output regressor; intercept is unpenalized."""

    weights: np.ndarray
    intercept: float
    ridge_lambda: float


def fit_linear(X, y, ridge_lambda: float = 0.0) -> LinearModel:
    """Solve the centered normal equations; lambda = 0 gives OLS."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X rows must match y length")
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc + ridge_lambda * np.eye(X.shape[1])
    rhs = Xc.T @ (y - y_mean)
    if ridge_lambda == 0.0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise SingularSystemError(
            "singular normal equations; set ridge_lambda > 0"
        )
    weights = np.linalg.solve(gram, rhs)
    intercept = float(y_mean - weights @ x_mean)
    return LinearModel(weights=weights, intercept=intercept, ridge_lambda=ridge_lambda)


def predict_linear(model: LinearModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != model.weights.shape:
        raise ValueError(f"feature dimension {x.shape} != {model.weights.shape}")
    return float(model.intercept + model.weights @ x)


@dataclass(frozen=True)
class TreeNode:
    """Axis-aligned split or leaf (leaf iff feature is None)."""

    feature: int | None = None
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def predict(self, x) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


@dataclass(frozen=True)
class GbdtParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.05
    min_leaf: int = 5

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass(frozen=True)
class GbdtModel:
    trees: tuple[TreeNode, ...]
    learning_rate: float
    max_depth: int
    base_prediction: float
    n_features: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _best_split(X, residuals, indices, min_leaf):
    """Greedy variance-reduction split over midpoints between distinct values.

    Split SSE decomposes as sum(r^2) minus the "explained" term
    L^2/n_L + R^2/n_R, so maximizing the latter minimizes the former.
    Ties break toward the lowest feature index, then the lowest threshold.
    """
    n = indices.size
    res = residuals[indices]
    total = res.sum()
    no_split = total * total / n
    best = None  # (explained, feature, threshold)
    for feature in range(X.shape[1]):
        values = X[indices, feature]
        order = np.argsort(values, kind="stable")
        sorted_vals = values[order]
        csum = np.cumsum(res[order])
        # candidate boundaries between distinct consecutive values
        boundary = np.nonzero(sorted_vals[1:] != sorted_vals[:-1])[0] + 1
        positions = boundary[(boundary >= min_leaf) & (n - boundary >= min_leaf)]
        if positions.size == 0:
            continue
        left_sum = csum[positions - 1]
        right_sum = total - left_sum
        explained = left_sum**2 / positions + right_sum**2 / (n - positions)
        i = int(np.argmax(explained))  # first max: lowest threshold wins ties
        gain_over = best[0] if best is not None else no_split
        if explained[i] > gain_over + 1e-12:
            threshold = (sorted_vals[positions[i] - 1] + sorted_vals[positions[i]]) / 2.0
            best = (float(explained[i]), feature, float(threshold))
    return best


def _build_tree(X, residuals, indices, depth, params):
    n = indices.size
    mean = float(residuals[indices].mean())
    if depth >= params.max_depth or n < 2 * params.min_leaf:
        return TreeNode(value=mean)
    split = _best_split(X, residuals, indices, params.min_leaf)
    if split is None:
        return TreeNode(value=mean)
    _, feature, threshold = split
    mask = X[indices, feature] <= threshold
    left = _build_tree(X, residuals, indices[mask], depth + 1, params)
    right = _build_tree(X, residuals, indices[~mask], depth + 1, params)
    return TreeNode(feature=feature, threshold=float(threshold), left=left, right=right)


def fit_gbdt(X, y, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Boosted regression trees on residuals; training MSE never increases.

    Rows are reordered canonically (lexsort over feature columns, then the
    target) before fitting so the result is exactly independent of the
    input row order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X rows must match y length")
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    if params.min_leaf >= n:
        raise ValueError(f"min_leaf {params.min_leaf} must be < sample count {n}")

    order = np.lexsort((y,) + tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1)))
    X = X[order]
    y = y[order]

    base = float(y.mean())
    residuals = y - base
    trees = []
    indices = np.arange(n)
    prev_mse = float((residuals ** 2).mean())
    for _ in range(params.n_trees):
        tree = _build_tree(X, residuals, indices, 0, params)
        outputs = np.array([tree.predict(row) for row in X])
        residuals = residuals - params.learning_rate * outputs
        mse = float((residuals ** 2).mean())
        assert mse <= prev_mse + 1e-9, "training MSE increased during boosting"
        prev_mse = mse
        trees.append(tree)
    return GbdtModel(
        trees=tuple(trees),
        learning_rate=params.learning_rate,
        max_depth=params.max_depth,
        base_prediction=base,
        n_features=X.shape[1],
    )


def predict_gbdt(model: GbdtModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise ValueError(f"feature dimension {x.shape} != ({model.n_features},)")
    return float(
        model.base_prediction
        + model.learning_rate * sum(tree.predict(x) for tree in model.trees)
    )


def _tree_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_to_dict(node.left),
        "right": _tree_to_dict(node.right),
    }


def _tree_from_dict(doc: dict) -> TreeNode:
    if "value" in doc:
        return TreeNode(value=doc["value"])
    return TreeNode(
        feature=doc["feature"],
        threshold=doc["threshold"],
        left=_tree_from_dict(doc["left"]),
        right=_tree_from_dict(doc["right"]),
    )


def save_model(model: LinearModel | GbdtModel, path) -> None:
    """Persist a model as a self-describing JSON document."""
    if isinstance(model, LinearModel):
        doc = {
            "format_version": 1,
            "kind": "linear",
            "ridge_lambda": model.ridge_lambda,
            "intercept": model.intercept,
            "weights": model.weights.tolist(),
        }
    else:
        doc = {
            "format_version": 1,
            "kind": "gbdt",
            "learning_rate": model.learning_rate,
            "max_depth": model.max_depth,
            "base_prediction": model.base_prediction,
            "n_features": model.n_features,
            "trees": [_tree_to_dict(t) for t in model.trees],
        }
    with atomic_writer(path) as fh:
        json.dump(doc, fh, sort_keys=True)


def load_model(path) -> LinearModel | GbdtModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != 1:
        raise ValueError(f"unsupported model format: {doc.get('format_version')!r}")
    if doc["kind"] == "linear":
        return LinearModel(
            weights=np.asarray(doc["weights"], dtype=float),
            intercept=doc["intercept"],
            ridge_lambda=doc["ridge_lambda"],
        )
    if doc["kind"] == "gbdt":
        return GbdtModel(
            trees=tuple(_tree_from_dict(t) for t in doc["trees"]),
            learning_rate=doc["learning_rate"],
            max_depth=doc["max_depth"],
            base_prediction=doc["base_prediction"],
            n_features=doc["n_features"],
        )
    raise ValueError(f"unknown model kind: {doc['kind']!r}")
