"""Gradient boosted regression trees under logistic loss.

Each round fits a depth-limited regression tree to the residuals y - p by
exact greedy squared-error splits, then sets every leaf to one Newton step
sum(r) / sum(p (1 - p)), clamped to [-4, 4].
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from src.config.settings import GbtConfig
from src.errors import DataError, FileFormatError, NonFiniteError, ShapeMismatchError
from src.labels import require_both_classes
from src.storage import atomic_write_json

logger = logging.getLogger(__name__)

LEAF_CLAMP = 4.0
HESSIAN_GUARD = 1e-9
PROBABILITY_EPS = 1e-15


@dataclass
class TreeNode:
    """Split node (feature, threshold, children) or leaf (value); x < threshold goes left"""
    value: Optional[float] = None
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def predict(self, features: np.ndarray) -> np.ndarray:
        if self.is_leaf:
            return np.full(len(features), self.value)
        out = np.empty(len(features))
        goes_left = features[:, self.feature] < self.threshold
        out[goes_left] = self.left.predict(features[goes_left])
        out[~goes_left] = self.right.predict(features[~goes_left])
        return out

    def to_dict(self) -> Dict[str, Any]:
        if self.is_leaf:
            return {"leaf": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TreeNode":
        if "leaf" in data:
            return cls(value=float(data["leaf"]))
        return cls(
            feature=int(data["feature"]),
            threshold=float(data["threshold"]),
            left=cls.from_dict(data["left"]),
            right=cls.from_dict(data["right"]),
        )

    def split_features(self) -> List[int]:
        if self.is_leaf:
            return []
        return [self.feature] + self.left.split_features() + self.right.split_features()


@dataclass
class GbtModel:
    initial_score: float
    learning_rate: float
    n_features: int
    trees: List[TreeNode] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)
    config: Optional[GbtConfig] = None

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        features = _check_features(features, self.n_features)
        score = np.full(len(features), self.initial_score)
        for tree in self.trees:
            score += self.learning_rate * tree.predict(features)
        return score

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return np.clip(sigmoid(self.decision_function(features)), PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)


@dataclass
class Split:
    gain: float
    feature: int
    threshold: float


def sigmoid(score: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(score, dtype=np.float64)))


def logistic_loss(labels: np.ndarray, score: np.ndarray) -> float:
    """Mean negative log-likelihood, computed stably from scores"""
    return float(np.mean(np.logaddexp(0.0, score) - labels * score))


def _check_features(features: np.ndarray, n_features: Optional[int] = None) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    if features.ndim != 2:
        raise ShapeMismatchError(f"Features must be a matrix, got shape {features.shape}", shapes=(features.shape,))
    if n_features is not None and features.shape[1] != n_features:
        raise ShapeMismatchError(
            f"Feature rows have {features.shape[1]} columns, model expects {n_features}",
            shapes=(features.shape, (n_features,)),
        )
    if not np.all(np.isfinite(features)):
        raise NonFiniteError("Features contain NaN or Inf")
    return features


def best_split(features: np.ndarray, residuals: np.ndarray, columns: np.ndarray,
               min_samples_leaf: int) -> Optional[Split]:
    """Exact greedy split maximizing the squared-error reduction.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties keep the lowest feature index, then the lowest threshold.
    """
    n = len(residuals)
    total = residuals.sum()
    parent_score = total * total / n
    best: Optional[Split] = None
    for feature in columns:
        order = np.argsort(features[:, feature], kind="stable")
        values = features[order, feature]
        sums = np.cumsum(residuals[order])[:-1]
        left_counts = np.arange(1, n)
        boundary = values[:-1] < values[1:]
        valid = boundary & (left_counts >= min_samples_leaf) & (n - left_counts >= min_samples_leaf)
        if not valid.any():
            continue
        right_sums = total - sums
        gains = sums ** 2 / left_counts + right_sums ** 2 / (n - left_counts) - parent_score
        gains = np.where(valid, gains, -np.inf)
        position = int(np.argmax(gains))
        gain = float(gains[position])
        if gain > 0 and (best is None or gain > best.gain):
            threshold = 0.5 * (values[position] + values[position + 1])
            best = Split(gain=gain, feature=int(feature), threshold=float(threshold))
    return best


def _grow(features, residuals, hessians, columns, depth, config: GbtConfig) -> TreeNode:
    split = None
    if depth < config.max_depth and len(residuals) >= 2 * config.min_samples_leaf:
        split = best_split(features, residuals, columns, config.min_samples_leaf)
    if split is None:
        value = residuals.sum() / (hessians.sum() + HESSIAN_GUARD)
        return TreeNode(value=float(np.clip(value, -LEAF_CLAMP, LEAF_CLAMP)))
    goes_left = features[:, split.feature] < split.threshold
    return TreeNode(
        feature=split.feature,
        threshold=split.threshold,
        left=_grow(features[goes_left], residuals[goes_left], hessians[goes_left], columns, depth + 1, config),
        right=_grow(features[~goes_left], residuals[~goes_left], hessians[~goes_left], columns, depth + 1, config),
    )


def train_gbt(features: np.ndarray, labels: np.ndarray, config: Optional[GbtConfig] = None) -> GbtModel:
    """Boosted logistic-loss model; deterministic per (data, config)"""
    config = config or GbtConfig()
    features = _check_features(features)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(labels) != len(features):
        raise ShapeMismatchError(
            f"{len(features)} feature rows but {len(labels)} labels", shapes=(features.shape, labels.shape)
        )
    if len(labels) < 4:
        raise DataError(f"Boosting needs at least 4 samples, got {len(labels)}")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("Labels must be 0 or 1")
    require_both_classes(labels.astype(int), what="boosting training set")

    m, d = features.shape
    positive = labels.mean()
    model = GbtModel(
        initial_score=float(np.log(positive / (1.0 - positive))),
        learning_rate=config.learning_rate,
        n_features=d,
        config=config,
    )
    rng = np.random.default_rng(config.seed)
    score = np.full(m, model.initial_score)
    model.loss_history.append(logistic_loss(labels, score))

    for round_index in range(config.rounds):
        p = sigmoid(score)
        residuals = labels - p
        hessians = p * (1.0 - p)
        rows = np.arange(m)
        if config.row_subsample < 1.0:
            rows = np.sort(rng.choice(m, size=max(2, int(round(config.row_subsample * m))), replace=False))
        columns = np.arange(d)
        if config.col_subsample < 1.0:
            columns = np.sort(rng.choice(d, size=max(1, int(round(config.col_subsample * d))), replace=False))
        tree = _grow(features[rows], residuals[rows], hessians[rows], columns, 0, config)
        model.trees.append(tree)
        score += config.learning_rate * tree.predict(features)
        model.loss_history.append(logistic_loss(labels, score))
        logger.debug(f"Round {round_index + 1}: training loss {model.loss_history[-1]:.6f}")

    logger.info(
        f"Trained GBT on {m}x{d}: {config.rounds} rounds, loss "
        f"{model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}"
    )
    return model


def predict_gbt(model: GbtModel, row: np.ndarray) -> float:
    """Probability of class 1 for one feature row"""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ShapeMismatchError(f"Expected one feature row, got shape {row.shape}", shapes=(row.shape,))
    return float(model.predict_proba(row[None, :])[0])


def model_to_dict(model: GbtModel) -> Dict[str, Any]:
    return {
        "kind": "gbt",
        "initial_score": model.initial_score,
        "learning_rate": model.learning_rate,
        "n_features": model.n_features,
        "trees": [tree.to_dict() for tree in model.trees],
        "loss_history": model.loss_history,
        "config": model.config.model_dump(mode="json") if model.config else None,
    }


def model_from_dict(data: Dict[str, Any]) -> GbtModel:
    if data.get("kind") != "gbt":
        raise FileFormatError("Not a GBT model document")
    model = GbtModel(
        initial_score=float(data["initial_score"]),
        learning_rate=float(data["learning_rate"]),
        n_features=int(data["n_features"]),
        trees=[TreeNode.from_dict(t) for t in data["trees"]],
        loss_history=[float(x) for x in data.get("loss_history", [])],
        config=GbtConfig.model_validate(data["config"]) if data.get("config") else None,
    )
    for tree in model.trees:
        if any(f >= model.n_features for f in tree.split_features()):
            raise FileFormatError("Split feature index exceeds the feature dimension")
    return model


def save_gbt(model: GbtModel, path: Union[str, Path], extra: Optional[Dict] = None) -> Path:
    document = model_to_dict(model)
    document["extra"] = extra or {}
    return atomic_write_json(path, document)


def load_gbt(path: Union[str, Path]) -> GbtModel:
    try:
        with open(path) as f:
            return model_from_dict(json.load(f))
    except OSError as e:
        raise DataError(f"Cannot read model {path}: {e}", cause=e)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FileFormatError(f"Malformed GBT model {path}: {e}", cause=e)
