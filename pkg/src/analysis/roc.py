import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from src.errors import NonFiniteError, ShapeMismatchError
from src.labels import require_both_classes
from src.storage import atomic_write_json, atomic_write_text

logger = logging.getLogger(__name__)


@dataclass
class RocResult:
    """ROC curve from (0, 0) to (1, 1) over descending thresholds, and its area"""
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def trapezoid_area(self) -> float:
        return float(trapezoid(self.tpr, self.fpr))


def mann_whitney_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(random positive outranks random negative), ties counted half"""
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(scores, labels) -> RocResult:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if len(scores) != len(labels):
        raise ShapeMismatchError(f"{len(scores)} scores but {len(labels)} labels", shapes=(scores.shape, labels.shape))
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("Scores must be finite")
    require_both_classes(labels, what="ROC evaluation set")

    positive = labels == 1
    n_pos = positive.sum()
    n_neg = len(labels) - n_pos
    distinct = np.unique(scores)[::-1]
    # counts of each class scoring >= threshold, via sorted search
    sorted_pos = np.sort(scores[positive])
    sorted_neg = np.sort(scores[~positive])
    tp = n_pos - np.searchsorted(sorted_pos, distinct, side="left")
    fp = n_neg - np.searchsorted(sorted_neg, distinct, side="left")

    thresholds = np.concatenate([[np.inf], distinct])
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return RocResult(thresholds=thresholds, tpr=tpr, fpr=fpr, auc=mann_whitney_auc(scores, labels))


def roc_csv(result: RocResult) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "tpr"])
    for t, f, p in zip(result.thresholds, result.fpr, result.tpr):
        writer.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
    return buffer.getvalue()


def save_roc(result: RocResult, csv_path: Union[str, Path], summary_path: Union[str, Path]) -> None:
    atomic_write_text(csv_path, roc_csv(result))
    atomic_write_json(summary_path, {"auc": result.auc})
    logger.debug(f"Wrote ROC curve ({len(result.thresholds)} points, AUC {result.auc:.4f}) to {csv_path}")
