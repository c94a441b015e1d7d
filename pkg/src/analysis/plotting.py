"""SVG rendering of embeddings and ROC curves.

Figures are 800x600 user units and written with a fixed hash salt and no
date stamp, so the same data always yields the same bytes.
"""
import io
import logging
from pathlib import Path
from typing import Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.analysis.roc import RocResult  # noqa: E402
from src.storage import atomic_write_text  # noqa: E402

logger = logging.getLogger(__name__)

VIEWPORT = (800, 600)
POINTS_PER_INCH = 72
CLASS_COLORS = {0: "#1f77b4", 1: "#d62728"}
CLASS_NAMES = {0: "control", 1: "positive"}


def _figure():
    plt.rcParams["svg.hashsalt"] = "abdoshape"
    plt.rcParams["svg.fonttype"] = "none"
    width, height = VIEWPORT
    return plt.subplots(figsize=(width / POINTS_PER_INCH, height / POINTS_PER_INCH), dpi=POINTS_PER_INCH)


def _to_svg(fig) -> str:
    buffer = io.StringIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buffer.getvalue()


def embedding_svg(coordinates: np.ndarray, labels: Sequence[int], title: str) -> str:
    """Scatter of 2-D coordinates colored by a binary label"""
    coordinates = np.asarray(coordinates, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    fig, ax = _figure()
    for value in (0, 1):
        mask = labels == value
        if mask.any():
            ax.scatter(coordinates[mask, 0], coordinates[mask, 1], s=18, c=CLASS_COLORS[value],
                       label=f"{CLASS_NAMES[value]} ({int(mask.sum())})")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(loc="best")
    return _to_svg(fig)


def roc_svg(curves: Sequence[Tuple[str, RocResult]], title: str = "ROC") -> str:
    """One piecewise-linear curve per (name, result), legend carries the AUC, plus the chance diagonal"""
    fig, ax = _figure()
    ax.plot([0.0, 1.0], [0.0, 1.0], linestyle="--", color="#999999", label="chance")
    for name, result in curves:
        ax.plot(result.fpr, result.tpr, label=f"{name} (AUC {result.auc:.3f})")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right")
    return _to_svg(fig)


def save_embedding_svg(path: Union[str, Path], coordinates, labels, title: str) -> Path:
    path = atomic_write_text(path, embedding_svg(coordinates, labels, title))
    logger.debug(f"Wrote embedding figure {path}")
    return path


def save_roc_svg(path: Union[str, Path], curves, title: str = "ROC") -> Path:
    path = atomic_write_text(path, roc_svg(curves, title))
    logger.debug(f"Wrote ROC figure {path} with {len(curves)} curve(s)")
    return path
