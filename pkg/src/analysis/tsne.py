"""Exact t-SNE for desk-scale row counts.

Per-row Gaussian precisions are found by bisection on the natural-log
entropy, P is symmetrized, and the Student-t embedding is optimized by
momentum gradient descent with per-coordinate gains and an early
exaggeration phase.
"""
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from src.config.settings import TsneConfig
from src.errors import DataError, NonFiniteError, PerplexityError
from src.storage import atomic_write_text

logger = logging.getLogger(__name__)

ENTROPY_TOL = 1e-4
BISECTION_STEPS = 200
P_FLOOR = 1e-12
MIN_GAIN = 0.01
INIT_STD = 1e-4
KL_EVERY = 10


@dataclass
class Embedding2D:
    coordinates: np.ndarray
    kl_divergence: float
    perplexity: float
    iterations: int
    seed: int
    kl_trace: List[Tuple[int, float]] = field(default_factory=list)
    kl_after_exaggeration: Optional[float] = None


def _row_affinities(distances: np.ndarray, perplexity: float) -> np.ndarray:
    """Conditional p_{j|i}, each row bisected to entropy log(perplexity)"""
    m = len(distances)
    target = np.log(perplexity)
    conditional = np.zeros((m, m))
    for i in range(m):
        d = np.delete(distances[i], i)
        beta, lower, upper = 1.0, -np.inf, np.inf
        for _ in range(BISECTION_STEPS):
            shifted = np.exp(-(d - d.min()) * beta)
            total = shifted.sum()
            p = shifted / total
            entropy = np.log(total) + beta * np.sum((d - d.min()) * p)
            difference = entropy - target
            if abs(difference) <= ENTROPY_TOL:
                break
            if difference > 0:
                lower = beta
                beta = beta * 2.0 if upper == np.inf else 0.5 * (beta + upper)
            else:
                upper = beta
                beta = beta / 2.0 if lower == -np.inf else 0.5 * (beta + lower)
        else:
            logger.warning(f"Row {i}: perplexity bisection stopped at entropy error {difference:.2e}")
        conditional[i, np.arange(m) != i] = p
    return conditional


def joint_probabilities(features: np.ndarray, perplexity: float) -> np.ndarray:
    distances = squareform(pdist(features, "sqeuclidean"))
    conditional = _row_affinities(distances, perplexity)
    joint = (conditional + conditional.T) / (2.0 * len(features))
    return np.maximum(joint, P_FLOOR)


def _student_t(coordinates: np.ndarray):
    numerator = 1.0 / (1.0 + squareform(pdist(coordinates, "sqeuclidean")))
    np.fill_diagonal(numerator, 0.0)
    q = np.maximum(numerator / numerator.sum(), P_FLOOR)
    return numerator, q


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(len(p), dtype=bool)
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tsne(features: np.ndarray, perplexity: Optional[float] = None, iterations: Optional[int] = None,
         seed: Optional[int] = None, config: Optional[TsneConfig] = None) -> Embedding2D:
    """2-D embedding of the rows of ``features``; deterministic per seed.

    Explicit arguments override the matching ``config`` fields.
    """
    overrides = {
        key: value
        for key, value in (("perplexity", perplexity), ("iterations", iterations), ("seed", seed))
        if value is not None
    }
    config = TsneConfig.model_validate({**(config or TsneConfig()).model_dump(), **overrides})
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] < 1:
        raise DataError(f"Features must be an (m, d) matrix with d >= 1, got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise NonFiniteError("t-SNE input contains NaN or Inf")
    m = len(features)
    if m < 3 * config.perplexity:
        raise PerplexityError(
            f"Perplexity {config.perplexity} needs at least {3 * config.perplexity:.0f} rows, got {m}"
        )

    p = joint_probabilities(features, config.perplexity)
    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, INIT_STD, size=(m, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    trace: List[Tuple[int, float]] = []
    after_exaggeration = None

    for iteration in range(1, config.iterations + 1):
        exaggerating = iteration <= config.exaggeration_iterations
        momentum = config.initial_momentum if exaggerating else config.final_momentum
        target = p * config.exaggeration if exaggerating else p

        numerator, q = _student_t(y)
        weights = (target - q) * numerator
        gradient = 4.0 * (np.sum(weights, axis=1)[:, None] * y - weights @ y)

        increase = update * gradient < 0.0
        gains = np.where(increase, gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, MIN_GAIN)
        update = momentum * update - config.learning_rate * gains * gradient
        y = y + update
        y = y - y.mean(axis=0)

        if iteration % KL_EVERY == 0 or iteration == config.exaggeration_iterations or iteration == config.iterations:
            kl = kl_divergence(p, _student_t(y)[1])
            trace.append((iteration, kl))
            if iteration == config.exaggeration_iterations:
                after_exaggeration = kl
            logger.debug(f"t-SNE iteration {iteration}: KL {kl:.5f}")

    if not np.all(np.isfinite(y)):
        raise NonFiniteError("t-SNE diverged to non-finite coordinates")
    final = trace[-1][1]
    logger.info(f"t-SNE on {m} rows: final KL {final:.4f} after {config.iterations} iterations")
    return Embedding2D(
        coordinates=y,
        kl_divergence=final,
        perplexity=config.perplexity,
        iterations=config.iterations,
        seed=config.seed,
        kl_trace=trace,
        kl_after_exaggeration=after_exaggeration,
    )


def embedding_csv(ids: Sequence[str], embedding: Embedding2D, true_labels: Sequence[int],
                  predicted_labels: Sequence[int]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["id", "x", "y", "true_label", "predicted_label"])
    for subject, (x, y), t, p in zip(ids, embedding.coordinates, true_labels, predicted_labels):
        writer.writerow([subject, repr(float(x)), repr(float(y)), int(t), int(p)])
    return buffer.getvalue()


def save_embedding(path: Union[str, Path], ids, embedding: Embedding2D, true_labels, predicted_labels) -> Path:
    return atomic_write_text(path, embedding_csv(ids, embedding, true_labels, predicted_labels))
