import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.errors import DataError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class LabeledSubject:
    """One subject: an (n, 3) cloud per structure and a binary label"""
    subject_id: str
    clouds: Dict[str, np.ndarray]
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"Subject {self.subject_id}: label must be 0 or 1, got {self.label}")
        self.clouds = {name: np.asarray(points, dtype=np.float64) for name, points in self.clouds.items()}


def stack_subjects(subjects: Sequence[LabeledSubject], structures: Sequence[str],
                   points: int) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Stack clouds into (m, n, 3) arrays per structure, checking every cloud has n points"""
    stacked: Dict[str, List[np.ndarray]] = {name: [] for name in structures}
    for subject in subjects:
        for name in structures:
            if name not in subject.clouds:
                raise DataError(f"Subject {subject.subject_id} has no {name} cloud")
            cloud = subject.clouds[name]
            if cloud.shape != (points, 3):
                raise ShapeMismatchError(
                    f"Subject {subject.subject_id} {name} cloud has shape {cloud.shape}, expected ({points}, 3)",
                    shapes=(cloud.shape, (points, 3)),
                )
            stacked[name].append(cloud)
    labels = np.array([s.label for s in subjects], dtype=np.int64)
    return {name: np.stack(clouds) if clouds else np.zeros((0, points, 3)) for name, clouds in stacked.items()}, labels
