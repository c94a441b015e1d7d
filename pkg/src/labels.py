from collections import Counter
from typing import Dict, Sequence

from src.errors import SingleClassError


def class_counts(labels: Sequence[int]) -> Dict[int, int]:
    counts = Counter(int(y) for y in labels)
    return {0: counts.get(0, 0), 1: counts.get(1, 0)}


def require_both_classes(labels: Sequence[int], minimum: int = 1, what: str = "dataset") -> None:
    """Raise SingleClassError unless each binary class has at least ``minimum`` members"""
    counts = class_counts(labels)
    if min(counts.values()) < minimum:
        raise SingleClassError(
            f"The {what} needs at least {minimum} subject(s) per class, got {counts[0]} / {counts[1]}"
        )
