import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from src.errors import DataError, FileFormatError
from src.labels import require_both_classes
from src.storage import atomic_write_json

logger = logging.getLogger(__name__)


@dataclass
class Split:
    """Disjoint train/test subject ids covering the cohort"""
    train_ids: List[str]
    test_ids: List[str]
    seed: int
    stratified: bool = True


def split_50_50(ids: Sequence[str], labels: Sequence[int], seed: int, stratified: bool = True) -> Split:
    """Shuffled halves; the training half gets ceil(m / 2) subjects.

    Stratified splits put floor(n_c / 2) of every class in training and hand
    the remaining odd slot to the lowest odd-sized class.
    """
    ids = [str(i) for i in ids]
    labels = [int(y) for y in labels]
    if not ids:
        raise DataError("Cannot split an empty cohort")
    if len(ids) != len(labels):
        raise DataError(f"{len(ids)} ids but {len(labels)} labels")
    if len(set(ids)) != len(ids):
        raise DataError("Subject ids must be unique")

    rng = np.random.default_rng(seed)
    target = math.ceil(len(ids) / 2)
    train: List[str] = []
    test: List[str] = []
    if stratified:
        require_both_classes(labels, minimum=2, what="stratified cohort")
        groups = {c: [i for i, y in zip(ids, labels) if y == c] for c in (0, 1)}
        takes = {c: len(members) // 2 for c, members in groups.items()}
        for c in (0, 1):
            if sum(takes.values()) < target and len(groups[c]) % 2 == 1:
                takes[c] += 1
        for c in (0, 1):
            shuffled = [groups[c][k] for k in rng.permutation(len(groups[c]))]
            train += shuffled[:takes[c]]
            test += shuffled[takes[c]:]
    else:
        shuffled = [ids[k] for k in rng.permutation(len(ids))]
        train, test = shuffled[:target], shuffled[target:]

    logger.info(f"Split {len(ids)} subjects: {len(train)} train / {len(test)} test (stratified={stratified})")
    return Split(train_ids=train, test_ids=test, seed=seed, stratified=stratified)


def save_split(split: Split, path: Union[str, Path]) -> Path:
    return atomic_write_json(path, asdict(split))


def load_split(path: Union[str, Path]) -> Split:
    try:
        with open(path) as f:
            data = json.load(f)
        return Split(
            train_ids=list(data["train_ids"]),
            test_ids=list(data["test_ids"]),
            seed=int(data["seed"]),
            stratified=bool(data["stratified"]),
        )
    except OSError as e:
        raise DataError(f"Cannot read split {path}: {e}", cause=e)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FileFormatError(f"Malformed split file {path}: {e}", cause=e)
