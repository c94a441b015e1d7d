import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np

from src.baseline.gbt import GbtModel
from src.errors import DataError, ShapeMismatchError
from src.mspnet.model import MSPNetModel
from src.storage import atomic_write_text

logger = logging.getLogger(__name__)

PREDICTION_THRESHOLD = 0.5


@dataclass
class FeatureDump:
    """One feature row per subject with its true and predicted label"""
    ids: List[str]
    labels: np.ndarray
    predicted: np.ndarray
    probabilities: np.ndarray
    features: np.ndarray
    source: str

    @property
    def width(self) -> int:
        return int(self.features.shape[1])


def _mspnet_features(model: MSPNetModel, clouds: Mapping[str, np.ndarray], organ: Optional[str]):
    structures = model.config.structures
    if organ is not None and organ not in structures:
        raise DataError(f"Model has no {organ} branch; available: {structures}")
    features = model.global_features({s: clouds[s] for s in structures if s in clouds})
    probabilities = model.predict_proba_batch({s: clouds[s] for s in structures})
    chosen = [organ] if organ is not None else structures
    # pre-head embedding in fusion order
    return np.concatenate([features[s] for s in chosen], axis=1), probabilities, "+".join(chosen)


def feature_dump(model: Union[MSPNetModel, GbtModel], ids: Sequence[str], labels: Sequence[int],
                 data, organ: Optional[str] = None) -> FeatureDump:
    """Collect the descriptor a trained classifier sees for every subject.

    For MSPNet ``data`` maps structure names to (m, n, 3) cloud stacks and the
    rows are the max-pooled branch features, concatenated (or only ``organ``'s
    branch). For the GBT baseline ``data`` is the (m, d) AbdomenPrint matrix
    the model was trained on.
    """
    ids = [str(i) for i in ids]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(ids) != len(labels):
        raise ShapeMismatchError(f"{len(ids)} ids but {len(labels)} labels", shapes=((len(ids),), labels.shape))

    if isinstance(model, MSPNetModel):
        if not model.trained:
            raise DataError("Cannot dump features of an untrained MSPNet model")
        missing = [s for s in model.config.structures if s not in data]
        if missing:
            raise DataError(f"No clouds for {missing}")
        features, probabilities, source = _mspnet_features(model, data, organ)
        source = f"mspnet:{source}"
    elif isinstance(model, GbtModel):
        if not model.trees:
            raise DataError("Cannot dump features of an untrained GBT model")
        features = np.asarray(data, dtype=np.float64)
        probabilities = model.predict_proba(features)
        source = "abdomenprint"
    else:
        raise DataError(f"Unsupported model type {type(model).__name__}")

    if len(features) != len(ids):
        raise ShapeMismatchError(
            f"{len(features)} feature rows for {len(ids)} subjects", shapes=(features.shape, (len(ids),))
        )
    predicted = (probabilities >= PREDICTION_THRESHOLD).astype(np.int64)
    logger.info(f"Feature dump from {source}: {features.shape[0]} rows x {features.shape[1]} columns")
    return FeatureDump(
        ids=ids,
        labels=labels,
        predicted=predicted,
        probabilities=np.asarray(probabilities, dtype=np.float64),
        features=features.astype(np.float64),
        source=source,
    )


def feature_dump_csv(dump: FeatureDump) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["id", "true_label", "predicted_label"] + [f"f{j}" for j in range(dump.width)])
    for subject, label, predicted, row in zip(dump.ids, dump.labels, dump.predicted, dump.features):
        writer.writerow([subject, int(label), int(predicted)] + [repr(float(v)) for v in row])
    return buffer.getvalue()


def save_feature_dump(dump: FeatureDump, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, feature_dump_csv(dump))
