import json
import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config.settings import MSPNetConfig
from src.errors import DataError, FileFormatError
from src.labels import require_both_classes
from src.mspnet.dataset import LabeledSubject, stack_subjects
from src.mspnet.model import MSPNetModel
from src.neural.checkpoint import load_tensors, save_tensors
from src.neural.optim import AdamState, adam_step
from src.neural.tensor import (
    Tape,
    Tensor,
    add,
    backward,
    batch_matmul,
    reduce_sum,
    scale,
    softmax_cross_entropy,
    square,
    transpose,
)
from src.storage import atomic_write_json

logger = logging.getLogger(__name__)

EpochCallback = Callable[[Dict[str, float]], None]


def orthogonality_penalty(tape: Tape, transforms: Sequence[Tensor]) -> Tensor:
    """Sum over branches of the batch mean of ||T T^T - I||_F^2"""
    total = None
    for transform in transforms:
        batch = transform.shape[0]
        gram = batch_matmul(transform, transpose(transform))
        identity = tape.constant(-np.broadcast_to(np.eye(3), (batch, 3, 3)))
        term = scale(reduce_sum(square(add(gram, identity))), 1.0 / batch)
        total = term if total is None else add(total, term)
    return total


def batch_loss(model: MSPNetModel, tape: Tape, tensors, clouds: Dict[str, np.ndarray],
               labels: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """Mean cross-entropy plus the optional T orthogonality term; also returns the logits"""
    logits, outputs = model.forward(tape, tensors, clouds)
    loss = softmax_cross_entropy(logits, labels)
    if model.config.orthogonality_weight > 0:
        penalty = orthogonality_penalty(tape, [outputs[s].transform for s in model.config.structures])
        loss = add(loss, scale(penalty, model.config.orthogonality_weight))
    return loss, logits.value


def train(subjects: Sequence[LabeledSubject], config: MSPNetConfig,
          on_epoch: Optional[EpochCallback] = None) -> MSPNetModel:
    """Train MSPNet with Adam on mean softmax cross-entropy.

    Subjects are reshuffled every epoch by a generator seeded from
    ``config.seed``; the epoch loss is the sample-weighted mean of the batch
    losses seen before each update.
    """
    labels_all = [s.label for s in subjects]
    require_both_classes(labels_all, minimum=2, what="training set")
    clouds, labels = stack_subjects(subjects, config.structures, config.points)

    model = MSPNetModel(config=config)
    state = AdamState(learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    m = len(labels)
    history: List[Dict[str, float]] = []

    logger.info(
        f"Training MSPNet on {m} subjects, structures={config.structures}, "
        f"epochs={config.epochs}, batch={config.batch_size}, precision={config.precision}"
    )
    started = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(m)
        loss_sum = 0.0
        correct = 0
        for start in range(0, m, config.batch_size):
            index = order[start:start + config.batch_size]
            batch = {s: clouds[s][index] for s in config.structures}
            tape, tensors = model.new_tape()
            loss, logits = batch_loss(model, tape, tensors, batch, labels[index])
            grads = backward(tape, loss)
            adam_step(model.params, grads, state)
            loss_sum += float(loss.value) * len(index)
            correct += int(np.sum(np.argmax(logits, axis=1) == labels[index]))

        entry = {"epoch": epoch, "loss": loss_sum / m, "accuracy": correct / m}
        history.append(entry)
        logger.debug(f"Epoch {epoch}: loss={entry['loss']:.6f} accuracy={entry['accuracy']:.3f}")
        if on_epoch is not None:
            on_epoch(entry)

    model.history = history
    model.trained = True
    if history:
        logger.info(
            f"Training finished in {time.perf_counter() - started:.1f}s: "
            f"loss {history[0]['loss']:.4f} -> {history[-1]['loss']:.4f}, "
            f"accuracy {history[-1]['accuracy']:.3f}"
        )
    return model


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(model: MSPNetModel, path: Union[str, Path], extra: Optional[Dict] = None) -> Path:
    """TNSR parameter file plus a JSON sidecar with config, history and extra metadata"""
    path = save_tensors(model.params, path)
    atomic_write_json(sidecar_path(path), {
        "kind": "mspnet",
        "config": model.config.model_dump(mode="json"),
        "history": model.history,
        "trained": model.trained,
        "optimizer": {
            "name": "adam",
            "learning_rate": model.config.learning_rate,
            "beta1": model.config.beta1,
            "beta2": model.config.beta2,
            "eps": model.config.eps,
        },
        "extra": extra or {},
    })
    logger.info(f"Saved MSPNet checkpoint to {path}")
    return path


def load_sidecar(path: Union[str, Path]) -> Dict:
    try:
        with open(sidecar_path(path)) as f:
            return json.load(f)
    except OSError as e:
        raise DataError(f"Missing checkpoint sidecar for {path}: {e}", cause=e)
    except json.JSONDecodeError as e:
        raise FileFormatError(f"Invalid checkpoint sidecar for {path}: {e}", cause=e)


def load_model(path: Union[str, Path]) -> MSPNetModel:
    meta = load_sidecar(path)
    if meta.get("kind") != "mspnet":
        raise FileFormatError(f"{path} is not an MSPNet checkpoint")
    model = MSPNetModel(
        config=MSPNetConfig.model_validate(meta["config"]),
        params=load_tensors(path),
        history=meta.get("history", []),
        trained=bool(meta.get("trained", False)),
    )
    return model
