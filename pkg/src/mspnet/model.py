"""Multi-structure PointNet: one T-Net aligned point branch per organ, fused before the head.

Per branch: T = I + tnet(P); aligned = P T^T; per-point layers
a_i <- relu(W a_i + b); S = max_i a_i. The head maps [S_liver || S_spleen]
to two logits.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.config.settings import MSPNetConfig
from src.errors import DataError, ShapeMismatchError
from src.geometry.sampling import canonical_order
from src.neural.tensor import (
    Tape,
    Tensor,
    add,
    add_broadcast,
    batch_matmul,
    concat,
    matmul,
    max_over_points,
    mul_broadcast,
    relu,
    reshape,
    softmax,
    transpose,
)

logger = logging.getLogger(__name__)

SHARED_BRANCH = "shared"


def dtype_for(precision: str):
    return np.float32 if precision == "f32" else np.float64


def branch_key(config: MSPNetConfig, structure: str) -> str:
    return SHARED_BRANCH if config.shared_weights else structure


def branch_keys(config: MSPNetConfig) -> List[str]:
    return [SHARED_BRANCH] if config.shared_weights else list(config.structures)


def parameter_shapes(config: MSPNetConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Parameter names and shapes in creation order"""
    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    for key in branch_keys(config):
        width = 3
        for i, out in enumerate(config.tnet_point_widths):
            shapes += [(f"{key}.tnet.point{i}.weight", (width, out)), (f"{key}.tnet.point{i}.bias", (out,))]
            width = out
        for i, out in enumerate(config.tnet_dense_widths):
            shapes += [(f"{key}.tnet.dense{i}.weight", (width, out)), (f"{key}.tnet.dense{i}.bias", (out,))]
            width = out
        shapes += [(f"{key}.tnet.out.weight", (width, 9)), (f"{key}.tnet.out.bias", (9,))]

        width = 3
        for i, out in enumerate(config.point_widths):
            shapes += [(f"{key}.point{i}.weight", (width, out)), (f"{key}.point{i}.bias", (out,))]
            if config.feature_norm:
                shapes += [(f"{key}.point{i}.gamma", (out,)), (f"{key}.point{i}.beta", (out,))]
            width = out

    width = config.feature_width * len(config.structures)
    for i, out in enumerate(config.head_widths):
        shapes += [(f"head.layer{i}.weight", (width, out)), (f"head.layer{i}.bias", (out,))]
        width = out
    return shapes


def init_parameters(config: MSPNetConfig) -> Dict[str, np.ndarray]:
    """He-normal weights, zero biases, zero T-Net output layer, unit gamma"""
    rng = np.random.default_rng(config.seed)
    dtype = dtype_for(config.precision)
    params: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config):
        if ".tnet.out." in name or name.endswith(".bias") or name.endswith(".beta"):
            value = np.zeros(shape)
        elif name.endswith(".gamma"):
            value = np.ones(shape)
        else:
            value = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        params[name] = value.astype(dtype)
    return params


@dataclass
class BranchOutput:
    feature: Tensor
    transform: Tensor


@dataclass
class MSPNetModel:
    """Parameters plus the configuration snapshot they were built from"""
    config: MSPNetConfig
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    history: List[Dict[str, float]] = field(default_factory=list)
    trained: bool = False

    def __post_init__(self):
        if not self.params:
            self.params = init_parameters(self.config)
        expected = dict(parameter_shapes(self.config))
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ShapeMismatchError(f"Parameter names do not match config (missing {missing}, extra {extra})")
        dtype = dtype_for(self.config.precision)
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise ShapeMismatchError(
                    f"Parameter {name} has shape {self.params[name].shape}, config implies {shape}",
                    shapes=(self.params[name].shape, shape),
                )
            self.params[name] = np.asarray(self.params[name], dtype=dtype)

    @property
    def dtype(self):
        return dtype_for(self.config.precision)

    def new_tape(self) -> Tuple[Tape, Dict[str, Tensor]]:
        tape = Tape(self.dtype)
        tensors = {name: tape.variable(self.params[name], name) for name in sorted(self.params)}
        return tape, tensors

    def prepare_clouds(self, clouds: np.ndarray) -> np.ndarray:
        """(B, n, 3) batch in canonical row order"""
        clouds = np.asarray(clouds, dtype=np.float64)
        if clouds.ndim == 2:
            clouds = clouds[None]
        if clouds.ndim != 3 or clouds.shape[2] != 3:
            raise ShapeMismatchError(f"Clouds must be (B, n, 3), got {clouds.shape}", shapes=(clouds.shape,))
        return np.stack([canonical_order(c) for c in clouds]).astype(self.dtype)

    def _dense(self, h: Tensor, tensors: Mapping[str, Tensor], prefix: str, activate: bool = True,
               normalize: bool = False) -> Tensor:
        h = add_broadcast(matmul(h, tensors[f"{prefix}.weight"]), tensors[f"{prefix}.bias"])
        if normalize:
            h = add_broadcast(mul_broadcast(h, tensors[f"{prefix}.gamma"]), tensors[f"{prefix}.beta"])
        return relu(h) if activate else h

    def tnet(self, tape: Tape, tensors: Mapping[str, Tensor], key: str, points: Tensor) -> Tensor:
        """(B, 3, 3) transform = identity + learned offset"""
        h = points
        for i in range(len(self.config.tnet_point_widths)):
            h = self._dense(h, tensors, f"{key}.tnet.point{i}")
        h = max_over_points(h)
        for i in range(len(self.config.tnet_dense_widths)):
            h = self._dense(h, tensors, f"{key}.tnet.dense{i}")
        offset = self._dense(h, tensors, f"{key}.tnet.out", activate=False)
        batch = points.shape[0]
        offset = reshape(offset, (batch, 3, 3))
        identity = tape.constant(np.broadcast_to(np.eye(3), (batch, 3, 3)).copy())
        return add(offset, identity)

    def branch(self, tape: Tape, tensors: Mapping[str, Tensor], structure: str, clouds: np.ndarray) -> BranchOutput:
        key = branch_key(self.config, structure)
        points = tape.constant(self.prepare_clouds(clouds))
        transform = self.tnet(tape, tensors, key, points)
        h = batch_matmul(points, transpose(transform))
        for i in range(len(self.config.point_widths)):
            h = self._dense(h, tensors, f"{key}.point{i}", normalize=self.config.feature_norm)
        return BranchOutput(feature=max_over_points(h), transform=transform)

    def head(self, tensors: Mapping[str, Tensor], features: List[Tensor]) -> Tensor:
        h = concat(features, axis=-1) if len(features) > 1 else features[0]
        last = len(self.config.head_widths) - 1
        for i in range(len(self.config.head_widths)):
            h = self._dense(h, tensors, f"head.layer{i}", activate=i < last)
        return h

    def forward(self, tape: Tape, tensors: Mapping[str, Tensor],
                clouds: Mapping[str, np.ndarray]) -> Tuple[Tensor, Dict[str, BranchOutput]]:
        """Logits (B, 2) and per-structure branch outputs"""
        missing = [s for s in self.config.structures if s not in clouds]
        if missing:
            raise DataError(f"Missing branch input for {missing}; model expects {self.config.structures}")
        outputs = {s: self.branch(tape, tensors, s, clouds[s]) for s in self.config.structures}
        logits = self.head(tensors, [outputs[s].feature for s in self.config.structures])
        return logits, outputs

    def batched(self, clouds: Mapping[str, np.ndarray], batch_size: Optional[int] = None):
        """Evaluate in chunks; yields (logits, features per structure) as arrays"""
        size = len(next(iter(clouds.values())))
        batch_size = batch_size or self.config.batch_size
        for start in range(0, size, batch_size):
            chunk = {s: np.asarray(c)[start:start + batch_size] for s, c in clouds.items()}
            tape, tensors = self.new_tape()
            logits, outputs = self.forward(tape, tensors, chunk)
            yield logits.value, {s: o.feature.value for s, o in outputs.items()}

    def predict_proba_batch(self, clouds: Mapping[str, np.ndarray]) -> np.ndarray:
        logits = [chunk for chunk, _ in self.batched(clouds)]
        if not logits:
            return np.zeros(0)
        return softmax(np.concatenate(logits).astype(np.float64))[:, 1]

    def global_features(self, clouds: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Max-pooled branch features S per structure, (m, width) each"""
        collected: Dict[str, List[np.ndarray]] = {s: [] for s in self.config.structures}
        for _, features in self.batched(clouds):
            for s, value in features.items():
                collected[s].append(value.astype(np.float64))
        return {s: np.concatenate(v) for s, v in collected.items()}


def tnet_forward(model: MSPNetModel, cloud: np.ndarray, structure: str = "liver") -> np.ndarray:
    """3x3 alignment matrix for one cloud"""
    tape, tensors = model.new_tape()
    points = tape.constant(model.prepare_clouds(cloud))
    transform = model.tnet(tape, tensors, branch_key(model.config, structure), points)
    return transform.value[0].astype(np.float64)


def branch_forward(model: MSPNetModel, cloud: np.ndarray, structure: str = "liver") -> np.ndarray:
    """Global feature S of one cloud"""
    tape, tensors = model.new_tape()
    return model.branch(tape, tensors, structure, cloud).feature.value[0].astype(np.float64)


def fuse_and_classify(model: MSPNetModel, features: Mapping[str, np.ndarray]) -> np.ndarray:
    """Logits from per-structure global features, fused in [liver || spleen] order"""
    missing = [s for s in model.config.structures if s not in features]
    if missing:
        raise DataError(f"Missing branch feature for {missing}; model expects {model.config.structures}")
    tape, tensors = model.new_tape()
    inputs = [tape.constant(np.atleast_2d(features[s])) for s in model.config.structures]
    for s, value in zip(model.config.structures, inputs):
        if value.shape[-1] != model.config.feature_width:
            raise ShapeMismatchError(
                f"{s} feature has width {value.shape[-1]}, expected {model.config.feature_width}",
                shapes=(value.shape, (model.config.feature_width,)),
            )
    return model.head(tensors, inputs).value[0].astype(np.float64)


def predict_proba(model: MSPNetModel, clouds: Mapping[str, np.ndarray]) -> float:
    """Probability of class 1 for one subject given its (n, 3) clouds"""
    batch = {s: np.asarray(c)[None] for s, c in clouds.items()}
    return float(model.predict_proba_batch(batch)[0])


def logits_to_proba(logits: np.ndarray) -> float:
    return float(softmax(np.asarray(logits, dtype=np.float64))[..., 1])
