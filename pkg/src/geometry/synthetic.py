"""Synthetic organ-like shapes standing in for binary segmentations.

Each shape is a star-shaped solid around the grid center: an ellipsoid whose
radius is modulated by a Gaussian angular bump and a few seeded low-frequency
cosine terms. Class 1 subjects are drawn with a larger organ scale and a
stronger bump; ``separation`` scales both shifts.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.errors import GridBoundsError
from src.geometry.volume import VoxelGrid

logger = logging.getLogger(__name__)

NOISE_TERMS = 6
NOISE_MAX_FREQUENCY = 2.0
GRID_MARGIN = 2


class SyntheticSpec(BaseModel):
    """Parameters of one synthetic shape"""
    label: int = Field(0, ge=0, le=1)
    semi_axes: Tuple[float, float, float] = (8.0, 8.0, 8.0)
    bump_amplitude: float = Field(0.0, ge=0.0, description="mm")
    bump_width: float = Field(0.4, gt=0.0, description="Angular width in radians")
    bump_direction: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    noise_amplitude: float = Field(0.0, ge=0.0, description="mm")
    seed: int = Field(0, ge=0)

    @field_validator("semi_axes")
    def validate_semi_axes(cls, v):
        if any(not a > 0 for a in v):
            raise ValueError(f"Semi-axes must be positive, got {v}")
        return v

    @field_validator("bump_direction")
    def validate_direction(cls, v):
        norm = float(np.linalg.norm(v))
        if not norm > 0:
            raise ValueError("Bump direction must be non-zero")
        return tuple(float(x) / norm for x in v)

    @property
    def max_radius_offset(self) -> float:
        return self.bump_amplitude + self.noise_amplitude


def _noise_terms(seed: int):
    rng = np.random.default_rng(seed)
    frequencies = rng.normal(size=(NOISE_TERMS, 3))
    frequencies *= NOISE_MAX_FREQUENCY * rng.random((NOISE_TERMS, 1)) / np.linalg.norm(
        frequencies, axis=1, keepdims=True
    )
    phases = rng.uniform(0.0, 2.0 * np.pi, NOISE_TERMS)
    weights = rng.uniform(-1.0, 1.0, NOISE_TERMS)
    weights /= np.abs(weights).sum()
    return frequencies, phases, weights


def radius_function(spec: SyntheticSpec, directions: np.ndarray) -> np.ndarray:
    """Boundary radius (mm) along unit directions of shape (m, 3)"""
    axes = np.asarray(spec.semi_axes)
    radius = 1.0 / np.sqrt(np.sum((directions / axes) ** 2, axis=1))

    if spec.bump_amplitude > 0:
        cos_angle = np.clip(directions @ np.asarray(spec.bump_direction), -1.0, 1.0)
        angle = np.arccos(cos_angle)
        radius = radius + spec.bump_amplitude * np.exp(-angle ** 2 / (2.0 * spec.bump_width ** 2))

    if spec.noise_amplitude > 0:
        frequencies, phases, weights = _noise_terms(spec.seed)
        noise = np.cos(directions @ frequencies.T + phases) @ weights
        radius = radius + spec.noise_amplitude * noise

    return radius


def generate_synthetic(spec: SyntheticSpec, dims: Tuple[int, int, int],
                       spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> VoxelGrid:
    """Voxelize a synthetic shape centered in a grid of the given dims"""
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    half_extent = [((d - 1) / 2.0 - GRID_MARGIN) * s for d, s in zip(dims, spacing)]
    for axis, (semi_axis, limit) in enumerate(zip(spec.semi_axes, half_extent)):
        reach = semi_axis + spec.max_radius_offset
        if reach > limit:
            raise GridBoundsError(
                f"Shape reaches {reach:.2f} mm along axis {axis} but the grid allows "
                f"{limit:.2f} mm with a {GRID_MARGIN}-voxel margin"
            )

    origin = tuple(-(d - 1) / 2.0 * s for d, s in zip(dims, spacing))
    axes = [o + np.arange(d) * s for d, s, o in zip(dims, spacing, origin)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    distance = np.linalg.norm(coords, axis=1)

    inside = np.zeros(len(coords), dtype=bool)
    inside[distance == 0] = True
    away = distance > 0
    directions = coords[away] / distance[away, None]
    inside[away] = distance[away] <= radius_function(spec, directions)

    grid = VoxelGrid(occupancy=inside.reshape(dims), spacing=spacing, origin=origin)
    logger.debug(f"Generated shape seed={spec.seed} label={spec.label}: {grid.occupied_count} voxels")
    return grid


@dataclass(frozen=True)
class OrganProtocol:
    """Grid and parameter distributions of one synthetic organ"""
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    base_axes: Tuple[float, float, float]
    scale_jitter: float
    scale_shift: float
    amplitude_range: Tuple[float, float]
    amplitude_shift: float
    noise_amplitude: float
    bump_direction: Tuple[float, float, float]
    bump_width_range: Tuple[float, float]


ORGAN_PROTOCOLS: Dict[str, OrganProtocol] = {
    "liver": OrganProtocol(
        dims=(40, 32, 28),
        spacing=(4.0, 4.0, 4.0),
        base_axes=(52.0, 38.0, 28.0),
        scale_jitter=0.03,
        scale_shift=0.06,
        amplitude_range=(0.5, 2.0),
        amplitude_shift=3.0,
        noise_amplitude=1.2,
        bump_direction=(1.0, 1.0, 0.0),
        bump_width_range=(0.35, 0.5),
    ),
    "spleen": OrganProtocol(
        dims=(28, 20, 18),
        spacing=(3.0, 3.0, 3.0),
        base_axes=(26.0, 16.0, 12.0),
        scale_jitter=0.03,
        scale_shift=0.04,
        amplitude_range=(0.3, 1.0),
        amplitude_shift=1.5,
        noise_amplitude=0.6,
        bump_direction=(-1.0, 0.0, 1.0),
        bump_width_range=(0.35, 0.5),
    ),
}


def draw_organ_spec(organ: str, label: int, separation: float, rng: np.random.Generator,
                    seed: int) -> SyntheticSpec:
    """Sample one organ's shape parameters from its class-conditional distribution"""
    protocol = ORGAN_PROTOCOLS[organ]
    jitter = np.clip(rng.normal(0.0, protocol.scale_jitter), -2 * protocol.scale_jitter, 2 * protocol.scale_jitter)
    scale = (1.0 + jitter) * (1.0 + protocol.scale_shift * separation * label)
    amplitude = rng.uniform(*protocol.amplitude_range) + protocol.amplitude_shift * separation * label
    direction = np.asarray(protocol.bump_direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction) + rng.normal(0.0, 0.1, 3)
    return SyntheticSpec(
        label=label,
        semi_axes=tuple(float(a * scale) for a in protocol.base_axes),
        bump_amplitude=float(amplitude),
        bump_width=float(rng.uniform(*protocol.bump_width_range)),
        bump_direction=tuple(float(d) for d in direction),
        noise_amplitude=protocol.noise_amplitude,
        seed=seed,
    )


def cohort_specs(count_per_class: int, separation: float, seed: int) -> List[Dict]:
    """Per-subject organ specs for a balanced cohort, labels alternating 0, 1"""
    rng = np.random.default_rng(seed)
    subjects = []
    for index in range(2 * count_per_class):
        label = index % 2
        organ_seeds = rng.integers(0, 2 ** 31 - 1, size=len(ORGAN_PROTOCOLS))
        subjects.append({
            "id": f"subj-{index:04d}",
            "label": label,
            "organs": {
                organ: draw_organ_spec(organ, label, separation, rng, int(organ_seed))
                for organ, organ_seed in zip(ORGAN_PROTOCOLS, organ_seeds)
            },
        })
    return subjects


def generate_organ(organ: str, spec: SyntheticSpec) -> VoxelGrid:
    protocol = ORGAN_PROTOCOLS[organ]
    return generate_synthetic(spec, protocol.dims, protocol.spacing)
