import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from src.errors import DataError, DegenerateMeshError, FileFormatError
from src.geometry.mesh import TriMesh, triangle_areas
from src.storage import atomic_write_bytes

logger = logging.getLogger(__name__)

PCL_MAGIC = b"PCL1"
PCL_HEADER = struct.Struct("<4sI")


@dataclass(frozen=True)
class PointCloud:
    """Unordered set of n points in millimeters; any row permutation is the same shape"""
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise DataError(f"Point cloud must be (n, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise DataError("Point coordinates must be finite")
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return len(self.points)

    def to_bytes(self) -> bytes:
        body = self.points.astype("<f4").tobytes(order="C")
        return PCL_HEADER.pack(PCL_MAGIC, self.n) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "PointCloud":
        if len(data) < PCL_HEADER.size:
            raise FileFormatError(f"PCL1 data too short: {len(data)} bytes")
        magic, count = PCL_HEADER.unpack_from(data, 0)
        if magic != PCL_MAGIC:
            raise FileFormatError(f"Bad cloud magic: {magic!r}")
        body = data[PCL_HEADER.size:]
        if len(body) != 12 * count:
            raise FileFormatError(f"Expected {count} points, found {len(body)} payload bytes")
        points = np.frombuffer(body, dtype="<f4").reshape(count, 3).astype(np.float64)
        return cls(points=points)


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Area-uniform surface samples.

    A triangle is drawn with probability proportional to its area, then a
    point is placed uniformly inside it with reflected barycentric coordinates.
    """
    if n < 1:
        raise DataError(f"Sample count must be >= 1, got {n}")
    if mesh.triangle_count == 0:
        raise DegenerateMeshError("Cannot sample a mesh without triangles")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if not total > 0:
        raise DegenerateMeshError("Cannot sample a mesh with zero surface area")

    rng = np.random.default_rng(seed)
    chosen = rng.choice(mesh.triangle_count, size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]

    a, b, c = mesh.corners()
    a, b, c = a[chosen], b[chosen], c[chosen]
    points = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return PointCloud(points=points)


def center_cloud(cloud: PointCloud, unit_scale: bool = False) -> PointCloud:
    """Move the centroid to the origin; optionally divide by the RMS radius"""
    centered = cloud.points - cloud.points.mean(axis=0)
    if unit_scale:
        rms = np.sqrt(np.mean(np.sum(centered ** 2, axis=1)))
        if rms > 0:
            centered = centered / rms
    return PointCloud(points=centered)


def resample_cloud(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Exactly n points; drawn without replacement when the cloud is large enough"""
    if n < 1:
        raise DataError(f"Sample count must be >= 1, got {n}")
    if cloud.n == 0:
        raise DataError("Cannot resample an empty cloud")
    rng = np.random.default_rng(seed)
    index = rng.choice(cloud.n, size=n, replace=cloud.n < n)
    return PointCloud(points=cloud.points[index])


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically by (x, y, z)"""
    points = np.asarray(points)
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return points[order]


def save_cloud(cloud: PointCloud, path: Union[str, Path]) -> Path:
    return atomic_write_bytes(path, cloud.to_bytes())


def load_cloud(path: Union[str, Path]) -> PointCloud:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read cloud file {path}: {e}", cause=e)
    return PointCloud.from_bytes(data)
