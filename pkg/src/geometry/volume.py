import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.errors import DataError, FileFormatError
from src.storage import atomic_write_bytes

logger = logging.getLogger(__name__)

VOX_MAGIC = b"VOX1"
# magic, 3 x u32 dims, 3 x f32 spacing, 3 x f32 origin
VOX_HEADER = struct.Struct("<4s3I3f3f")


@dataclass(frozen=True)
class VoxelGrid:
    """Binary occupancy volume with physical spacing (a stand-in for an organ segmentation).

    ``occupancy`` is indexed ``[x, y, z]``; voxel ``(i, j, k)`` has its center at
    ``origin + (i, j, k) * spacing`` in millimeters.
    """
    occupancy: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise DataError(f"Occupancy must be a non-empty 3D array, got shape {occ.shape}")
        if len(self.spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise DataError(f"Spacing must be three positive values, got {self.spacing}")
        if len(self.origin) != 3 or not all(np.isfinite(o) for o in self.origin):
            raise DataError(f"Origin must be three finite values, got {self.origin}")
        object.__setattr__(self, "occupancy", occ.astype(bool))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.occupancy.shape)

    @property
    def occupied_count(self) -> int:
        return int(self.occupancy.sum())

    def voxel_centers(self, axis: int) -> np.ndarray:
        """Millimeter coordinates of voxel centers along one axis"""
        return self.origin[axis] + np.arange(self.dims[axis]) * self.spacing[axis]

    def to_bytes(self) -> bytes:
        nx, ny, nz = self.dims
        header = VOX_HEADER.pack(VOX_MAGIC, nx, ny, nz, *self.spacing, *self.origin)
        # x-fastest layout == Fortran order for an [x, y, z] array
        body = self.occupancy.astype(np.uint8).ravel(order="F").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "VoxelGrid":
        if len(data) < VOX_HEADER.size:
            raise FileFormatError(f"VOX1 data too short: {len(data)} bytes")
        magic, nx, ny, nz, sx, sy, sz, ox, oy, oz = VOX_HEADER.unpack_from(data, 0)
        if magic != VOX_MAGIC:
            raise FileFormatError(f"Bad voxel magic: {magic!r}")
        count = nx * ny * nz
        body = data[VOX_HEADER.size:]
        if len(body) != count:
            raise FileFormatError(f"Expected {count} occupancy bytes, found {len(body)}")
        values = np.frombuffer(body, dtype=np.uint8)
        if np.any(values > 1):
            raise FileFormatError("Occupancy bytes must be 0 or 1")
        occupancy = values.reshape((nx, ny, nz), order="F").astype(bool)
        return cls(occupancy=occupancy, spacing=(sx, sy, sz), origin=(ox, oy, oz))


def save_voxels(grid: VoxelGrid, path: Union[str, Path]) -> Path:
    """Write a VOX1 file atomically"""
    return atomic_write_bytes(path, grid.to_bytes())


def load_voxels(path: Union[str, Path]) -> VoxelGrid:
    """Read a VOX1 file"""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read voxel file {path}: {e}", cause=e)
    grid = VoxelGrid.from_bytes(data)
    logger.debug(f"Loaded {path}: dims={grid.dims}, occupied={grid.occupied_count}")
    return grid
