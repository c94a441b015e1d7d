import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import trimesh
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as graph_components
from skimage import measure

from src.errors import (
    DataError,
    EmptySurfaceError,
    FileFormatError,
    NonManifoldMeshError,
)
from src.geometry.volume import VoxelGrid
from src.storage import atomic_write_text

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
WELD_TOLERANCE = 1e-9
MAX_ICOSPHERE_SUBDIVISIONS = 7


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle surface in millimeter coordinates"""
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64)
        triangles = np.asarray(self.triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise DataError(f"Vertices must be (V, 3), got {vertices.shape}")
        if triangles.size == 0:
            triangles = triangles.reshape(0, 3)
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise DataError(f"Triangles must be (F, 3), got {triangles.shape}")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise DataError(f"Triangle index out of range for {len(vertices)} vertices")
        if not np.all(np.isfinite(vertices)):
            raise DataError("Vertex coordinates must be finite")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def corners(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    def transformed(self, rotation: np.ndarray = None, translation=(0.0, 0.0, 0.0), scale: float = 1.0) -> "TriMesh":
        """Similarity transform x -> scale * R x + t, connectivity unchanged"""
        vertices = self.vertices
        if rotation is not None:
            vertices = vertices @ np.asarray(rotation, dtype=np.float64).T
        vertices = scale * vertices + np.asarray(translation, dtype=np.float64)
        return TriMesh(vertices=vertices, triangles=self.triangles.copy())


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    a, b, c = mesh.corners()
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def surface_area(mesh: TriMesh) -> float:
    """Sum of triangle areas in mm^2"""
    return float(triangle_areas(mesh).sum())


def signed_volume(mesh: TriMesh) -> float:
    """Enclosed volume, positive for outward winding"""
    a, b, c = mesh.corners()
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def unique_edges(mesh: TriMesh) -> np.ndarray:
    directed = mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    return np.unique(np.sort(directed, axis=1), axis=0)


def euler_characteristic(mesh: TriMesh) -> int:
    """V - E + F with E counted as unique undirected edges"""
    return mesh.vertex_count - len(unique_edges(mesh)) + mesh.triangle_count


def connected_components(mesh: TriMesh) -> Tuple[int, np.ndarray]:
    """Number of vertex-connected components and the per-vertex component label"""
    n = mesh.vertex_count
    if mesh.triangle_count == 0:
        return n, np.arange(n)
    edges = unique_edges(mesh)
    adjacency = coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)
    )
    count, labels = graph_components(adjacency, directed=False)
    return int(count), labels


def is_closed_manifold(mesh: TriMesh) -> bool:
    """Every edge in exactly two triangles, traversed once in each direction"""
    if mesh.triangle_count == 0:
        return False
    directed = mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    _, undirected_counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
    if np.any(undirected_counts != 2):
        return False
    _, directed_counts = np.unique(directed, axis=0, return_counts=True)
    return bool(np.all(directed_counts == 1))


def weld_vertices(vertices: np.ndarray, triangles: np.ndarray, tolerance: float = WELD_TOLERANCE):
    """Merge vertices closer than tolerance (grid-rounded) and reindex triangles"""
    keys = np.round(vertices / tolerance).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    return vertices[first], inverse[triangles]


def clean_mesh(vertices: np.ndarray, triangles: np.ndarray,
               tolerance: float = WELD_TOLERANCE, min_area: float = DEGENERATE_AREA) -> TriMesh:
    """Weld, drop degenerate triangles, drop unreferenced vertices"""
    vertices, triangles = weld_vertices(vertices, triangles, tolerance)
    repeated = (
        (triangles[:, 0] == triangles[:, 1])
        | (triangles[:, 1] == triangles[:, 2])
        | (triangles[:, 2] == triangles[:, 0])
    )
    a, b, c = vertices[triangles[:, 0]], vertices[triangles[:, 1]], vertices[triangles[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    keep = ~repeated & (areas >= min_area)
    dropped = int((~keep).sum())
    if dropped:
        logger.debug(f"Removed {dropped} degenerate triangles")
    triangles = triangles[keep]

    used = np.unique(triangles)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(vertices=vertices[used], triangles=remap[triangles])


def marching_cubes(grid: VoxelGrid, iso: float = 0.5,
                   tolerance: float = WELD_TOLERANCE, min_area: float = DEGENERATE_AREA) -> TriMesh:
    """Extract the closed isosurface of a binary occupancy grid.

    Occupancy is sampled as 0/1 at voxel centers; the grid is padded by one
    empty voxel so surfaces touching the border are still closed. Output is in
    millimeters with spacing and origin applied, outward wound.
    """
    if not 0.0 < iso < 1.0:
        raise DataError(f"iso must lie in (0, 1), got {iso}")
    if not grid.occupancy.any():
        raise EmptySurfaceError("Voxel grid has no occupied voxel, no isosurface exists")

    padded = np.pad(grid.occupancy.astype(np.float64), 1, mode="constant", constant_values=0.0)
    vertices, faces, _, _ = measure.marching_cubes(
        padded,
        level=iso,
        spacing=grid.spacing,
        method="lewiner",
        allow_degenerate=False,
    )
    vertices = vertices.astype(np.float64) - np.asarray(grid.spacing) + np.asarray(grid.origin)
    mesh = clean_mesh(vertices, faces.astype(np.int64), tolerance, min_area)

    if mesh.triangle_count == 0:
        raise EmptySurfaceError("Isosurface collapsed to zero triangles")
    if signed_volume(mesh) < 0:
        mesh = TriMesh(vertices=mesh.vertices, triangles=mesh.triangles[:, ::-1].copy())
    if not is_closed_manifold(mesh):
        raise NonManifoldMeshError(
            f"Marching cubes produced a non-manifold surface ({mesh.vertex_count} vertices, "
            f"{mesh.triangle_count} triangles)"
        )

    logger.debug(f"Extracted surface: V={mesh.vertex_count}, F={mesh.triangle_count}")
    return mesh


def icosphere(subdivisions: int = 0, radius: float = 1.0) -> TriMesh:
    """Geodesic sphere with 20*4^s triangles, vertices projected onto the radius"""
    if not 0 <= subdivisions <= MAX_ICOSPHERE_SUBDIVISIONS:
        raise DataError(f"subdivisions must be in [0, {MAX_ICOSPHERE_SUBDIVISIONS}], got {subdivisions}")
    if radius <= 0:
        raise DataError(f"radius must be positive, got {radius}")
    sphere = trimesh.creation.icosphere(subdivisions=subdivisions, radius=1.0)
    vertices = np.asarray(sphere.vertices, dtype=np.float64)
    vertices = radius * vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
    mesh = TriMesh(vertices=vertices, triangles=np.asarray(sphere.faces, dtype=np.int64))
    if signed_volume(mesh) < 0:
        mesh = TriMesh(vertices=mesh.vertices, triangles=mesh.triangles[:, ::-1].copy())
    return mesh


def mesh_to_off(mesh: TriMesh) -> str:
    tm = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False)
    return trimesh.exchange.off.export_off(tm, digits=12)


def save_off(mesh: TriMesh, path: Union[str, Path]) -> Path:
    """Write an ASCII OFF file atomically"""
    return atomic_write_text(path, mesh_to_off(mesh))


def load_off(path: Union[str, Path]) -> TriMesh:
    """Read an ASCII OFF file with triangular faces"""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DataError(f"Cannot read mesh file {path}: {e}", cause=e)
    if not text.lstrip().startswith("OFF"):
        raise FileFormatError(f"{path} is not an OFF file")
    try:
        loaded = trimesh.exchange.off.load_off(io.StringIO(text))
    except Exception as e:
        raise FileFormatError(f"Failed to parse OFF file {path}: {e}", cause=e)
    return TriMesh(vertices=loaded["vertices"], triangles=loaded["faces"])
