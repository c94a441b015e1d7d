from src.geometry.mesh import (
    TriMesh,
    connected_components,
    euler_characteristic,
    icosphere,
    is_closed_manifold,
    load_off,
    marching_cubes,
    save_off,
    surface_area,
    triangle_areas,
)
from src.geometry.sampling import (
    PointCloud,
    canonical_order,
    center_cloud,
    load_cloud,
    resample_cloud,
    sample_surface,
    save_cloud,
)
from src.geometry.synthetic import SyntheticSpec, cohort_specs, generate_organ, generate_synthetic
from src.geometry.volume import VoxelGrid, load_voxels, save_voxels

__all__ = [
    "PointCloud",
    "SyntheticSpec",
    "TriMesh",
    "VoxelGrid",
    "canonical_order",
    "center_cloud",
    "cohort_specs",
    "connected_components",
    "euler_characteristic",
    "generate_organ",
    "generate_synthetic",
    "icosphere",
    "is_closed_manifold",
    "load_cloud",
    "load_off",
    "load_voxels",
    "marching_cubes",
    "resample_cloud",
    "sample_surface",
    "save_cloud",
    "save_off",
    "save_voxels",
    "surface_area",
    "triangle_areas",
]
