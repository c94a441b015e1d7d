from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

STRUCTURES = ("liver", "spleen")


class GeometryConfig(BaseModel):
    """Surface extraction and sampling configuration"""
    iso: float = Field(0.5, gt=0.0, lt=1.0, description="Isosurface level on 0/1 occupancy")
    weld_tolerance: float = Field(1e-9, gt=0.0, description="Vertex welding tolerance (mm)")
    min_triangle_area: float = Field(1e-12, ge=0.0, description="Degenerate triangle cutoff (mm^2)")
    points_per_cloud: int = Field(1024, ge=1, description="Surface samples per organ")
    unit_scale: bool = Field(False, description="Divide clouds by their RMS radius")


class SpectraConfig(BaseModel):
    """Laplace-Beltrami spectrum configuration"""
    descriptor_length: int = Field(50, ge=1, description="Non-zero eigenvalues per organ (l)")
    tol: float = Field(1e-8, gt=0.0, description="Relative eigenpair residual tolerance")
    lump: bool = Field(False, description="Use the lumped (diagonal) mass matrix")
    dense_threshold: int = Field(300, ge=1, description="Vertex count at or below which the dense solver runs")
    refine_iterations: int = Field(5, ge=0, description="Block inverse-iteration refinement cap")
    max_arpack_iterations: Optional[int] = Field(None, ge=1, description="ARPACK iteration cap")
    eigenfunctions: int = Field(7, ge=1, description="Exported non-constant eigenfunctions")


class CohortConfig(BaseModel):
    """Synthetic cohort configuration"""
    count_per_class: int = Field(100, ge=2)
    separation: float = Field(1.0, ge=0.0, description="Class shift of the shape parameter distributions")
    seed: int = Field(7, ge=0)
    name: str = Field("synthetic-abdomen")


class MSPNetConfig(BaseModel):
    """Multi-structure PointNet configuration"""
    points: int = Field(1024, ge=8, description="Points per cloud (n)")
    point_widths: List[int] = Field(default_factory=lambda: [64, 64, 64, 128, 1024])
    tnet_point_widths: List[int] = Field(default_factory=lambda: [64, 128, 1024])
    tnet_dense_widths: List[int] = Field(default_factory=lambda: [512, 256])
    head_widths: List[int] = Field(default_factory=lambda: [512, 256, 2])
    learning_rate: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    epochs: int = Field(200, ge=0)
    batch_size: int = Field(16, ge=1)
    seed: int = Field(0, ge=0)
    structures: List[str] = Field(default_factory=lambda: list(STRUCTURES))
    shared_weights: bool = Field(False, description="One set of branch weights for every structure")
    feature_norm: bool = Field(False, description="Per-feature affine-only normalization")
    orthogonality_weight: float = Field(0.0, ge=0.0, description="Weight of the ||T T^T - I||^2 term")
    precision: Literal["f32", "f64"] = Field("f64")

    @field_validator("point_widths", "tnet_point_widths", "tnet_dense_widths", "head_widths")
    def validate_widths(cls, v):
        if not v:
            raise ValueError("Layer width lists must not be empty")
        if any(w < 1 for w in v):
            raise ValueError("Layer widths must be >= 1")
        return v

    @field_validator("head_widths")
    def validate_head(cls, v):
        if v[-1] != 2:
            raise ValueError("Last head width must equal the class count 2")
        return v

    @field_validator("structures")
    def validate_structures(cls, v):
        if not v:
            raise ValueError("At least one structure is required")
        for s in v:
            if s not in STRUCTURES:
                raise ValueError(f"Unknown structure: {s}")
        if len(set(v)) != len(v):
            raise ValueError("Structures must be unique")
        # fusion order is fixed: liver before spleen
        return [s for s in STRUCTURES if s in v]

    @property
    def feature_width(self) -> int:
        return self.point_widths[-1]


class GbtConfig(BaseModel):
    """Gradient boosted trees configuration"""
    rounds: int = Field(200, ge=1)
    learning_rate: float = Field(0.1, gt=0.0, le=1.0)
    max_depth: int = Field(3, ge=1)
    min_samples_leaf: int = Field(4, ge=1)
    seed: int = Field(0, ge=0)
    row_subsample: float = Field(1.0, gt=0.0, le=1.0)
    col_subsample: float = Field(1.0, gt=0.0, le=1.0)


class TsneConfig(BaseModel):
    """t-SNE configuration"""
    perplexity: float = Field(30.0, gt=1.0)
    iterations: int = Field(1000, ge=1)
    exaggeration: float = Field(12.0, ge=1.0)
    exaggeration_iterations: int = Field(250, ge=0)
    initial_momentum: float = Field(0.5, ge=0.0, lt=1.0)
    final_momentum: float = Field(0.8, ge=0.0, lt=1.0)
    learning_rate: float = Field(200.0, gt=0.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def validate_schedule(self):
        if self.exaggeration_iterations > self.iterations:
            raise ValueError("exaggeration_iterations cannot exceed iterations")
        return self


class RuntimeConfig(BaseModel):
    """Process-level configuration"""
    seed: int = Field(0, ge=0, description="Base seed for sampling and splitting")
    threads: int = Field(1, ge=1, description="Workers for per-subject featurization")
    precision: Literal["f32", "f64"] = Field("f64")
    failure_fraction: float = Field(0.10, ge=0.0, le=1.0, description="Tolerated per-subject failure share")
    log_level: str = Field("INFO")
    log_json: bool = Field(False)

    @field_validator("log_level")
    def validate_log_level(cls, v):
        v = v.upper()
        if v not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Invalid log level: {v}")
        return v
