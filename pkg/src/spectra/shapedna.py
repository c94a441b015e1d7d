import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from src.errors import DataError, FileFormatError, InsufficientSpectrumError, ShapeMismatchError
from src.geometry.mesh import TriMesh, connected_components
from src.spectra.fem import FemPair, assemble_fem
from src.spectra.solver import EigenBasis, solve_spectrum
from src.storage import atomic_write_text

logger = logging.getLogger(__name__)

ZERO_MODE_FACTOR = 1e-6


@dataclass
class ShapeDNA:
    """First l non-zero Laplace-Beltrami eigenvalues and their index-reweighted variant"""
    eigenvalues: np.ndarray
    reweighted: np.ndarray
    residuals: np.ndarray
    vertex_count: int
    triangle_count: int
    area: float
    tol: float

    @property
    def length(self) -> int:
        return len(self.eigenvalues)

    @property
    def residual_max(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0

    def metadata(self) -> Dict[str, float]:
        return {
            "V": self.vertex_count,
            "F": self.triangle_count,
            "area": self.area,
            "tol": self.tol,
            "residual_max": self.residual_max,
        }


def reweight(eigenvalues: np.ndarray) -> np.ndarray:
    """lambda_i / i with 1-based i"""
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    return eigenvalues / np.arange(1, len(eigenvalues) + 1, dtype=np.float64)


def zero_mode_mask(eigenvalues: np.ndarray, retained: Optional[int] = None) -> np.ndarray:
    """Leading near-zero block of an ascending spectrum.

    An eigenvalue counts as zero when it falls below ZERO_MODE_FACTOR times
    the largest eigenvalue kept if it were dropped, the one ``retained``
    places further on. Eigenvalues past that point never set the scale.
    """
    magnitudes = np.abs(np.asarray(eigenvalues, dtype=np.float64))
    n = len(magnitudes)
    retained = n if retained is None else max(int(retained), 1)
    mask = np.zeros(n, dtype=bool)
    for j in range(n):
        scale = magnitudes[min(j + retained, n - 1)]
        if magnitudes[j] >= ZERO_MODE_FACTOR * scale:
            break
        mask[j] = True
    return mask


def _solve_with_zero_modes(mesh: TriMesh, wanted: int, tol: float, lump: bool, **solver_options):
    components, _ = connected_components(mesh)
    k = wanted + components
    if k >= mesh.vertex_count:
        raise InsufficientSpectrumError(
            f"Mesh with {mesh.vertex_count} vertices and {components} components cannot "
            f"provide {wanted} non-zero eigenvalues"
        )
    fem = assemble_fem(mesh, lump=lump)
    basis = solve_spectrum(fem, k, tol=tol, **solver_options)
    nonzero = ~zero_mode_mask(basis.eigenvalues, retained=wanted)
    if int(nonzero.sum()) < wanted:
        raise InsufficientSpectrumError(
            f"Only {int(nonzero.sum())} non-zero eigenvalues among {k}, need {wanted}"
        )
    keep = np.flatnonzero(nonzero)[:wanted]
    return fem, basis, keep


def shape_dna(mesh: TriMesh, l: int = 50, tol: float = 1e-8, lump: bool = False, **solver_options) -> ShapeDNA:
    """ShapeDNA descriptor of a surface.

    Solves for l + c eigenpairs (c connected components), drops the c zero
    modes and returns the first l remaining eigenvalues with lambda_i / i.
    """
    if l < 1:
        raise DataError(f"Descriptor length must be >= 1, got {l}")
    fem, basis, keep = _solve_with_zero_modes(mesh, l, tol, lump, **solver_options)
    eigenvalues = basis.eigenvalues[keep]
    return ShapeDNA(
        eigenvalues=eigenvalues,
        reweighted=reweight(eigenvalues),
        residuals=basis.residuals[keep],
        vertex_count=mesh.vertex_count,
        triangle_count=mesh.triangle_count,
        area=fem.area,
        tol=tol,
    )


def abdomen_print(liver: Optional[ShapeDNA] = None, spleen: Optional[ShapeDNA] = None) -> np.ndarray:
    """Concatenated reweighted spectra [liver || spleen]; a missing organ is skipped"""
    parts = [dna for dna in (liver, spleen) if dna is not None]
    if not parts:
        raise DataError("AbdomenPrint needs at least one organ descriptor")
    if len(parts) == 2 and liver.length != spleen.length:
        raise ShapeMismatchError(
            f"Descriptor lengths differ: liver {liver.length}, spleen {spleen.length}",
            shapes=(liver.length, spleen.length),
        )
    return np.concatenate([dna.reweighted for dna in parts])


def eigenfunction_export(mesh: TriMesh, k: int = 7, tol: float = 1e-8, lump: bool = False, **solver_options):
    """First k non-constant eigenfunctions as a (V, k) array, plus the FEM pair and spectrum"""
    if k < 1:
        raise DataError(f"Eigenfunction count must be >= 1, got {k}")
    fem, basis, keep = _solve_with_zero_modes(mesh, k, tol, lump, **solver_options)
    return basis.eigenvectors[:, keep], fem, EigenBasis(
        eigenvalues=basis.eigenvalues[keep],
        eigenvectors=basis.eigenvectors[:, keep],
        residuals=basis.residuals[keep],
        method=basis.method,
        refinements=basis.refinements,
    )


def b_orthonormality_error(table: np.ndarray, fem: FemPair) -> float:
    """max |F^T B F - I|"""
    gram = table.T @ (fem.mass @ table)
    return float(np.max(np.abs(gram - np.eye(table.shape[1]))))


def eigenfunction_csv(table: np.ndarray) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([f"f{i}" for i in range(1, table.shape[1] + 1)])
    for row in table:
        writer.writerow([repr(float(x)) for x in row])
    return buffer.getvalue()


def save_eigenfunctions(table: np.ndarray, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, eigenfunction_csv(table))


def load_eigenfunctions(path: Union[str, Path]) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or not all(name.startswith("f") for name in rows[0]):
        raise FileFormatError(f"{path} is not an eigenfunction table")
    try:
        return np.array([[float(x) for x in row] for row in rows[1:]], dtype=np.float64).reshape(-1, len(rows[0]))
    except ValueError as e:
        raise FileFormatError(f"Non-numeric entry in {path}: {e}", cause=e)


def shape_dna_csv(dna: ShapeDNA) -> str:
    buffer = io.StringIO()
    meta = dna.metadata()
    buffer.write("# " + ",".join(f"{key}={meta[key]!r}" for key in ("V", "F", "area", "tol", "residual_max")) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["i", "lambda", "lambda_hat"])
    for i, (lam, lam_hat) in enumerate(zip(dna.eigenvalues, dna.reweighted), start=1):
        writer.writerow([i, repr(float(lam)), repr(float(lam_hat))])
    return buffer.getvalue()


def save_shape_dna(dna: ShapeDNA, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, shape_dna_csv(dna))


def load_shape_dna(path: Union[str, Path]) -> ShapeDNA:
    """Read a ShapeDNA CSV; per-pair residuals are not stored, only their maximum"""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataError(f"Cannot read descriptor file {path}: {e}", cause=e)
    if len(lines) < 2 or not lines[0].startswith("#"):
        raise FileFormatError(f"{path} lacks the ShapeDNA metadata line")
    try:
        meta = dict(item.split("=", 1) for item in lines[0][1:].strip().split(","))
        rows = list(csv.reader(lines[1:]))
        if rows[0] != ["i", "lambda", "lambda_hat"]:
            raise FileFormatError(f"Unexpected ShapeDNA header in {path}: {rows[0]}")
        eigenvalues = np.array([float(r[1]) for r in rows[1:]], dtype=np.float64)
        reweighted = np.array([float(r[2]) for r in rows[1:]], dtype=np.float64)
        return ShapeDNA(
            eigenvalues=eigenvalues,
            reweighted=reweighted,
            residuals=np.full(len(eigenvalues), float(meta["residual_max"])),
            vertex_count=int(meta["V"]),
            triangle_count=int(meta["F"]),
            area=float(meta["area"]),
            tol=float(meta["tol"]),
        )
    except (KeyError, ValueError, IndexError) as e:
        raise FileFormatError(f"Malformed ShapeDNA file {path}: {e}", cause=e)
