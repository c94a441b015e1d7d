import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from src.errors import DegenerateTriangleError, NumericalError
from src.geometry.mesh import DEGENERATE_AREA, TriMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FemPair:
    """Stiffness A and mass B of the P1 Laplace-Beltrami discretization"""
    stiffness: sparse.csc_matrix
    mass: sparse.csc_matrix
    area: float
    lumped: bool = False

    @property
    def size(self) -> int:
        return self.stiffness.shape[0]

    def validate(self, symmetry_tol: float = 1e-12, row_sum_tol: float = 1e-9, area_tol: float = 1e-9) -> None:
        """Check symmetry, constant null space and mass/area consistency"""
        a, b = self.stiffness, self.mass
        scale = max(abs(a).max(), 1e-300)
        asym = abs(a - a.T).max() if a.nnz else 0.0
        if asym > symmetry_tol * scale:
            raise NumericalError(f"Stiffness matrix not symmetric: max deviation {asym:.3e}")
        row_sums = np.abs(np.asarray(a.sum(axis=1)).ravel())
        if row_sums.size and row_sums.max() > row_sum_tol * scale:
            raise NumericalError(f"Stiffness row sums not zero: max {row_sums.max():.3e}")
        total = float(b.sum())
        if abs(total - self.area) > area_tol * self.area:
            raise NumericalError(f"Mass sum {total!r} differs from surface area {self.area!r}")
        if np.any(b.diagonal() <= 0):
            raise NumericalError("Mass matrix has a non-positive diagonal entry")


def assemble_fem(mesh: TriMesh, lump: bool = False, min_area: float = DEGENERATE_AREA) -> FemPair:
    """Assemble cotangent stiffness and consistent (or lumped) mass matrices.

    For the angle alpha_ij opposite edge ij, A_ij -= cot(alpha_ij) / 2 and the
    diagonal is minus the row sum. The consistent mass puts T/6 on the
    diagonal and T/12 off the diagonal for a triangle of area T; the lumped
    mass puts T/3 on each corner's diagonal.
    """
    t = mesh.triangles
    t1, t2, t3 = t[:, 0], t[:, 1], t[:, 2]
    v1, v2, v3 = mesh.vertices[t1], mesh.vertices[t2], mesh.vertices[t3]
    v2mv1 = v2 - v1
    v3mv2 = v3 - v2
    v1mv3 = v1 - v3

    cross = np.cross(v3mv2, v1mv3)
    double_area = np.sqrt(np.sum(cross * cross, axis=1))
    areas = 0.5 * double_area
    degenerate = np.flatnonzero(~(areas >= min_area))
    if degenerate.size:
        index = int(degenerate[0])
        raise DegenerateTriangleError(
            f"Triangle {index} has area {areas[index]:.3e} below {min_area:.1e}", triangle_index=index
        )

    # 4 * area, so each term below is -cot/2 of the opposite angle
    quad = 2.0 * double_area
    a12 = np.sum(v3mv2 * v1mv3, axis=1) / quad
    a23 = np.sum(v1mv3 * v2mv1, axis=1) / quad
    a31 = np.sum(v2mv1 * v3mv2, axis=1) / quad
    a11 = -a12 - a31
    a22 = -a12 - a23
    a33 = -a31 - a23

    n = mesh.vertex_count
    i = np.column_stack((t1, t2, t2, t3, t3, t1, t1, t2, t3)).reshape(-1)
    j = np.column_stack((t2, t1, t3, t2, t1, t3, t1, t2, t3)).reshape(-1)
    local_a = np.column_stack((a12, a12, a23, a23, a31, a31, a11, a22, a33)).reshape(-1)
    stiffness = sparse.csc_matrix((local_a, (i, j)), shape=(n, n))

    if lump:
        b_ii = areas / 3.0
        diag_index = np.column_stack((t1, t2, t3)).reshape(-1)
        local_b = np.column_stack((b_ii, b_ii, b_ii)).reshape(-1)
        mass = sparse.csc_matrix((local_b, (diag_index, diag_index)), shape=(n, n))
    else:
        b_ii = areas / 6.0
        b_ij = areas / 12.0
        local_b = np.column_stack((b_ij, b_ij, b_ij, b_ij, b_ij, b_ij, b_ii, b_ii, b_ii)).reshape(-1)
        mass = sparse.csc_matrix((local_b, (i, j)), shape=(n, n))

    area = float(areas.sum())
    logger.debug(f"Assembled FEM pair: V={n}, F={len(t)}, area={area:.4f}, lumped={lump}")
    return FemPair(stiffness=stiffness, mass=mass, area=area, lumped=lump)
