import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from src.errors import ConvergenceError, InsufficientSpectrumError
from src.spectra.fem import FemPair

logger = logging.getLogger(__name__)

SOLVER_SEED = 20190613
SHIFT_FACTOR = 0.01


@dataclass
class EigenBasis:
    """k smallest eigenpairs of A v = lambda B v, eigenvectors B-orthonormal in columns"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    method: str = "sparse"
    refinements: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)


def relative_residuals(fem: FemPair, eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> np.ndarray:
    """||A v - lambda B v|| / ||B v|| per eigenpair"""
    av = fem.stiffness @ eigenvectors
    bv = fem.mass @ eigenvectors
    numerator = np.linalg.norm(av - bv * eigenvalues, axis=0)
    return numerator / np.linalg.norm(bv, axis=0)


def normalize_eigenvectors(fem: FemPair, eigenvectors: np.ndarray) -> np.ndarray:
    """Scale to unit B-norm and make the largest-magnitude entry of each column positive"""
    norms = np.sqrt(np.einsum("ij,ij->j", eigenvectors, fem.mass @ eigenvectors))
    vectors = eigenvectors / norms
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def shift_for(fem: FemPair) -> float:
    """Negative shift below the spectrum, scaled like the eigenvalues (1/area)"""
    return -SHIFT_FACTOR * 4.0 * np.pi / fem.area


def _rayleigh_ritz(fem: FemPair, basis: np.ndarray):
    reduced_a = basis.T @ (fem.stiffness @ basis)
    reduced_b = basis.T @ (fem.mass @ basis)
    reduced_a = 0.5 * (reduced_a + reduced_a.T)
    reduced_b = 0.5 * (reduced_b + reduced_b.T)
    values, coefficients = scipy.linalg.eigh(reduced_a, reduced_b)
    return values, basis @ coefficients


def _refine(fem: FemPair, lu, eigenvalues, eigenvectors, tol: float, max_iterations: int):
    """Block inverse iteration with Rayleigh-Ritz until every residual is below tol"""
    residuals = relative_residuals(fem, eigenvalues, eigenvectors)
    iterations = 0
    while residuals.max() > tol and iterations < max_iterations:
        iterations += 1
        block = lu.solve(np.asarray(fem.mass @ eigenvectors))
        block, _ = np.linalg.qr(block)
        eigenvalues, eigenvectors = _rayleigh_ritz(fem, block)
        residuals = relative_residuals(fem, eigenvalues, eigenvectors)
        logger.debug(f"Refinement {iterations}: max residual {residuals.max():.3e}")
    return eigenvalues, eigenvectors, residuals, iterations


def solve_spectrum(fem: FemPair, k: int, tol: float = 1e-8,
                   method: Literal["auto", "sparse", "dense"] = "auto",
                   dense_threshold: int = 300, refine_iterations: int = 5,
                   max_iterations: Optional[int] = None) -> EigenBasis:
    """k smallest eigenpairs of the generalized problem A v = lambda B v.

    Large problems use shift-invert Lanczos (ARPACK) around a small negative
    shift with a sparse LU of A - sigma B; problems with at most
    ``dense_threshold`` vertices use a dense generalized eigensolver. Pairs
    whose residual exceeds ``tol`` are polished by block inverse iteration.
    """
    n = fem.size
    if k < 1:
        raise InsufficientSpectrumError(f"Requested {k} eigenpairs, need at least 1")
    if k >= n:
        raise InsufficientSpectrumError(f"Requested {k} eigenpairs from a problem of size {n}; k must be < V")

    use_dense = method == "dense" or (method == "auto" and n <= dense_threshold)
    sigma = shift_for(fem)
    lu = splu((fem.stiffness - sigma * fem.mass).tocsc())

    if use_dense:
        eigenvalues, eigenvectors = scipy.linalg.eigh(
            fem.stiffness.toarray(), fem.mass.toarray(), subset_by_index=[0, k - 1]
        )
        used = "dense"
    else:
        op_inv = LinearOperator(shape=fem.stiffness.shape, matvec=lu.solve, dtype=np.float64)
        v0 = np.random.default_rng(SOLVER_SEED).standard_normal(n)
        try:
            eigenvalues, eigenvectors = eigsh(
                fem.stiffness, k, M=fem.mass, sigma=sigma, which="LM",
                OPinv=op_inv, v0=v0, maxiter=max_iterations, tol=0,
            )
        except ArpackNoConvergence as e:
            best = e.eigenvalues if e.eigenvalues is not None else np.array([])
            raise ConvergenceError(
                f"ARPACK stopped after its iteration cap with {len(best)} of {k} eigenpairs", cause=e
            )
        order = np.argsort(eigenvalues, kind="stable")
        eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]
        used = "sparse"

    eigenvalues, eigenvectors, residuals, refinements = _refine(
        fem, lu, eigenvalues, eigenvectors, tol, refine_iterations
    )
    if residuals.max() > tol:
        raise ConvergenceError(
            f"Eigenpair residuals {residuals.max():.3e} above tolerance {tol:.1e} after "
            f"{refinements} refinement steps",
            residuals=residuals.tolist(),
        )

    eigenvectors = normalize_eigenvectors(fem, eigenvectors)
    residuals = relative_residuals(fem, eigenvalues, eigenvectors)
    logger.debug(
        f"Solved {k} eigenpairs ({used}) V={n}: lambda in [{eigenvalues[0]:.3e}, {eigenvalues[-1]:.3e}], "
        f"max residual {residuals.max():.3e}"
    )
    return EigenBasis(
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        residuals=residuals,
        method=used,
        refinements=refinements,
    )
