from src.spectra.fem import FemPair, assemble_fem
from src.spectra.shapedna import (
    ShapeDNA,
    abdomen_print,
    b_orthonormality_error,
    eigenfunction_export,
    load_eigenfunctions,
    load_shape_dna,
    reweight,
    save_eigenfunctions,
    save_shape_dna,
    shape_dna,
)
from src.spectra.solver import EigenBasis, solve_spectrum

__all__ = [
    "EigenBasis",
    "FemPair",
    "ShapeDNA",
    "abdomen_print",
    "assemble_fem",
    "b_orthonormality_error",
    "eigenfunction_export",
    "load_eigenfunctions",
    "load_shape_dna",
    "reweight",
    "save_eigenfunctions",
    "save_shape_dna",
    "shape_dna",
    "solve_spectrum",
]
