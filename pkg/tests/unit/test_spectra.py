import numpy as np
import pytest
import scipy.linalg

from src.errors import DataError, DegenerateTriangleError, FileFormatError, InsufficientSpectrumError, ShapeMismatchError
from src.geometry.mesh import TriMesh, icosphere
from src.spectra.fem import assemble_fem
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
    zero_mode_mask,
)
from src.spectra.solver import solve_spectrum


def random_rotation(seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def descriptor(values) -> ShapeDNA:
    values = np.asarray(values, dtype=np.float64)
    return ShapeDNA(eigenvalues=values, reweighted=reweight(values), residuals=np.zeros(len(values)),
                    vertex_count=10, triangle_count=16, area=1.0, tol=1e-8)


class TestFem:
    """Cotangent stiffness and mass assembly"""

    @pytest.mark.parametrize("lump", [False, True])
    def test_matrices_are_consistent(self, unit_sphere, lump):
        """Test symmetry, zero row sums and mass equal to area"""
        fem = assemble_fem(unit_sphere, lump=lump)
        fem.validate()
        assert fem.size == unit_sphere.vertex_count
        assert fem.mass.sum() == pytest.approx(fem.area, rel=1e-12)
        assert np.allclose(fem.stiffness @ np.ones(fem.size), 0.0, atol=1e-10)

    def test_lumped_mass_is_diagonal(self, unit_sphere):
        """Test the lumped mass has no off-diagonal entries"""
        mass = assemble_fem(unit_sphere, lump=True).mass
        assert mass.nnz == unit_sphere.vertex_count

    def test_degenerate_triangle_reported(self):
        """Test a zero-area triangle is named by index"""
        mesh = TriMesh(
            vertices=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            triangles=np.array([[0, 1, 3], [0, 1, 2]]),
        )
        with pytest.raises(DegenerateTriangleError) as excinfo:
            assemble_fem(mesh)
        assert excinfo.value.triangle_index == 1


class TestSolver:
    """Generalized symmetric eigensolver"""

    def test_sparse_matches_dense_oracle(self):
        """Test shift-invert Lanczos agrees with a dense generalized solve"""
        fem = assemble_fem(icosphere(2))
        sparse = solve_spectrum(fem, 10, method="sparse")
        oracle = scipy.linalg.eigh(fem.stiffness.toarray(), fem.mass.toarray(), eigvals_only=True)[:10]
        assert sparse.method == "sparse"
        assert np.allclose(sparse.eigenvalues[1:], oracle[1:], rtol=1e-8)
        assert abs(sparse.eigenvalues[0]) < 1e-8

    def test_dense_path(self):
        """Test small problems use the dense solver and agree with the sparse one"""
        fem = assemble_fem(icosphere(2))
        dense = solve_spectrum(fem, 6)
        sparse = solve_spectrum(fem, 6, method="sparse")
        assert dense.method == "dense"
        assert np.allclose(dense.eigenvalues[1:], sparse.eigenvalues[1:], rtol=1e-8)

    def test_residuals_below_tolerance(self, unit_sphere):
        """Test every returned pair meets the residual tolerance"""
        basis = solve_spectrum(assemble_fem(unit_sphere), 8, tol=1e-8)
        assert basis.k == 8
        assert np.all(basis.residuals <= 1e-8)
        assert np.all(np.diff(basis.eigenvalues) >= -1e-12)

    def test_too_many_eigenpairs(self):
        """Test k must stay below the vertex count"""
        fem = assemble_fem(icosphere(0))
        with pytest.raises(InsufficientSpectrumError):
            solve_spectrum(fem, fem.size)


class TestShapeDNA:
    """Spectral descriptors"""

    def test_unit_sphere_spectrum(self):
        """Test eigenvalues approach l(l+1) with multiplicity 2l+1"""
        dna = shape_dna(icosphere(4), l=15)
        expected = np.array([2.0] * 3 + [6.0] * 5 + [12.0] * 7)
        assert np.allclose(dna.eigenvalues[:8], expected[:8], rtol=2e-2)
        assert np.allclose(dna.eigenvalues[8:], expected[8:], rtol=5e-2)
        assert dna.residual_max <= 1e-8

    def test_scaling_law(self, unit_sphere):
        """Test scaling the surface by s divides eigenvalues by s^2"""
        base = shape_dna(unit_sphere, l=6)
        scaled = shape_dna(unit_sphere.transformed(scale=2.0), l=6)
        assert np.allclose(scaled.eigenvalues, base.eigenvalues / 4.0, rtol=1e-6)

    def test_isometry_invariance(self, unit_sphere):
        """Test rotation and translation leave the descriptor unchanged"""
        base = shape_dna(unit_sphere, l=6)
        moved = shape_dna(unit_sphere.transformed(rotation=random_rotation(3), translation=(5.0, -2.0, 1.0)), l=6)
        assert np.allclose(moved.eigenvalues, base.eigenvalues, rtol=1e-8)

    def test_zero_modes_dropped_per_component(self):
        """Test a two-component surface drops two zero eigenvalues"""
        small, large = icosphere(2, radius=1.0), icosphere(2, radius=2.0)
        mesh = TriMesh(
            vertices=np.vstack([small.vertices, large.vertices + [10.0, 0.0, 0.0]]),
            triangles=np.vstack([small.triangles, large.triangles + small.vertex_count]),
        )
        dna = shape_dna(mesh, l=4)
        assert np.all(dna.eigenvalues > 0)
        assert np.allclose(dna.eigenvalues[:3], 0.5, rtol=3e-2)

    def test_zero_mode_mask_scale(self):
        """Test the zero cutoff is set by the kept eigenvalues, not by extra ones past them"""
        spectrum = np.array([-1e-15, 2e-15, 3.0, 4.0, 5.0])
        assert zero_mode_mask(spectrum, retained=2).tolist() == [True, True, False, False, False]
        short = np.array([1e-14, 1.0, 2.0, 3.0])
        extended = np.append(short, 1e7)
        assert zero_mode_mask(short, retained=2).tolist() == [True, False, False, False]
        assert zero_mode_mask(extended, retained=2).tolist() == [True, False, False, False, False]

    def test_descriptor_longer_than_mesh_allows(self):
        """Test asking for more eigenvalues than vertices fails"""
        with pytest.raises(InsufficientSpectrumError):
            shape_dna(icosphere(0), l=12)

    def test_length_must_be_positive(self, unit_sphere):
        with pytest.raises(DataError):
            shape_dna(unit_sphere, l=0)

    def test_reweight(self):
        """Test reweighting divides by the 1-based index"""
        assert np.allclose(reweight([2.0, 2.0, 2.0, 6.0]), [2.0, 1.0, 2.0 / 3.0, 1.5])

    def test_abdomen_print_concatenates_liver_first(self):
        """Test AbdomenPrint is [liver || spleen] of reweighted values"""
        liver, spleen = descriptor([1.0, 4.0]), descriptor([9.0, 16.0])
        assert np.array_equal(abdomen_print(liver, spleen), [1.0, 2.0, 9.0, 8.0])
        assert np.array_equal(abdomen_print(spleen=spleen), [9.0, 8.0])

    def test_abdomen_print_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            abdomen_print(descriptor([1.0, 2.0]), descriptor([1.0, 2.0, 3.0]))
        with pytest.raises(DataError):
            abdomen_print()

    def test_csv_round_trip(self, tmp_path, unit_sphere):
        """Test descriptor files reload bit-exactly with their metadata"""
        dna = shape_dna(unit_sphere, l=5)
        loaded = load_shape_dna(save_shape_dna(dna, tmp_path / "s.csv"))
        assert np.array_equal(loaded.eigenvalues, dna.eigenvalues)
        assert np.array_equal(loaded.reweighted, dna.reweighted)
        assert loaded.vertex_count == unit_sphere.vertex_count
        assert loaded.area == dna.area
        assert loaded.residual_max == dna.residual_max

    def test_csv_without_metadata(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("i,lambda,lambda_hat\n1,2.0,2.0\n")
        with pytest.raises(FileFormatError):
            load_shape_dna(path)


class TestEigenfunctions:
    """Eigenfunction export"""

    def test_b_orthonormal(self, unit_sphere):
        """Test exported eigenfunctions are orthonormal in the mass inner product"""
        table, fem, basis = eigenfunction_export(unit_sphere, k=5)
        assert table.shape == (unit_sphere.vertex_count, 5)
        assert b_orthonormality_error(table, fem) <= 1e-8
        assert np.all(basis.eigenvalues > 0)

    def test_first_modes_span_coordinates(self, unit_sphere):
        """Test the first three sphere eigenfunctions span the coordinate functions"""
        table, _, _ = eigenfunction_export(unit_sphere, k=3)
        coefficients, *_ = np.linalg.lstsq(table, unit_sphere.vertices, rcond=None)
        residual = np.linalg.norm(table @ coefficients - unit_sphere.vertices)
        assert residual / np.linalg.norm(unit_sphere.vertices) < 5e-2

    def test_csv_round_trip(self, tmp_path, rng):
        table = rng.normal(size=(12, 4))
        loaded = load_eigenfunctions(save_eigenfunctions(table, tmp_path / "f.csv"))
        assert np.array_equal(loaded, table)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(FileFormatError):
            load_eigenfunctions(path)
