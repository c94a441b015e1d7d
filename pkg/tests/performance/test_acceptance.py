"""End-to-end acceptance checks on synthetic data.

These run the full solvers and the cohort benchmark and take minutes; they
are marked ``slow`` and skipped with ``-m "not slow"``.
"""
import csv
import json
import time

import numpy as np
import pytest
import scipy.linalg
from scipy.stats import binomtest
from sklearn.metrics import silhouette_score

from src.analysis.roc import roc_auc
from src.analysis.tsne import tsne
from src.cli.commands import CommandContext, cmd_embed, cmd_featurize, cmd_gen_cohort, cmd_train
from src.config.config_manager import Config
from src.config.settings import MSPNetConfig, TsneConfig
from src.geometry.mesh import (
    TriMesh,
    connected_components,
    euler_characteristic,
    icosphere,
    is_closed_manifold,
    marching_cubes,
)
from src.geometry.sampling import sample_surface
from src.geometry.synthetic import SyntheticSpec, cohort_specs, generate_organ, generate_synthetic
from src.mspnet.model import MSPNetModel
from src.mspnet.training import batch_loss
from src.neural.gradcheck import grad_check
from src.spectra.fem import assemble_fem
from src.spectra.shapedna import shape_dna
from src.spectra.solver import solve_spectrum

pytestmark = pytest.mark.slow

# Narrower MSPNet than the defaults so the 200-subject benchmark trains in minutes
BENCHMARK_MSPNET = {
    "points": 256,
    "point_widths": [32, 32, 32, 64, 128],
    "tnet_point_widths": [32, 64, 128],
    "tnet_dense_widths": [64, 32],
    "head_widths": [64, 32, 2],
    "epochs": 80,
    "batch_size": 16,
    "learning_rate": 1e-3,
}


def organ_meshes(count: int, seed: int):
    """Surfaces of the first ``count`` organ specs of a random cohort"""
    specs = [(organ, spec) for subject in cohort_specs(count, 1.0, seed) for organ, spec in subject["organs"].items()]
    return [marching_cubes(generate_organ(organ, spec)) for organ, spec in specs[:count]]


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TestSpectralAcceptance:
    """Descriptor accuracy and invariances"""

    def test_sphere_spectrum(self):
        """Test the unit sphere spectrum on a 2562-vertex icosphere, in under 30 s"""
        sphere = icosphere(4)
        assert sphere.vertex_count == 2562
        started = time.perf_counter()
        dna = shape_dna(sphere, l=9)
        elapsed = time.perf_counter() - started
        expected = np.array([2, 2, 2, 6, 6, 6, 6, 6, 12], dtype=float)
        assert np.allclose(dna.eigenvalues[:3], expected[:3], rtol=0.02)
        assert np.allclose(dna.eigenvalues[3:], expected[3:], rtol=0.05)
        assert elapsed < 30.0

    def test_scaling_law_on_organs(self):
        """Test doubling a surface quarters every eigenvalue"""
        for mesh in organ_meshes(5, seed=101):
            base = shape_dna(mesh, l=20)
            scaled = shape_dna(mesh.transformed(scale=2.0), l=20)
            assert np.allclose(scaled.eigenvalues, base.eigenvalues / 4.0, rtol=1e-6, atol=0.0)

    def test_isometry_invariance_on_organs(self):
        rng = np.random.default_rng(5)
        for mesh in organ_meshes(3, seed=202):
            base = shape_dna(mesh, l=20)
            moved = shape_dna(mesh.transformed(rotation=random_rotation(rng), translation=rng.normal(0, 50, 3)), l=20)
            assert np.allclose(moved.eigenvalues, base.eigenvalues, rtol=1e-8, atol=0.0)

    def test_dense_oracle(self):
        """Test the sparse solver against a dense generalized eigensolver on perturbed spheres"""
        rng = np.random.default_rng(17)
        base = icosphere(2)
        for _ in range(10):
            radii = 1.0 + 0.15 * rng.random(base.vertex_count)
            mesh = TriMesh(vertices=base.vertices * radii[:, None], triangles=base.triangles)
            assert mesh.vertex_count <= 300
            fem = assemble_fem(mesh)
            sparse = solve_spectrum(fem, 12, method="sparse")
            oracle = scipy.linalg.eigh(fem.stiffness.toarray(), fem.mass.toarray(), eigvals_only=True)[:12]
            assert np.allclose(sparse.eigenvalues[1:], oracle[1:], rtol=1e-8, atol=0.0)


class TestGeometryAcceptance:
    """Surface extraction and sampling"""

    def test_mesh_integrity(self):
        """Test 50 synthetic organ surfaces are closed, edge-manifold and genus 0"""
        meshes = organ_meshes(50, seed=303)
        assert len(meshes) == 50
        for mesh in meshes:
            assert is_closed_manifold(mesh)
            assert euler_characteristic(mesh) == 2
            assert connected_components(mesh)[0] == 1

    def test_ball_volume(self):
        grid = generate_synthetic(SyntheticSpec(semi_axes=(8.0, 8.0, 8.0)), dims=(24, 24, 24))
        assert abs(grid.occupied_count - 4.0 / 3.0 * np.pi * 8 ** 3) <= 0.05 * 2145

    def test_area_proportional_sampling(self):
        """Test samples split 1:3 between triangles of area ratio 1:3"""
        mesh = TriMesh(
            vertices=np.array([
                [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                [0.0, 0.0, 5.0], [3.0, 0.0, 5.0], [0.0, 1.0, 5.0],
            ]),
            triangles=np.array([[0, 1, 2], [3, 4, 5]]),
        )
        cloud = sample_surface(mesh, 40_000, seed=8)
        on_small = int(np.sum(cloud.points[:, 2] < 2.5))
        assert binomtest(on_small, 40_000, 0.25).pvalue > 0.01


class TestLearningAcceptance:
    """Gradients, AUC and embedding"""

    def test_mspnet_gradient(self):
        """Test the full loss gradient with the default step"""
        rng = np.random.default_rng(29)
        config = MSPNetConfig(points=12, point_widths=[6, 6, 8], tnet_point_widths=[6, 8],
                              tnet_dense_widths=[6], head_widths=[8, 2], orthogonality_weight=0.001)
        model = MSPNetModel(config=config)
        params = {}
        for name, value in model.params.items():
            if name.endswith(".bias"):
                params[name] = rng.uniform(1.0, 2.0, size=value.shape)
            else:
                params[name] = rng.normal(0.0, 0.3, size=value.shape)
        clouds = {s: rng.normal(size=(3, 12, 3)) for s in config.structures}
        labels = np.array([0, 1, 1])
        assert grad_check(lambda tape, t: batch_loss(model, tape, t, clouds, labels)[0], params, h=1e-5) <= 1e-4

    def test_permutation_invariance(self, small_mspnet_config):
        rng = np.random.default_rng(31)
        model = MSPNetModel(config=small_mspnet_config)
        for _ in range(20):
            clouds = {s: rng.normal(0.0, 20.0, size=(1, 32, 3)) for s in ("liver", "spleen")}
            shuffled = {s: c[:, rng.permutation(32)] for s, c in clouds.items()}
            features = model.global_features(clouds)
            again = model.global_features(shuffled)
            for s in clouds:
                assert np.array_equal(features[s], again[s])
            assert np.array_equal(model.predict_proba_batch(clouds), model.predict_proba_batch(shuffled))

    def test_auc_oracle(self):
        """Test AUC equals the pairwise concordance count exactly on 100 tied score sets"""
        rng = np.random.default_rng(37)
        for _ in range(100):
            m = int(rng.integers(2, 501))
            labels = rng.integers(0, 2, size=m)
            labels[:2] = [0, 1]
            scores = np.round(rng.normal(size=m), int(rng.integers(0, 3)))
            positives, negatives = scores[labels == 1], scores[labels == 0]
            wins = np.sum(positives[:, None] > negatives[None, :]) + 0.5 * np.sum(positives[:, None] == negatives[None, :])
            assert roc_auc(scores, labels).auc == wins / (len(positives) * len(negatives))

    def test_tsne_clusters(self):
        """Test two far-apart clusters stay apart, KL drops after exaggeration and runs repeat exactly"""
        rng = np.random.default_rng(41)
        offset = np.zeros(10)
        offset[0] = 50.0
        features = np.concatenate([rng.normal(size=(20, 10)), offset + rng.normal(size=(20, 10))])
        labels = np.repeat([0, 1], 20)
        config = TsneConfig(perplexity=10.0, seed=2)
        embedding = tsne(features, config=config)
        assert silhouette_score(embedding.coordinates, labels) >= 0.8
        assert embedding.kl_divergence < embedding.kl_after_exaggeration
        assert np.array_equal(tsne(features, config=config).coordinates, embedding.coordinates)


class TestSyntheticBenchmark:
    """200-subject synthetic cohort through both classifiers"""

    @pytest.fixture(scope="class")
    def benchmark_run(self, tmp_path_factory):
        out_dir = tmp_path_factory.mktemp("benchmark")
        config = Config.model_validate({
            "cohort": {"count_per_class": 100, "seed": 7},
            "geometry": {"points_per_cloud": BENCHMARK_MSPNET["points"]},
            "mspnet": BENCHMARK_MSPNET,
            "runtime": {"threads": 4, "seed": 7},
        })
        ctx = CommandContext(config=config, out_dir=out_dir)
        cmd_gen_cohort(ctx)
        manifest = out_dir / "manifest.json"
        cmd_featurize(ctx, manifest, "abdomenprint")
        cmd_featurize(ctx, manifest, "clouds")
        for method, organ in (("gbt", "both"), ("mspnet", "both"), ("mspnet", "spleen")):
            cmd_train(ctx, manifest, method, organ)
        cmd_embed(ctx, out_dir / "models" / "mspnet-both.tnsr", manifest)
        return out_dir

    @staticmethod
    def auc_of(benchmark_run, name: str) -> float:
        return json.loads((benchmark_run / f"{name}.metrics.json").read_text())["test_auc"]

    def test_mspnet_auc(self, benchmark_run):
        assert self.auc_of(benchmark_run, "mspnet-both") >= 0.85

    def test_gbt_auc(self, benchmark_run):
        assert self.auc_of(benchmark_run, "gbt-both") >= 0.80

    def test_both_organs_beat_spleen_alone(self, benchmark_run):
        assert self.auc_of(benchmark_run, "mspnet-both") >= self.auc_of(benchmark_run, "mspnet-spleen")

    def test_shared_split(self, benchmark_run):
        """Test every model was scored on the same held-out half"""
        splits = [json.loads((benchmark_run / f"{tag}.split.json").read_text())
                  for tag in ("gbt-both", "mspnet-both", "mspnet-spleen")]
        assert splits[0] == splits[1] == splits[2]
        assert len(splits[0]["test_ids"]) == 100

    def test_embedding_separates_classes(self, benchmark_run):
        """Test the MSPNet feature embedding clusters by true label"""
        with open(benchmark_run / "embedding.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        coordinates = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        labels = np.array([int(r["true_label"]) for r in rows])
        assert len(rows) == 200
        assert silhouette_score(coordinates, labels) >= 0.3
