import numpy as np
import pytest
from pydantic import ValidationError

from src.config.settings import MSPNetConfig
from src.errors import DataError, ShapeMismatchError, SingleClassError
from src.mspnet.dataset import LabeledSubject, stack_subjects
from src.mspnet.model import (
    MSPNetModel,
    branch_forward,
    branch_keys,
    fuse_and_classify,
    parameter_shapes,
    predict_proba,
    tnet_forward,
)
from src.mspnet.training import batch_loss, load_model, orthogonality_penalty, save_model, train
from src.neural.gradcheck import grad_check
from src.neural.tensor import Tape


def sphere_points(rng, n: int, radius: float) -> np.ndarray:
    directions = rng.normal(size=(n, 3))
    return radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)


def random_parameter(rng, name: str, shape):
    """Positive offsets keep most pre-activations away from the relu kink"""
    if name.endswith(".bias") or name.endswith(".beta"):
        return rng.uniform(1.0, 2.0, size=shape)
    if name.endswith(".gamma"):
        return rng.uniform(0.5, 1.5, size=shape)
    return rng.normal(0.0, 0.3, size=shape)


def toy_subjects(rng, count: int, points: int):
    """Class 0 on small spheres, class 1 on large ones"""
    subjects = []
    for i in range(count):
        label = i % 2
        radius = 3.0 if label else 1.0
        subjects.append(LabeledSubject(
            subject_id=f"s{i}",
            clouds={"liver": sphere_points(rng, points, radius), "spleen": sphere_points(rng, points, 0.5 * radius)},
            label=label,
        ))
    return subjects


class TestModel:
    """Forward pass and parameter layout"""

    def test_parameter_shapes(self, small_mspnet_config):
        """Test parameters exist per branch and the head sees both features"""
        model = MSPNetModel(config=small_mspnet_config)
        shapes = dict(parameter_shapes(small_mspnet_config))
        assert set(model.params) == set(shapes)
        assert shapes["liver.point0.weight"] == (3, 8)
        assert shapes["spleen.tnet.out.weight"] == (8, 9)
        assert shapes["head.layer0.weight"] == (64, 16)

    def test_initial_transform_is_identity(self, small_mspnet_config, rng):
        """Test the zero-initialized T-Net output yields the identity"""
        model = MSPNetModel(config=small_mspnet_config)
        assert np.array_equal(tnet_forward(model, rng.normal(size=(32, 3))), np.eye(3))

    def test_permutation_invariance(self, small_mspnet_config, rng):
        """Test shuffling point rows leaves features and probability bit-identical"""
        model = MSPNetModel(config=small_mspnet_config)
        clouds = {"liver": rng.normal(size=(32, 3)), "spleen": rng.normal(size=(32, 3))}
        shuffled = {name: points[rng.permutation(32)] for name, points in clouds.items()}
        assert np.array_equal(branch_forward(model, clouds["liver"]), branch_forward(model, shuffled["liver"]))
        assert predict_proba(model, clouds) == predict_proba(model, shuffled)

    def test_features_are_non_negative(self, small_mspnet_config, rng):
        model = MSPNetModel(config=small_mspnet_config)
        feature = branch_forward(model, rng.normal(size=(32, 3)), "spleen")
        assert feature.shape == (32,)
        assert np.all(feature >= 0)

    def test_fusion_order(self, small_mspnet_config, rng):
        """Test the head consumes [liver || spleen] in that order"""
        model = MSPNetModel(config=small_mspnet_config)
        liver, spleen = rng.random(32), rng.random(32)
        logits = fuse_and_classify(model, {"spleen": spleen, "liver": liver})
        h = np.concatenate([liver, spleen])
        for i in range(3):
            h = h @ model.params[f"head.layer{i}.weight"] + model.params[f"head.layer{i}.bias"]
            if i < 2:
                h = np.maximum(h, 0.0)
        assert np.allclose(logits, h, atol=1e-12)

    def test_fusion_width_checked(self, small_mspnet_config):
        model = MSPNetModel(config=small_mspnet_config)
        with pytest.raises(ShapeMismatchError):
            fuse_and_classify(model, {"liver": np.ones(5), "spleen": np.ones(32)})

    def test_missing_branch_input(self, small_mspnet_config, rng):
        model = MSPNetModel(config=small_mspnet_config)
        with pytest.raises(DataError):
            predict_proba(model, {"liver": rng.normal(size=(32, 3))})

    def test_shared_weights(self, small_mspnet_config):
        """Test shared weights keep a single branch parameter set"""
        config = small_mspnet_config.model_copy(update={"shared_weights": True})
        model = MSPNetModel(config=config)
        assert branch_keys(config) == ["shared"]
        assert not any(name.startswith("liver.") for name in model.params)

    def test_single_structure(self, small_mspnet_config, rng):
        """Test a spleen-only model has a head as wide as one branch"""
        config = MSPNetConfig(**{**small_mspnet_config.model_dump(), "structures": ["spleen"]})
        model = MSPNetModel(config=config)
        assert model.params["head.layer0.weight"].shape == (32, 16)
        assert 0.0 <= predict_proba(model, {"spleen": rng.normal(size=(32, 3))}) <= 1.0

    def test_structures_in_fusion_order(self):
        assert MSPNetConfig(structures=["spleen", "liver"]).structures == ["liver", "spleen"]

    def test_config_validation(self):
        """Test invalid head and structure settings are rejected"""
        with pytest.raises(ValidationError):
            MSPNetConfig(head_widths=[16, 3])
        with pytest.raises(ValidationError):
            MSPNetConfig(structures=["kidney"])
        with pytest.raises(ValidationError):
            MSPNetConfig(points=4)

    def test_float32_precision(self, small_mspnet_config, rng):
        config = small_mspnet_config.model_copy(update={"precision": "f32"})
        model = MSPNetModel(config=config)
        assert all(p.dtype == np.float32 for p in model.params.values())
        assert 0.0 <= predict_proba(model, {s: rng.normal(size=(32, 3)) for s in ("liver", "spleen")}) <= 1.0

    def test_rejects_foreign_parameters(self, small_mspnet_config):
        with pytest.raises(ShapeMismatchError):
            MSPNetModel(config=small_mspnet_config, params={"w": np.zeros(3)})


class TestGradients:
    """Analytic gradients of the training loss"""

    def test_orthogonality_penalty_gradient(self, rng):
        def loss(tape, t):
            return orthogonality_penalty(tape, [t])
        assert grad_check(loss, rng.normal(size=(2, 3, 3))) <= 1e-6

    def test_orthogonality_penalty_zero_for_rotations(self):
        tape = Tape()
        rotation = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        penalty = orthogonality_penalty(tape, [tape.constant(np.stack([rotation, np.eye(3)]))])
        assert float(penalty.value) == pytest.approx(0.0, abs=1e-15)

    def test_full_network_gradient(self, rng):
        """Test the whole two-branch loss against central differences"""
        config = MSPNetConfig(
            points=8,
            point_widths=[4, 4],
            tnet_point_widths=[4, 4],
            tnet_dense_widths=[4],
            head_widths=[4, 2],
            feature_norm=True,
            orthogonality_weight=0.01,
        )
        model = MSPNetModel(config=config)
        params = {name: random_parameter(rng, name, value.shape) for name, value in model.params.items()}
        clouds = {s: rng.normal(size=(2, 8, 3)) for s in config.structures}
        labels = np.array([0, 1])

        def loss(tape, tensors):
            return batch_loss(model, tape, tensors, clouds, labels)[0]
        assert grad_check(loss, params, h=1e-7) <= 1e-6


class TestTraining:
    """Adam training loop and checkpoints"""

    def test_loss_decreases(self, small_mspnet_config, rng):
        """Test training lowers the loss on separable toy data"""
        config = small_mspnet_config.model_copy(update={"epochs": 15, "learning_rate": 5e-3})
        model = train(toy_subjects(rng, 12, 32), config)
        assert model.trained
        assert len(model.history) == 15
        assert model.history[-1]["loss"] < model.history[0]["loss"]

    def test_fits_four_subjects(self, small_mspnet_config):
        """Test the network reaches training accuracy 1.0 on four subjects within 500 epochs"""
        subjects = toy_subjects(np.random.default_rng(4), 4, 32)
        config = small_mspnet_config.model_copy(update={"epochs": 500, "learning_rate": 5e-3, "seed": 1})
        model = train(subjects, config)
        predicted = [int(predict_proba(model, s.clouds) >= 0.5) for s in subjects]
        assert predicted == [s.label for s in subjects]
        assert max(entry["accuracy"] for entry in model.history) == 1.0

    def test_training_is_deterministic(self, small_mspnet_config):
        """Test identical seeds give bit-identical parameters"""
        first = train(toy_subjects(np.random.default_rng(0), 8, 32), small_mspnet_config)
        again = train(toy_subjects(np.random.default_rng(0), 8, 32), small_mspnet_config)
        for name in first.params:
            assert np.array_equal(first.params[name], again.params[name])

    def test_epoch_callback(self, small_mspnet_config, rng):
        seen = []
        train(toy_subjects(rng, 8, 32), small_mspnet_config, on_epoch=seen.append)
        assert [entry["epoch"] for entry in seen] == [1, 2, 3]

    def test_single_class_rejected(self, small_mspnet_config, rng):
        subjects = [s for s in toy_subjects(rng, 8, 32) if s.label == 0]
        with pytest.raises(SingleClassError):
            train(subjects, small_mspnet_config)

    def test_cloud_size_checked(self, small_mspnet_config, rng):
        subjects = toy_subjects(rng, 4, 16)
        with pytest.raises(ShapeMismatchError):
            stack_subjects(subjects, ["liver", "spleen"], 32)

    def test_bad_label(self):
        with pytest.raises(DataError):
            LabeledSubject(subject_id="x", clouds={}, label=2)

    def test_checkpoint_round_trip(self, tmp_path, small_mspnet_config, rng):
        """Test a saved model reloads with identical predictions"""
        model = train(toy_subjects(rng, 8, 32), small_mspnet_config)
        path = save_model(model, tmp_path / "model.tnsr", extra={"organ": "both"})
        loaded = load_model(path)
        clouds = {"liver": rng.normal(size=(32, 3)), "spleen": rng.normal(size=(32, 3))}
        assert loaded.trained
        assert loaded.history == model.history
        assert predict_proba(loaded, clouds) == predict_proba(model, clouds)
