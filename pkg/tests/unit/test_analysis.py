import json
from collections import Counter

import numpy as np
import pytest
from matplotlib.axes import Axes
from sklearn.metrics import roc_auc_score

from src.analysis.features import feature_dump, feature_dump_csv
from src.analysis.plotting import embedding_svg, roc_svg, save_embedding_svg
from src.analysis.roc import mann_whitney_auc, roc_auc, roc_csv, save_roc
from src.analysis.split import load_split, save_split, split_50_50
from src.analysis.tsne import embedding_csv, joint_probabilities, kl_divergence, tsne
from src.baseline.gbt import train_gbt
from src.config.settings import GbtConfig, TsneConfig
from src.errors import DataError, NonFiniteError, PerplexityError, ShapeMismatchError, SingleClassError
from src.mspnet.model import MSPNetModel


def pairwise_auc(scores, labels) -> float:
    """O(m^2) concordance count with ties as one half"""
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    wins = sum(float(p > n) + 0.5 * float(p == n) for p in positives for n in negatives)
    return wins / (len(positives) * len(negatives))


@pytest.fixture
def fast_tsne() -> TsneConfig:
    return TsneConfig(perplexity=3.0, iterations=120, exaggeration_iterations=40)


class TestSplit:
    """50/50 subject splits"""

    def test_halves_cover_cohort(self):
        """Test the halves are disjoint, complete and sized ceil/floor"""
        ids = [f"s{i}" for i in range(11)]
        labels = [i % 2 for i in range(11)]
        split = split_50_50(ids, labels, seed=1)
        assert not set(split.train_ids) & set(split.test_ids)
        assert sorted(split.train_ids + split.test_ids) == sorted(ids)
        assert len(split.train_ids) == 6

    def test_stratified_class_balance(self):
        """Test each class is halved to within one subject"""
        ids = [f"s{i}" for i in range(30)]
        labels = [0] * 19 + [1] * 11
        split = split_50_50(ids, labels, seed=4)
        by_id = dict(zip(ids, labels))
        counts = Counter(by_id[i] for i in split.train_ids)
        assert abs(counts[0] - 19 / 2) <= 1
        assert abs(counts[1] - 11 / 2) <= 1
        assert len(split.train_ids) == 15

    def test_odd_slot_goes_to_first_odd_class(self):
        ids = [f"s{i}" for i in range(9)]
        labels = [0] * 5 + [1] * 4
        split = split_50_50(ids, labels, seed=0)
        train_labels = Counter(labels[ids.index(i)] for i in split.train_ids)
        test_labels = Counter(labels[ids.index(i)] for i in split.test_ids)
        assert train_labels == {0: 3, 1: 2}
        assert test_labels == {0: 2, 1: 2}

    def test_deterministic_per_seed(self):
        ids = [f"s{i}" for i in range(20)]
        labels = [i % 2 for i in range(20)]
        assert split_50_50(ids, labels, seed=5) == split_50_50(ids, labels, seed=5)
        assert split_50_50(ids, labels, seed=5).train_ids != split_50_50(ids, labels, seed=6).train_ids

    def test_unstratified(self):
        ids = [f"s{i}" for i in range(7)]
        split = split_50_50(ids, [0] * 7, seed=2, stratified=False)
        assert len(split.train_ids) == 4 and len(split.test_ids) == 3

    def test_invalid_cohorts(self):
        """Test empty, duplicate and single-class cohorts are rejected"""
        with pytest.raises(DataError):
            split_50_50([], [], seed=0)
        with pytest.raises(DataError):
            split_50_50(["a", "a"], [0, 1], seed=0)
        with pytest.raises(SingleClassError):
            split_50_50(["a", "b", "c"], [0, 0, 1], seed=0)

    def test_round_trip(self, tmp_path):
        split = split_50_50([f"s{i}" for i in range(8)], [0, 1] * 4, seed=9)
        assert load_split(save_split(split, tmp_path / "split.json")) == split


class TestRoc:
    """ROC curves and AUC"""

    def test_matches_pairwise_oracle(self, rng):
        """Test AUC equals the concordance oracle exactly, ties included"""
        for _ in range(20):
            m = int(rng.integers(4, 200))
            labels = rng.integers(0, 2, size=m)
            labels[:2] = [0, 1]
            scores = np.round(rng.normal(size=m), 1)
            assert roc_auc(scores, labels).auc == pairwise_auc(scores, labels)

    def test_matches_sklearn(self, rng):
        labels = rng.integers(0, 2, size=300)
        scores = rng.normal(size=300) + labels
        assert roc_auc(scores, labels).auc == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)

    def test_curve_shape(self, rng):
        """Test the curve runs from (0, 0) to (1, 1) and its area is the AUC"""
        labels = np.array([0, 0, 1, 1, 0, 1, 1, 0])
        scores = np.array([0.1, 0.4, 0.35, 0.8, 0.4, 0.9, 0.4, 0.2])
        result = roc_auc(scores, labels)
        assert (result.fpr[0], result.tpr[0]) == (0.0, 0.0)
        assert (result.fpr[-1], result.tpr[-1]) == (1.0, 1.0)
        assert np.all(np.diff(result.fpr) >= 0) and np.all(np.diff(result.tpr) >= 0)
        assert result.trapezoid_area() == pytest.approx(result.auc, abs=1e-12)

    def test_invariant_under_increasing_transforms(self, rng):
        """Test strictly increasing maps of the scores leave the AUC unchanged, ties included"""
        labels = rng.integers(0, 2, size=120)
        labels[:2] = [0, 1]
        scores = np.round(rng.normal(size=120), 1)
        assert len(np.unique(scores)) < len(scores)
        auc = roc_auc(scores, labels).auc
        assert auc == roc_auc(np.exp(scores), labels).auc == roc_auc(3 * scores + 7, labels).auc

    def test_perfect_and_reversed(self):
        labels = np.array([0, 0, 1, 1])
        assert roc_auc([0.1, 0.2, 0.8, 0.9], labels).auc == 1.0
        assert roc_auc([0.9, 0.8, 0.2, 0.1], labels).auc == 0.0
        assert mann_whitney_auc(np.ones(4), labels) == 0.5

    def test_invalid_inputs(self):
        with pytest.raises(SingleClassError):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(NonFiniteError):
            roc_auc([np.nan, 0.2], [0, 1])
        with pytest.raises(ShapeMismatchError):
            roc_auc([0.1, 0.2, 0.3], [0, 1])

    def test_files(self, tmp_path):
        result = roc_auc([0.2, 0.7, 0.6], [0, 1, 1])
        save_roc(result, tmp_path / "roc.csv", tmp_path / "roc.json")
        assert (tmp_path / "roc.csv").read_text().splitlines()[0] == "threshold,fpr,tpr"
        assert json.loads((tmp_path / "roc.json").read_text()) == {"auc": 1.0}
        assert roc_csv(result).count("\n") == len(result.thresholds) + 1


class TestTsne:
    """Exact t-SNE"""

    def test_joint_probabilities(self, rng):
        """Test P is symmetric and sums to one"""
        p = joint_probabilities(rng.normal(size=(15, 4)), perplexity=4.0)
        assert np.allclose(p, p.T)
        assert p.sum() == pytest.approx(1.0, abs=1e-8)
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_deterministic(self, rng, fast_tsne):
        """Test the same seed gives bit-identical coordinates"""
        features = rng.normal(size=(20, 5))
        first = tsne(features, config=fast_tsne)
        again = tsne(features, config=fast_tsne)
        assert np.array_equal(first.coordinates, again.coordinates)
        assert first.coordinates.shape == (20, 2)

    def test_explicit_arguments_override_config(self, rng, fast_tsne):
        embedding = tsne(rng.normal(size=(20, 3)), perplexity=2.5, seed=9, config=fast_tsne)
        assert embedding.perplexity == 2.5
        assert embedding.seed == 9
        assert embedding.iterations == 120

    def test_kl_trace(self, rng, fast_tsne):
        """Test KL is recorded at the end of exaggeration and drops afterwards"""
        clusters = np.concatenate([rng.normal(0.0, 1.0, (12, 6)), rng.normal(20.0, 1.0, (12, 6))])
        embedding = tsne(clusters, config=fast_tsne)
        iterations = [i for i, _ in embedding.kl_trace]
        assert 40 in iterations and iterations[-1] == 120
        assert embedding.kl_divergence < embedding.kl_after_exaggeration

    def test_perplexity_too_large(self, rng):
        with pytest.raises(PerplexityError):
            tsne(rng.normal(size=(10, 3)), perplexity=5.0,
                 config=TsneConfig(iterations=10, exaggeration_iterations=5))

    def test_invalid_features(self, fast_tsne):
        with pytest.raises(NonFiniteError):
            tsne(np.full((20, 2), np.inf), config=fast_tsne)
        with pytest.raises(DataError):
            tsne(np.ones(20), config=fast_tsne)

    def test_csv(self, rng, fast_tsne):
        embedding = tsne(rng.normal(size=(10, 2)), config=fast_tsne)
        lines = embedding_csv([f"s{i}" for i in range(10)], embedding, [0] * 10, [1] * 10).splitlines()
        assert lines[0] == "id,x,y,true_label,predicted_label"
        assert lines[1].startswith("s0,") and lines[1].endswith(",0,1")


class TestFeatureDump:
    """Descriptor rows a trained classifier sees"""

    def test_gbt_rows_are_the_matrix(self, rng):
        features = rng.normal(size=(12, 4))
        labels = np.arange(12) % 2
        model = train_gbt(features, labels, GbtConfig(rounds=3, min_samples_leaf=1))
        dump = feature_dump(model, [f"s{i}" for i in range(12)], labels, features)
        assert np.array_equal(dump.features, features)
        assert np.array_equal(dump.predicted, (dump.probabilities >= 0.5).astype(int))
        assert dump.source == "abdomenprint"
        header = feature_dump_csv(dump).splitlines()[0]
        assert header == "id,true_label,predicted_label,f0,f1,f2,f3"

    def test_mspnet_branch_selection(self, small_mspnet_config, rng):
        """Test the embedding is both branches concatenated, or one branch"""
        model = MSPNetModel(config=small_mspnet_config, trained=True)
        clouds = {s: rng.normal(size=(6, 32, 3)) for s in ("liver", "spleen")}
        ids, labels = [f"s{i}" for i in range(6)], [0, 1] * 3
        both = feature_dump(model, ids, labels, clouds)
        spleen = feature_dump(model, ids, labels, clouds, organ="spleen")
        assert both.width == 64
        assert spleen.width == 32
        assert np.array_equal(both.features[:, 32:], spleen.features)
        assert spleen.source == "mspnet:spleen"

    def test_untrained_model_rejected(self, small_mspnet_config, rng):
        model = MSPNetModel(config=small_mspnet_config)
        clouds = {s: rng.normal(size=(2, 32, 3)) for s in ("liver", "spleen")}
        with pytest.raises(DataError):
            feature_dump(model, ["a", "b"], [0, 1], clouds)

    def test_unknown_organ(self, small_mspnet_config, rng):
        config = small_mspnet_config.model_copy(update={"structures": ["liver"], "head_widths": [16, 8, 2]})
        model = MSPNetModel(config=config, trained=True)
        with pytest.raises(DataError):
            feature_dump(model, ["a"], [0], {"liver": rng.normal(size=(1, 32, 3))}, organ="spleen")


class TestPlotting:
    """SVG figures"""

    def test_embedding_svg(self, rng):
        """Test the figure is an 800x600 SVG, identical across calls"""
        coordinates = rng.normal(size=(10, 2))
        labels = [0, 1] * 5
        svg = embedding_svg(coordinates, labels, "MSPNet both: true label")
        assert svg == embedding_svg(coordinates, labels, "MSPNet both: true label")
        assert "<svg" in svg
        assert 'viewBox="0 0 800 600"' in svg
        assert "MSPNet both: true label" in svg

    def test_roc_svg_legend(self):
        result = roc_auc([0.1, 0.9, 0.8, 0.3], [0, 1, 1, 0])
        svg = roc_svg([("AbdomenPrint+GBT liver", result)])
        assert "AUC 1.000" in svg

    def test_roc_svg_draws_linear_segments(self, mocker):
        """Test tied-score segments are drawn as the diagonals the trapezoid AUC integrates"""
        plot = mocker.spy(Axes, "plot")
        result = roc_auc([0.1, 0.5, 0.5, 0.9], [0, 0, 1, 1])
        roc_svg([("MSPNet both", result)])
        curve = plot.call_args_list[-1]
        assert np.array_equal(curve.args[1], result.fpr)
        assert np.array_equal(curve.args[2], result.tpr)
        assert all("drawstyle" not in call.kwargs for call in plot.call_args_list)

    def test_save(self, tmp_path, rng):
        path = save_embedding_svg(tmp_path / "e.svg", rng.normal(size=(4, 2)), [0, 1, 0, 1], "t")
        assert path.read_text().lstrip().startswith("<?xml")
