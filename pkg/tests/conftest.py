import json
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from src.cli.commands import CommandContext, cmd_featurize, cmd_gen_cohort
from src.config.config_manager import Config
from src.config.settings import MSPNetConfig
from src.geometry.mesh import icosphere
from src.geometry.synthetic import SyntheticSpec, generate_synthetic


def tiny_config_data() -> Dict[str, Any]:
    """Settings small enough for a full pipeline run in a few seconds"""
    return {
        "geometry": {"points_per_cloud": 32},
        "spectra": {"descriptor_length": 6, "eigenfunctions": 4},
        "cohort": {"count_per_class": 4, "separation": 1.5, "seed": 11, "name": "tiny"},
        "mspnet": {
            "points": 32,
            "point_widths": [8, 8, 8, 16, 32],
            "tnet_point_widths": [8, 16, 32],
            "tnet_dense_widths": [16, 8],
            "head_widths": [16, 8, 2],
            "epochs": 2,
            "batch_size": 4,
        },
        "gbt": {"rounds": 10, "max_depth": 2, "min_samples_leaf": 1},
        "tsne": {"perplexity": 2.0, "iterations": 60, "exaggeration_iterations": 20},
        "runtime": {"seed": 3, "threads": 1, "log_level": "WARNING"},
    }


@pytest.fixture
def temp_config_file(tmp_path):
    """Path of a not-yet-existing config file"""
    return str(tmp_path / "config.json")


@pytest.fixture
def tiny_config_file(tmp_path) -> Path:
    """Config file holding the fast-run settings"""
    path = tmp_path / "tiny_config.json"
    path.write_text(json.dumps(tiny_config_data()))
    return path


@pytest.fixture
def small_mspnet_config() -> MSPNetConfig:
    """Narrow two-branch network"""
    return MSPNetConfig(
        points=32,
        point_widths=[8, 8, 8, 16, 32],
        tnet_point_widths=[8, 16, 32],
        tnet_dense_widths=[16, 8],
        head_widths=[16, 8, 2],
        epochs=3,
        batch_size=4,
    )


@pytest.fixture
def ball_grid():
    """Voxelized ball of radius 5 mm in a 16^3 grid"""
    return generate_synthetic(SyntheticSpec(semi_axes=(5.0, 5.0, 5.0)), dims=(16, 16, 16))


@pytest.fixture
def unit_sphere():
    """Icosphere with 642 vertices"""
    return icosphere(subdivisions=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def featurized_cohort(tmp_path_factory) -> Path:
    """Tiny synthetic cohort with AbdomenPrint descriptors and point clouds already computed"""
    out_dir = tmp_path_factory.mktemp("cohort")
    ctx = CommandContext(config=Config.model_validate(tiny_config_data()), out_dir=out_dir)
    cmd_gen_cohort(ctx)
    cmd_featurize(ctx, out_dir / "manifest.json", "abdomenprint")
    cmd_featurize(ctx, out_dir / "manifest.json", "clouds")
    return out_dir


@pytest.fixture(autouse=True)
def quiet_logging():
    """Keep third-party loggers out of test output"""
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    yield


@pytest.fixture
def restore_root_logger():
    """Put the root logger back the way the test found it"""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture
def make_context(tmp_path):
    """Factory for fast-run command contexts in named subdirectories, with runtime overrides"""
    def factory(name: str, **runtime) -> CommandContext:
        data = tiny_config_data()
        data["runtime"].update(runtime)
        return CommandContext(config=Config.model_validate(data), out_dir=tmp_path / name)
    return factory
