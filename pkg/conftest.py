import os

import pytest
import torch

from src.config import RunConfig
from src.syngen import SceneSpec, generate_dataset

RUN_SLOW = os.environ.get("S2R_RUN_SLOW") == "1"

TINY_SCENE = SceneSpec(seed=7, frame_size=(64, 64), obs_length=8, pred_length=8, ttc_range=(4, 8))

TINY_COUNTS = {
    "synthetic/crossing": 4,
    "synthetic/not_crossing": 4,
    "real/crossing": 4,
    "real/not_crossing": 4,
}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: directional toy experiments, run with S2R_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set S2R_RUN_SLOW=1 to run directional experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Eight synthetic and eight real clips of 8 + 8 frames"""
    out_dir = tmp_path_factory.mktemp("toy_data")
    return generate_dataset(TINY_SCENE, TINY_COUNTS, str(out_dir))


def tiny_run_config(run_dir, **changes):
    values = dict(
        obs_length=8, ttc=8, pred_length=8, batch_size=2, lr=1e-3, epochs=2, teacher_epochs=2,
        dropout=0.1, seed=0, feature_dim=16, region_size=16, patch_size=8, psi_depth=2, psi_heads=2,
        teacher_layers=1, teacher_heads=2, teacher_ff_dim=32, student_channels=4, student_hidden=16,
        student_layers=2, run_dir=str(run_dir), log_file=os.path.join(str(run_dir), "test.log"),
    )
    values.update(changes)
    return RunConfig(**values).replace()


@pytest.fixture
def tiny_config(tmp_path):
    return tiny_run_config(tmp_path / "run")
