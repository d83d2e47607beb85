"""Shared fixtures and the acceptance-summary reporter."""

from pathlib import Path

import numpy as np
import pytest

from semrecon import fields as fl
from semrecon import scene as sc
from semrecon import training as tr

REPO_ROOT = Path(__file__).resolve().parents[1]
PILOT_DIR = REPO_ROOT / "pilot"

# Criterion verdict lines, printed after the run so they survive capture.
_criterion_lines: list[str] = []


def record_criterion(number, name, passed, detail):
    line = f"CRITERION {number} [{name}]: {'PASS' if passed else 'FAIL'} — {detail}"
    _criterion_lines.append(line)
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_criterion_lines):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_trained_model():
    """Small map trained on one dense top-down measurement of the unit sphere.

    Deterministic: fixed seeds, single-threaded numpy ops.
    """
    scene = sc.single_sphere_scene()
    camera = sc.CameraModel.square(100, 70.0, 8.0)
    model = fl.MapModel(resolution=48, seed=0, grid_lr_mult=100.0)
    buffer = tr.ReplayBuffer(camera)
    buffer.add_measurement(
        sc.render_measurement(scene, sc.hemisphere_view(0.0, np.pi / 2), camera)
    )
    config = tr.TrainConfig(
        batch_size=512, batch_current=512, iters=120, n_samples=64, lr=2e-3
    )
    tr.train_round(model, buffer, config, np.random.default_rng(0))
    return model
