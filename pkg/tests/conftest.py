from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np
import pytest

from dataio.reports import to_jsonable, write_json
from tests.fakes import quadrant_dataset, small_network, write_idx_dir

logger = logging.getLogger(__name__)

MNIST_DIR = os.getenv("MNIST_DIR")
GOLDEN_DIR = Path(__file__).parent / "golden"
UPDATE_GOLDEN = os.getenv("UPDATE_GOLDEN", "").strip().lower() in {"1", "true", "yes", "on"}


def pytest_collection_modifyitems(config, items):
    if MNIST_DIR and Path(MNIST_DIR).is_dir():
        return
    skip = pytest.mark.skip(reason="set MNIST_DIR to the MNIST IDX files to run slow experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def net():
    return small_network(seed=3)


@pytest.fixture
def train_set():
    return quadrant_dataset(96, seed=0, split="train")


@pytest.fixture
def eval_set():
    return quadrant_dataset(48, seed=1, split="eval")


@pytest.fixture
def idx_dir(tmp_path) -> Path:
    return write_idx_dir(tmp_path / "data")


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    return Path(MNIST_DIR)


@pytest.fixture(scope="session")
def golden():
    """Compare against tests/golden/<name>.json; a missing file (or UPDATE_GOLDEN=1) records it."""

    def check(name: str, payload, rtol: float = 0.0) -> None:
        current = json.loads(json.dumps(to_jsonable(payload), sort_keys=True))
        path = GOLDEN_DIR / f"{name}.json"
        if UPDATE_GOLDEN or not path.exists():
            write_json(path, current)
            logger.warning("Recorded golden values %s", path)
            return
        stored = json.loads(path.read_text(encoding="utf-8"))
        if rtol:
            np.testing.assert_allclose(np.asarray(current, dtype=np.float64), np.asarray(stored, dtype=np.float64), rtol=rtol, atol=0)
        else:
            assert current == stored

    return check
