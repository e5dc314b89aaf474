import logging
from pathlib import Path

import config
from dataio.dataset import Dataset, load_dataset
from dataio.reports import write_json
from entities import RunConfig
from network.model import Network
from network.storage import load_network

logger = logging.getLogger(__name__)


def require(value, flag: str, command: str):
    if value is None or (isinstance(value, list) and not value):
        raise ValueError(f"{command} needs {flag}")
    return value


def resolve_workers(run: RunConfig) -> int:
    workers = run.workers if run.workers is not None else config.WORKERS
    if workers < 1:
        raise ValueError(f"--workers must be >= 1, got {workers}")
    return workers


def output_dir(run: RunConfig) -> Path:
    path = Path(run.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def provenance(run: RunConfig) -> dict:
    return run.model_dump(mode="json")


def with_provenance(run: RunConfig, payload: dict) -> dict:
    return {"config": provenance(run), "version": config.VERSION, **payload}


def write_run_config(run: RunConfig) -> Path:
    return write_json(output_dir(run) / "run_config.json", provenance(run))


def load_split(run: RunConfig, split: str) -> Dataset:
    directory = require(run.data, "--data", run.command)
    return load_dataset(directory, split)


def load_model(path: str, input_shape: tuple[int, ...]) -> Network:
    net = load_network(path, input_shape)
    logger.info(f"Loaded model {path}: layers {', '.join(net.layer_names)}")
    return net
