import logging
from pathlib import Path

from attack.universal import Perturbation
from dataio.sfp1 import decode_array, encode_array, read_array, write_array
from entities import PerturbationMeta

logger = logging.getLogger(__name__)


def encode_perturbation(perturbation: Perturbation) -> bytes:
    return encode_array(perturbation.epsilon, perturbation.p, perturbation.norm, perturbation.meta.model_dump(mode="json"))


def decode_perturbation(payload: bytes, source: str = "<bytes>") -> Perturbation:
    values, p, norm, meta = decode_array(payload, source)
    return Perturbation(epsilon=values, p=p, norm=norm, meta=PerturbationMeta.model_validate(meta))


def save_perturbation(perturbation: Perturbation, path: str | Path) -> Path:
    path = write_array(path, perturbation.epsilon, perturbation.p, perturbation.norm, perturbation.meta.model_dump(mode="json"))
    logger.info("Saved perturbation %s (norm=%.6g)", path, perturbation.norm)
    return path


def load_perturbation(path: str | Path) -> Perturbation:
    values, p, norm, meta = read_array(path)
    return Perturbation(epsilon=values, p=p, norm=norm, meta=PerturbationMeta.model_validate(meta))
