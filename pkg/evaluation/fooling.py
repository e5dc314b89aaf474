# clean and perturbed sides both use the network's own prediction; argmax ties go to the lowest class

import logging
import math
from collections.abc import Sequence

import numpy as np

import config
from attack.universal import Perturbation
from dataio.dataset import Dataset
from entities import FoolingReport, PerturbationMeta, PredictionFlip, TopKCurve, TopKRow, TransferMatrix
from linalg.linop import ordered_map
from linalg.power import p_norm
from network.model import Network, forward

logger = logging.getLogger(__name__)


def _check_shapes(net: Network, dataset: Dataset, perturbation: Perturbation) -> None:
    if perturbation.shape != net.input_shape:
        raise ValueError(f"perturbation shape {perturbation.shape} does not match network input {net.input_shape}")
    if len(dataset) and dataset.image_shape != net.input_shape:
        raise ValueError(f"dataset images {dataset.image_shape} do not match network input {net.input_shape}")


def fooling_rate(
    net: Network,
    dataset: Dataset,
    perturbation: Perturbation,
    workers: int = 1,
    chunk_size: int = config.EVAL_CHUNK_SIZE,
) -> FoolingReport:
    _check_shapes(net, dataset, perturbation)
    eps = perturbation.epsilon

    def count_chunk(start: int) -> np.ndarray:
        xs = dataset.images[start : start + chunk_size]
        clean = np.argmax(net.forward_batch(xs), axis=1)
        adversarial = np.argmax(net.forward_batch(xs + eps), axis=1)
        return np.bincount(clean[clean != adversarial], minlength=net.class_count)

    counts = ordered_map(count_chunk, range(0, len(dataset), chunk_size), workers)
    per_class = np.sum(counts, axis=0) if counts else np.zeros(net.class_count, dtype=np.int64)
    fooled = int(per_class.sum())
    n = len(dataset)
    report = FoolingReport(
        dataset_size=n,
        fooled_count=fooled,
        fooling_rate=fooled / n if n else 0.0,
        norm=perturbation.norm,
        p=perturbation.p,
        perturbation=perturbation.meta,
        per_class_fooled={int(c): int(k) for c, k in enumerate(per_class)},
    )
    logger.info(f"Fooling rate {report.fooling_rate:.4f} ({fooled}/{n}) at ||eps||_p={perturbation.norm:.6g}")
    return report


def random_baseline(input_shape: Sequence[int], norm_budget: float, p: float, seed: int) -> Perturbation:
    if norm_budget <= 0:
        raise ValueError(f"norm budget must be positive, got {norm_budget}")
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    if math.isinf(p):
        epsilon = np.where(rng.random(shape) < 0.5, -norm_budget, norm_budget)
    else:
        draw = rng.standard_normal(shape)
        epsilon = draw * (norm_budget / p_norm(draw, p))
    meta = PerturbationMeta(kind="random-baseline", seed=seed)
    return Perturbation(epsilon=epsilon, p=p, norm=p_norm(epsilon, p), meta=meta)


def top_k_vs_norm(net: Network, x: np.ndarray, unit: Perturbation, norms: Sequence[float], k: int = 5, image_id: int = -1) -> TopKCurve:
    if abs(unit.norm - 1.0) > 1e-8:
        raise ValueError(f"top-k curve needs a unit-norm perturbation, got norm {unit.norm}")
    norms = [float(value) for value in norms]
    if any(value < 0 for value in norms) or any(b < a for a, b in zip(norms, norms[1:])):
        raise ValueError(f"norms must be nonnegative and ascending, got {norms}")
    k = min(k, net.class_count)
    curve = TopKCurve(image_id=image_id, k=k)
    for value in norms:
        probs = forward(net, np.asarray(x, dtype=np.float64) + value * unit.epsilon)
        order = np.argsort(-probs, kind="stable")[:k]
        curve.rows.append(
            TopKRow(norm=value, classes=[int(c) for c in order], probabilities=[float(probs[c]) for c in order], total=float(probs.sum()))
        )
    return curve


def prediction_flips(net: Network, dataset: Dataset, perturbation: Perturbation, image_ids: Sequence[int]) -> list[PredictionFlip]:
    _check_shapes(net, dataset, perturbation)
    ids = [int(i) for i in image_ids]
    if not ids:
        return []
    xs = dataset.subset(ids)
    clean = net.forward_batch(xs)
    adversarial = net.forward_batch(xs + perturbation.epsilon)
    flips = []
    for row, image_id in enumerate(ids):
        c, a = int(np.argmax(clean[row])), int(np.argmax(adversarial[row]))
        flips.append(
            PredictionFlip(
                image_id=image_id,
                clean_class=c,
                clean_probability=float(clean[row, c]),
                adversarial_class=a,
                adversarial_probability=float(adversarial[row, a]),
            )
        )
    return flips


def cross_model_matrix(
    nets: Sequence[Network],
    perturbations: Sequence[Perturbation],
    dataset: Dataset,
    model_names: Sequence[str] | None = None,
    perturbation_names: Sequence[str] | None = None,
    workers: int = 1,
) -> TransferMatrix:
    rates: list[list[float | None]] = []
    for i, net in enumerate(nets):
        row: list[float | None] = []
        for j, perturbation in enumerate(perturbations):
            try:
                row.append(fooling_rate(net, dataset, perturbation, workers=workers).fooling_rate)
            except ValueError:
                logger.exception("Transfer entry (%d, %d) invalid", i, j)
                row.append(None)
        rates.append(row)
    return TransferMatrix(
        models=list(model_names or [f"model_{i}" for i in range(len(nets))]),
        perturbations=list(perturbation_names or [f"perturbation_{j}" for j in range(len(perturbations))]),
        rates=rates,
    )
