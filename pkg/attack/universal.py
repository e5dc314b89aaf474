from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dataio.dataset import Dataset
from entities import HolderPair, PerturbationMeta, PerturbSpec, PowerSettings
from errors import PerturbationBuildError
from linalg.linop import LinearMap
from linalg.power import PowerReport, p_norm, power_method
from network.model import LayerTap, Network, batch_jacobian_operator

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Perturbation:
    epsilon: np.ndarray
    p: float
    norm: float
    meta: PerturbationMeta = field(default_factory=PerturbationMeta)

    def __post_init__(self) -> None:
        epsilon = np.array(self.epsilon, dtype=np.float64)
        epsilon.setflags(write=False)
        object.__setattr__(self, "epsilon", epsilon)
        actual = p_norm(epsilon, self.p)
        if abs(actual - self.norm) > 1e-8 * max(abs(self.norm), 1e-300):
            raise ValueError(f"perturbation norm field {self.norm} disagrees with ||epsilon||_p = {actual}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.epsilon.shape)


def select_batch(dataset: Dataset | int, b: int, seed: int) -> list[int]:
    size = dataset if isinstance(dataset, int) else len(dataset)
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    if b > size:
        raise ValueError(f"batch size {b} exceeds dataset size {size}")
    order = np.random.default_rng(seed).permutation(size)
    return [int(i) for i in order[:b]]


def stacked_objective(operator: LinearMap, epsilon: np.ndarray, q: float) -> float:
    return p_norm(operator.apply(np.asarray(epsilon, dtype=np.float64).ravel()), q)


def _build(
    net: Network,
    images: np.ndarray,
    image_ids: list[int],
    tap: LayerTap | str,
    pair: HolderPair,
    norm_budget: float,
    power: PowerSettings,
    workers: int,
) -> tuple[Perturbation, PowerReport]:
    if norm_budget <= 0:
        raise ValueError(f"norm budget must be positive, got {norm_budget}")
    tap = tap if isinstance(tap, LayerTap) else net.tap(tap)
    operator = batch_jacobian_operator(net, tap, list(images), workers=workers)
    logger.info(
        f"Running power method {pair.label()} on tap {tap.name}: operator {operator.out_dim}x{operator.in_dim}, batch {len(images)}"
    )
    report = power_method(operator, pair, power)
    if report.failure:
        logger.error("Perturbation build failed on tap %s: %s", tap.name, report.failure)
        raise PerturbationBuildError(f"power method failed on tap {tap.name}: {report.failure}", report)
    if not report.converged:
        logger.warning("power method hit max_iters=%d before rel_tol=%g (s=%.6g)", power.max_iters, power.rel_tol, report.singular_value)

    epsilon = norm_budget * report.vector.reshape(net.input_shape)
    meta = PerturbationMeta(
        kind="universal" if len(images) > 1 else "per-image",
        singular_value=report.singular_value,
        tap=tap.name,
        image_ids=list(image_ids),
        pair=pair,
        iterations=report.iterations,
        converged=report.converged,
        seed=power.seed,
    )
    perturbation = Perturbation(epsilon=epsilon, p=pair.p, norm=p_norm(epsilon, pair.p), meta=meta)
    logger.info(f"Built perturbation: s={report.singular_value:.6g} iterations={report.iterations} norm={perturbation.norm:.6g}")
    return perturbation, report


def build_universal(
    net: Network,
    dataset: Dataset,
    spec: PerturbSpec,
    workers: int = 1,
    image_ids: list[int] | None = None,
) -> tuple[Perturbation, PowerReport]:
    ids = list(image_ids) if image_ids is not None else select_batch(dataset, spec.batch_size, spec.batch_seed)
    if not ids:
        raise ValueError("universal perturbation needs at least one image")
    return _build(net, dataset.subset(ids), ids, spec.tap, spec.pair, spec.norm_budget, spec.power, workers)


def per_image_perturbation(
    net: Network,
    tap: LayerTap | str,
    x: np.ndarray,
    pair: HolderPair,
    norm_budget: float,
    power: PowerSettings | None = None,
    image_id: int | None = None,
) -> Perturbation:
    x = np.asarray(x, dtype=np.float64)
    ids = [] if image_id is None else [image_id]
    perturbation, _ = _build(net, x[np.newaxis], ids, tap, pair, norm_budget, power or PowerSettings(), workers=1)
    return perturbation


def rescale(perturbation: Perturbation, norm_budget: float) -> Perturbation:
    if norm_budget <= 0:
        raise ValueError(f"norm budget must be positive, got {norm_budget}")
    if perturbation.norm == 0:
        raise ValueError("cannot rescale a zero perturbation")
    epsilon = perturbation.epsilon * (norm_budget / perturbation.norm)
    return Perturbation(epsilon=epsilon, p=perturbation.p, norm=p_norm(epsilon, perturbation.p), meta=perturbation.meta)
