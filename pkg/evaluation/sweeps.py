import logging
from collections.abc import Sequence

from attack.universal import build_universal, select_batch
from dataio.dataset import Dataset
from entities import HolderPair, PerturbSpec, PowerSettings, ProfileEntry, SweepPoint, SweepReport, TapRow
from errors import NumericalFailure
from evaluation.fooling import fooling_rate
from linalg.power import power_method
from network.model import Network, batch_jacobian_operator

logger = logging.getLogger(__name__)


def _check_grid(values: Sequence[float], name: str) -> list[float]:
    values = list(values)
    if not values:
        raise ValueError(f"{name} sweep needs at least one value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} values must be strictly increasing, got {values}")
    return values


def _evaluate_point(net, build_set, eval_set, spec: PerturbSpec, value: float, ids: list[int], workers: int) -> SweepPoint:
    try:
        perturbation, report = build_universal(net, build_set, spec, workers=workers, image_ids=ids)
    except NumericalFailure as exc:
        logger.exception("Sweep point %s failed", value)
        return SweepPoint(value=value, image_ids=ids, error=str(exc))
    rate = fooling_rate(net, eval_set, perturbation, workers=workers).fooling_rate
    return SweepPoint(
        value=value,
        fooling_rate=rate,
        singular_value=report.singular_value,
        iterations=report.iterations,
        converged=report.converged,
        image_ids=ids,
    )


def sweep_q(
    net: Network,
    build_set: Dataset,
    eval_set: Dataset,
    base_spec: PerturbSpec,
    q_values: Sequence[float],
    workers: int = 1,
) -> SweepReport:
    q_values = _check_grid([float(q) for q in q_values], "q")
    ids = select_batch(build_set, base_spec.batch_size, base_spec.batch_seed)
    report = SweepReport(parameter="q", base=base_spec)
    for q in q_values:
        spec = base_spec.model_copy(update={"pair": HolderPair(p=base_spec.pair.p, q=q)})
        point = _evaluate_point(net, build_set, eval_set, spec, q, ids, workers)
        logger.info(f"q={q:g}: fooling_rate={point.fooling_rate} s={point.singular_value}")
        report.points.append(point)
    return report


def sweep_batch_size(
    net: Network,
    build_set: Dataset,
    eval_set: Dataset,
    base_spec: PerturbSpec,
    b_values: Sequence[int],
    workers: int = 1,
) -> SweepReport:
    b_values = [int(b) for b in _check_grid([int(b) for b in b_values], "batch")]
    all_ids = select_batch(build_set, b_values[-1], base_spec.batch_seed)
    report = SweepReport(parameter="batch_size", base=base_spec)
    for b in b_values:
        ids = all_ids[:b]
        spec = base_spec.model_copy(update={"batch_size": b})
        logger.info(f"batch={b}: image ids {ids}")
        point = _evaluate_point(net, build_set, eval_set, spec, float(b), ids, workers)
        logger.info(f"batch={b}: fooling_rate={point.fooling_rate} s={point.singular_value}")
        report.points.append(point)
    return report


def singular_value_profile(
    net: Network,
    batch: Sequence,
    taps: Sequence[str],
    pair: HolderPair,
    power: PowerSettings | None = None,
    workers: int = 1,
) -> list[ProfileEntry]:
    power = power or PowerSettings()
    entries = []
    for name in taps:
        tap = net.tap(name)
        operator = batch_jacobian_operator(net, tap, list(batch), workers=workers)
        report = power_method(operator, pair, power)
        if report.failure:
            logger.warning("Profile tap %s failed: %s", name, report.failure)
            entries.append(ProfileEntry(tap=name, iterations=report.iterations, error=report.failure))
            continue
        logger.info(f"tap {name}: s={report.singular_value:.6g} after {report.iterations} iterations")
        entries.append(ProfileEntry(tap=name, singular_value=report.singular_value, iterations=report.iterations, converged=report.converged))
    return entries


def tap_table(
    net: Network,
    build_set: Dataset,
    eval_set: Dataset,
    base_spec: PerturbSpec,
    taps: Sequence[str],
    workers: int = 1,
) -> list[TapRow]:
    ids = select_batch(build_set, base_spec.batch_size, base_spec.batch_seed)
    rows = []
    for name in taps:
        net.tap(name)
        spec = base_spec.model_copy(update={"tap": name})
        point = _evaluate_point(net, build_set, eval_set, spec, 0.0, ids, workers)
        rows.append(TapRow(tap=name, singular_value=point.singular_value, fooling_rate=point.fooling_rate, error=point.error))
    return rows
