"""Desk-scale experiments on real MNIST; run with MNIST_DIR=/path/to/idx pytest -m slow."""

from __future__ import annotations

import numpy as np
import pytest

from attack.universal import build_universal, select_batch
from dataio.dataset import load_dataset
from entities import HolderPair, PerturbSpec, PowerSettings, TrainSettings
from evaluation.fooling import fooling_rate, random_baseline
from evaluation.sweeps import sweep_batch_size
from linalg.power import power_method
from network.model import batch_jacobian_operator, reference_network
from network.training import train_toy

pytestmark = pytest.mark.slow

SPEC = PerturbSpec(tap="pool1", pair=HolderPair(p="inf", q=5), norm_budget=25.0, batch_size=64, batch_seed=0)


@pytest.fixture(scope="module")
def mnist(mnist_dir):
    return load_dataset(mnist_dir, "train"), load_dataset(mnist_dir, "eval")


@pytest.fixture(scope="module")
def trained(mnist):
    train_set, eval_set = mnist
    settings = TrainSettings(seed=0)
    return train_toy(reference_network(seed=0), train_set.images, train_set.labels, settings, eval_set.images, eval_set.labels)


def test_reference_network_reaches_accuracy_floor(trained):
    _, report = trained
    assert report.test_accuracy >= 0.97


def test_universal_perturbation_beats_random_signs(trained, mnist, golden):
    net, train_report = trained
    train_set, eval_set = mnist
    perturbation, power = build_universal(net, train_set, SPEC, workers=4)
    report = fooling_rate(net, eval_set, perturbation, workers=4)
    rate = report.fooling_rate
    controls = [random_baseline(net.input_shape, 25.0, np.inf, seed) for seed in range(5)]
    baselines = [fooling_rate(net, eval_set, control, workers=4).fooling_rate for control in controls]
    assert rate >= 0.10
    assert rate >= 2 * float(np.mean(baselines))
    golden(
        "mnist_acceptance",
        {"test_accuracy": train_report.test_accuracy, "singular_value": power.singular_value, "fooled_count": report.fooled_count, "fooling_rate": rate},
    )


def test_small_batches_keep_most_of_the_fooling_rate(trained, mnist):
    net, _ = trained
    train_set, eval_set = mnist
    report = sweep_batch_size(net, train_set, eval_set, SPEC, [16, 64], workers=4)
    at_16, at_64 = (point.fooling_rate for point in report.points)
    assert at_16 >= 0.7 * at_64


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_stacked_power_method_converges_quickly(trained, mnist, seed):
    net, _ = trained
    train_set, _ = mnist
    batch = list(train_set.subset(select_batch(train_set, 64, seed)))
    operator = batch_jacobian_operator(net, "pool1", batch, workers=4)
    report = power_method(operator, HolderPair(p="inf", q=10), PowerSettings(max_iters=60, rel_tol=1e-3, seed=seed))
    assert report.converged
    assert report.iterations <= 60
