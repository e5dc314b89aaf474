from __future__ import annotations

import pytest

from attack.universal import build_universal
from entities import HolderPair, PerturbSpec, PowerSettings, TrainSettings
from evaluation.fooling import fooling_rate
from evaluation.sweeps import sweep_q
from network.model import forward
from network.training import train_toy
from tests.fakes import quadrant_dataset, small_network

SPEC = PerturbSpec(tap="pool1", pair=HolderPair(p="inf", q=5), norm_budget=25.0, batch_size=16, batch_seed=0, power=PowerSettings(seed=0))


@pytest.fixture(scope="module")
def quadrants():
    return quadrant_dataset(96, seed=0, split="train"), quadrant_dataset(48, seed=1, split="eval")


@pytest.fixture(scope="module")
def trained(quadrants):
    train_set, eval_set = quadrants
    settings = TrainSettings(epochs=4, batch_size=16, seed=0)
    return train_toy(small_network(seed=0), train_set.images, train_set.labels, settings, eval_set.images, eval_set.labels)


def test_reference_logits(trained, quadrants, golden):
    net, _ = trained
    _, eval_set = quadrants
    logits = [forward(net, eval_set.images[i], tap="dense").tolist() for i in range(4)]
    golden("reference_logits", logits, rtol=1e-8)


def test_q_curve(trained, quadrants, golden):
    net, _ = trained
    train_set, eval_set = quadrants
    report = sweep_q(net, train_set, eval_set, SPEC, [1, 2, 3, 4, 5, 10])
    curve = [
        {"q": point.value, "fooling_rate": point.fooling_rate, "singular_value": point.singular_value, "iterations": point.iterations}
        for point in report.points
    ]
    golden("q_curve", curve)


def test_end_to_end_run(trained, quadrants, golden):
    net, train_report = trained
    train_set, eval_set = quadrants
    perturbation, power = build_universal(net, train_set, SPEC)
    report = fooling_rate(net, eval_set, perturbation)
    golden(
        "end_to_end",
        {
            "test_accuracy": train_report.test_accuracy,
            "singular_value": power.singular_value,
            "iterations": power.iterations,
            "fooled_count": report.fooled_count,
            "fooling_rate": report.fooling_rate,
        },
    )
