import logging

import numpy as np

from entities import TrainReport, TrainSettings
from errors import TrainingDivergedError
from network.layers import Conv2D, Dense, Flatten, Layer, Softmax
from network.model import Network, accuracy

logger = logging.getLogger(__name__)


def _first_parametric(layers: list[Layer]) -> int:
    for index, layer in enumerate(layers):
        if isinstance(layer, (Dense, Conv2D)):
            return index
        if not isinstance(layer, Flatten):
            raise ValueError(f"input scaling needs a linear layer before {layer!r}")
    raise ValueError("network has no trainable layer")


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(len(labels))
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / len(labels)


def train_toy(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    settings: TrainSettings | None = None,
    eval_images: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
) -> tuple[Network, TrainReport]:
    """Minibatch SGD (with momentum) on softmax cross-entropy.

    Inputs are multiplied by ``settings.input_scale`` during training; the
    factor is divided out of the first layer before and multiplied back after,
    which is exact for powers of two, so the returned network takes raw pixels.
    """
    settings = settings or TrainSettings()
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    if not isinstance(net.layers[-1], Softmax):
        raise ValueError("training expects a network ending in Softmax")

    layers = [layer.clone() for layer in net.layers]
    body = layers[:-1]
    first = _first_parametric(body)
    body[first].parameters()[0][...] /= settings.input_scale

    rng = np.random.default_rng(settings.seed)
    velocities = [[np.zeros_like(p) for p in layer.parameters()] for layer in body]
    report = TrainReport(settings=settings)
    n = len(images)

    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for step, start in enumerate(range(0, n, settings.batch_size), start=1):
            idx = order[start : start + settings.batch_size]
            acts = [images[idx] * settings.input_scale]
            for layer in body:
                acts.append(layer.forward(acts[-1]))
            loss, grad = cross_entropy(acts[-1], labels[idx])
            if not np.isfinite(loss):
                logger.error("Non-finite loss at epoch %d step %d", epoch, step)
                raise TrainingDivergedError(epoch, step, loss)
            total += loss * len(idx)
            seen += len(idx)

            for i in range(len(body) - 1, -1, -1):
                layer = body[i]
                grads = layer.param_grads(acts[i], grad)
                if i > 0:
                    grad = layer.vjp(acts[i], grad)
                for param, g, vel in zip(layer.parameters(), grads, velocities[i]):
                    vel *= settings.momentum
                    vel -= settings.learning_rate * g
                    param += vel

        epoch_loss = total / max(seen, 1)
        report.epoch_losses.append(epoch_loss)
        logger.info(f"epoch {epoch}/{settings.epochs}: loss={epoch_loss:.5f}")

    body[first].parameters()[0][...] *= settings.input_scale
    trained = Network(layers, net.input_shape)

    report.train_accuracy = accuracy(trained, images, labels)
    if eval_images is not None and eval_labels is not None:
        report.test_accuracy = accuracy(trained, eval_images, eval_labels)
    logger.info(f"training done: train_accuracy={report.train_accuracy} test_accuracy={report.test_accuracy}")
    return trained, report
