from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

import config
from errors import UnknownTapError
from linalg.linop import LinearMap, StackedMap, ordered_map
from network.layers import Conv2D, Dense, Flatten, Layer, MaxPool2x2, ReLU, Softmax

logger = logging.getLogger(__name__)

Tensor = np.ndarray


class Network:
    """Feed-forward classifier: an ordered list of layers ending in Softmax."""

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int]) -> None:
        layers = list(layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        if not isinstance(layers[-1], Softmax):
            raise ValueError(f"final layer must be Softmax, got {layers[-1]!r}")
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"layer names must be unique, got {names}")

        shape = tuple(int(d) for d in input_shape)
        if not shape or min(shape) < 1:
            raise ValueError(f"bad input shape {input_shape}")
        shapes = [shape]
        for layer in layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        for layer in layers:
            layer.freeze()

        self.layers: tuple[Layer, ...] = tuple(layers)
        self.input_shape: tuple[int, ...] = shapes[0]
        self._shapes = tuple(shapes)
        self.class_count: int = shapes[-1][0]

    def __repr__(self) -> str:
        return f"Network(input_shape={self.input_shape}, layers={[layer.name for layer in self.layers]})"

    @property
    def layer_names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def output_shape(self, tap_index: int | None = None) -> tuple[int, ...]:
        return self._shapes[-1 if tap_index is None else tap_index + 1]

    def tap(self, name_or_index: str | int) -> LayerTap:
        if isinstance(name_or_index, int):
            if not 0 <= name_or_index < len(self.layers):
                raise ValueError(f"tap index {name_or_index} out of range [0, {len(self.layers)})")
            return LayerTap(self, name_or_index)
        try:
            return LayerTap(self, self.layer_names.index(name_or_index))
        except ValueError:
            raise UnknownTapError(name_or_index, self.layer_names) from None

    def _check_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[1:] != self.input_shape:
            raise ValueError(f"expected inputs of shape (N, {', '.join(map(str, self.input_shape))}), got {xs.shape}")
        return xs

    def activations(self, xs: np.ndarray, upto: int | None = None) -> list[np.ndarray]:
        xs = self._check_batch(xs)
        last = len(self.layers) - 1 if upto is None else upto
        values = [xs]
        for layer in self.layers[: last + 1]:
            values.append(layer.forward(values[-1]))
        return values

    def forward_batch(self, xs: np.ndarray, upto: int | None = None) -> np.ndarray:
        return self.activations(xs, upto)[-1]

    def predict_proba(self, xs: np.ndarray, chunk_size: int = config.EVAL_CHUNK_SIZE, workers: int = 1) -> np.ndarray:
        xs = self._check_batch(xs)
        starts = range(0, xs.shape[0], chunk_size)
        parts = ordered_map(lambda start: self.forward_batch(xs[start : start + chunk_size]), starts, workers)
        if not parts:
            return np.zeros((0, self.class_count))
        return np.concatenate(parts)

    def predict(self, xs: np.ndarray, chunk_size: int = config.EVAL_CHUNK_SIZE, workers: int = 1) -> np.ndarray:
        # argmax breaks ties by the lowest class index
        return np.argmax(self.predict_proba(xs, chunk_size, workers), axis=1)

    def parameter_count(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.parameters())


@dataclass(frozen=True)
class LayerTap:
    network: Network
    index: int

    @property
    def name(self) -> str:
        return self.network.layers[self.index].name

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.network.output_shape(self.index)

    @property
    def output_size(self) -> int:
        return int(np.prod(self.output_shape))


def _resolve_tap(net: Network, tap: LayerTap | str | int | None) -> int:
    if tap is None:
        return len(net.layers) - 1
    if isinstance(tap, LayerTap):
        if tap.network is not net:
            raise ValueError("tap belongs to a different network")
        return tap.index
    return net.tap(tap).index


def _single(net: Network, x: Tensor, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ValueError(f"{what}: expected shape {net.input_shape}, got {x.shape}")
    return x[np.newaxis]


def _push_tangent(net: Network, acts: list[np.ndarray], upto: int, v: np.ndarray) -> np.ndarray:
    for layer, a in zip(net.layers[: upto + 1], acts):
        v = layer.jvp(a, v)
    return v


def _pull_cotangent(net: Network, acts: list[np.ndarray], upto: int, u: np.ndarray) -> np.ndarray:
    for i in range(upto, -1, -1):
        u = net.layers[i].vjp(acts[i], u)
    return u


def forward(net: Network, x: Tensor, tap: LayerTap | str | int | None = None) -> Tensor:
    upto = _resolve_tap(net, tap)
    return net.forward_batch(_single(net, x, "forward"), upto)[0]


def jvp(net: Network, tap: LayerTap | str | int | None, x: Tensor, v: Tensor) -> Tensor:
    upto = _resolve_tap(net, tap)
    xb = _single(net, x, "jvp point")
    vb = _single(net, v, "jvp tangent")
    acts = net.activations(xb, upto)
    return _push_tangent(net, acts, upto, vb)[0]


def vjp(net: Network, tap: LayerTap | str | int | None, x: Tensor, u: Tensor) -> Tensor:
    upto = _resolve_tap(net, tap)
    xb = _single(net, x, "vjp point")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != net.output_shape(upto):
        raise ValueError(f"vjp cotangent: expected shape {net.output_shape(upto)}, got {u.shape}")
    acts = net.activations(xb, upto)
    return _pull_cotangent(net, acts, upto, u[np.newaxis])[0]


class JacobianMap(LinearMap):
    # activations at x are computed once; apply and apply_adjoint only propagate tangents

    def __init__(self, net: Network, tap: LayerTap | str | int | None, x: Tensor) -> None:
        self.network = net
        self.tap_index = _resolve_tap(net, tap)
        point = _single(net, x, "jacobian point")
        acts = net.activations(point, self.tap_index)
        for a in acts:
            a.setflags(write=False)
        self._acts = acts
        self._out_shape = net.output_shape(self.tap_index)
        super().__init__(in_dim=int(np.prod(net.input_shape)), out_dim=int(np.prod(self._out_shape)))

    @property
    def point(self) -> np.ndarray:
        return self._acts[0][0]

    @property
    def tap_output(self) -> np.ndarray:
        return self._acts[-1][0]

    def _apply(self, v):
        tangent = v.reshape((1, *self.network.input_shape))
        return _push_tangent(self.network, self._acts, self.tap_index, tangent).ravel()

    def _apply_adjoint(self, u):
        cotangent = u.reshape((1, *self._out_shape))
        return _pull_cotangent(self.network, self._acts, self.tap_index, cotangent).ravel()


def jacobian_operator(net: Network, tap: LayerTap | str | int | None, x: Tensor) -> JacobianMap:
    return JacobianMap(net, tap, x)


def batch_jacobian_operator(net: Network, tap: LayerTap | str | int | None, batch: Sequence[Tensor], workers: int = 1) -> StackedMap:
    """J_i(X_b): per-image Jacobians stacked vertically, in batch order."""
    if len(batch) == 0:
        raise ValueError("batch jacobian needs a non-empty batch")
    blocks = ordered_map(lambda x: JacobianMap(net, tap, x), list(batch), workers)
    return StackedMap(blocks, workers=workers)


def reference_network(
    seed: int = 0,
    input_shape: Sequence[int] = (28, 28, 1),
    class_count: int = config.CLASS_COUNT,
    input_scale: float = config.TRAIN_INPUT_SCALE,
) -> Network:
    """conv1 3x3x8 -> relu1 -> pool1 -> conv2 3x3x16 -> relu2 -> pool2 -> flatten -> dense -> softmax.

    He-initialized for inputs scaled by ``input_scale``; the scale is folded into
    conv1 so the network consumes raw [0, 255] pixels.
    """
    rng = np.random.default_rng(seed)
    h, w, c = input_shape

    def he(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    conv1 = Conv2D(he((3, 3, c, 8), 9 * c) * input_scale, np.zeros(8), stride=1, padding=1, name="conv1")
    conv2 = Conv2D(he((3, 3, 8, 16), 9 * 8), np.zeros(16), stride=1, padding=1, name="conv2")
    flat = (h // 2 // 2) * (w // 2 // 2) * 16
    dense = Dense(he((class_count, flat), flat) * 0.5, np.zeros(class_count), name="dense")
    layers = [
        conv1,
        ReLU(name="relu1"),
        MaxPool2x2(name="pool1"),
        conv2,
        ReLU(name="relu2"),
        MaxPool2x2(name="pool2"),
        Flatten(name="flatten"),
        dense,
        Softmax(name="softmax"),
    ]
    return Network(layers, input_shape)


def accuracy(net: Network, images: np.ndarray, labels: np.ndarray, workers: int = 1) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(net.predict(images, workers=workers) == np.asarray(labels)))
