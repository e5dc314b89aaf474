from __future__ import annotations

import struct

import numpy as np
import pytest

from errors import DataFormatError, UnknownTapError
from linalg.linop import check_adjoint
from network.layers import Conv2D, Dense, Flatten, MaxPool2x2, ReLU, Softmax
from network.model import Network, accuracy, batch_jacobian_operator, forward, jacobian_operator, jvp, reference_network, vjp
from network.storage import decode_network, encode_network, load_network, save_network
from tests.fakes import generic_point, random_images, small_network

TAPS = ["conv1", "pool1", "relu2", "pool2", "dense", "softmax"]


def _layer_cases(rng):
    return [
        (Dense(rng.standard_normal((3, 5)), rng.standard_normal(3)), (5,)),
        (Conv2D(rng.standard_normal((3, 3, 2, 4)), rng.standard_normal(4), stride=1, padding=1), (6, 6, 2)),
        (Conv2D(rng.standard_normal((2, 3, 1, 2)), rng.standard_normal(2), stride=2, padding=0), (7, 8, 1)),
        (ReLU(), (4, 4, 2)),
        (MaxPool2x2(), (5, 6, 3)),
        (Flatten(), (3, 2, 2)),
        (Softmax(), (6,)),
    ]


def test_every_layer_satisfies_the_adjoint_identity():
    rng = np.random.default_rng(0)
    for layer, shape in _layer_cases(rng):
        out_shape = layer.output_shape(shape)
        x = rng.standard_normal((2, *shape))
        v = rng.standard_normal((2, *shape))
        u = rng.standard_normal((2, *out_shape))
        lhs = np.sum(layer.jvp(x, v) * u)
        rhs = np.sum(v * layer.vjp(x, u))
        assert abs(lhs - rhs) <= 1e-12 * (1.0 + abs(lhs)), layer


def test_conv_forward_matches_direct_loop():
    rng = np.random.default_rng(1)
    kernels, bias = rng.standard_normal((3, 2, 2, 3)), rng.standard_normal(3)
    conv = Conv2D(kernels, bias, stride=2, padding=1)
    x = rng.standard_normal((1, 5, 6, 2))
    padded = np.pad(x[0], ((1, 1), (1, 1), (0, 0)))
    out = conv.forward(x)[0]
    assert out.shape == conv.output_shape((5, 6, 2))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            patch = padded[2 * i : 2 * i + 3, 2 * j : 2 * j + 2, :]
            expected = np.einsum("abc,abcd->d", patch, kernels) + bias
            assert np.allclose(out[i, j], expected, atol=1e-12)


def test_conv_parameter_gradient_matches_finite_difference():
    rng = np.random.default_rng(2)
    conv = Conv2D(rng.standard_normal((3, 3, 1, 2)), rng.standard_normal(2), padding=1)
    x = rng.standard_normal((2, 4, 4, 1))
    u = rng.standard_normal((2, 4, 4, 2))
    d_kernels, d_bias = conv.param_grads(x, u)
    delta = 1e-6
    for index in [(0, 0, 0, 0), (1, 2, 0, 1), (2, 1, 0, 0)]:
        bumped = conv.clone()
        bumped.kernels[index] += delta
        numeric = (np.sum(bumped.forward(x) * u) - np.sum(conv.forward(x) * u)) / delta
        assert numeric == pytest.approx(d_kernels[index], rel=1e-5, abs=1e-6)
    assert np.allclose(d_bias, u.sum(axis=(0, 1, 2)))


def test_relu_derivative_at_zero_is_zero():
    relu = ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    assert np.array_equal(relu.jvp(x, np.ones_like(x)), [[0.0, 0.0, 1.0]])
    assert np.array_equal(relu.vjp(x, np.ones_like(x)), [[0.0, 0.0, 1.0]])


def test_max_pool_breaks_ties_by_lowest_index_and_drops_odd_edges():
    pool = MaxPool2x2()
    x = np.array([[5.0, 5.0, 9.0], [1.0, 2.0, 9.0], [9.0, 9.0, 9.0]]).reshape(1, 3, 3, 1)
    assert pool.output_shape((3, 3, 1)) == (1, 1, 1)
    assert pool.forward(x).ravel().tolist() == [5.0]
    routed = pool.vjp(x, np.ones((1, 1, 1, 1)))[0, :, :, 0]
    assert routed.tolist() == [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]


def test_softmax_probabilities_and_symmetric_jacobian():
    softmax = Softmax()
    x = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]])
    probs = softmax.forward(x)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert np.allclose(probs[1], [0.5, 0.5, 0.0])
    v = np.random.default_rng(3).standard_normal(x.shape)
    assert np.array_equal(softmax.jvp(x, v), softmax.vjp(x, v))
    assert np.allclose(softmax.jvp(x, np.ones_like(x)), 0.0)


def test_network_validation():
    with pytest.raises(ValueError):
        Network([Dense(np.eye(2), np.zeros(2))], (2,))
    with pytest.raises(ValueError):
        Network([Dense(np.eye(2), np.zeros(2), name="a"), ReLU(name="a"), Softmax()], (2,))
    with pytest.raises(ValueError):
        Network([Dense(np.eye(2), np.zeros(2)), Softmax()], (3,))


def test_unknown_tap_lists_available_taps(net):
    with pytest.raises(UnknownTapError) as excinfo:
        net.tap("block9")
    assert "pool1" in str(excinfo.value)
    assert excinfo.value.available == net.layer_names
    assert isinstance(excinfo.value, KeyError)


def test_reference_network_layout(net):
    assert net.layer_names == ["conv1", "relu1", "pool1", "conv2", "relu2", "pool2", "flatten", "dense", "softmax"]
    assert net.tap("pool1").output_shape == (4, 4, 8)
    assert net.class_count == 10
    again = small_network(seed=3)
    assert np.array_equal(encode_network(net), encode_network(again))


def test_forward_is_a_probability_vector(net):
    x = random_images(1, seed=4)[0]
    probs = forward(net, x)
    assert probs.shape == (10,)
    assert probs.sum() == pytest.approx(1.0)
    assert np.array_equal(forward(net, x, "pool1"), net.forward_batch(x[np.newaxis], upto=2)[0])
    with pytest.raises(ValueError):
        forward(net, np.zeros((7, 7, 1)))


@pytest.mark.parametrize("tap", TAPS)
def test_jvp_and_vjp_match_central_differences(net, tap):
    rng = np.random.default_rng(5)
    delta = 1e-5
    for _ in range(20):
        x = generic_point(net, rng)
        v = rng.standard_normal(net.input_shape)
        u = rng.standard_normal(net.tap(tap).output_shape)
        numeric = (forward(net, x + delta * v, tap) - forward(net, x - delta * v, tap)) / (2 * delta)
        analytic = jvp(net, tap, x, v)
        assert np.linalg.norm(numeric - analytic) <= 1e-5 * np.linalg.norm(analytic) + 1e-13

        pulled = vjp(net, tap, x, u)
        tolerance = 1e-9 * np.linalg.norm(u) * np.linalg.norm(analytic) + 1e-13
        assert np.sum(pulled * v) == pytest.approx(np.sum(u * numeric), rel=1e-5, abs=tolerance)

        lhs, rhs = np.sum(analytic * u), np.sum(v * pulled)
        scale = np.linalg.norm(analytic) * np.linalg.norm(u) + np.linalg.norm(v) * np.linalg.norm(pulled)
        assert abs(lhs - rhs) <= 1e-10 * scale


def test_linearization_error_shrinks_with_step(net):
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = generic_point(net, rng)
        v = rng.standard_normal(net.input_shape)
        v /= np.linalg.norm(v)
        base, slope = forward(net, x), jvp(net, None, x, v)
        ratios = []
        for delta in (1e-2, 5e-3, 2.5e-3):
            error = np.linalg.norm(forward(net, x + delta * v) - base - delta * slope)
            ratios.append(error / delta)
        assert all(np.isfinite(ratios))
        assert ratios[1] <= 1.5 * ratios[0] + 1e-14
        assert ratios[2] <= 1.5 * ratios[1] + 1e-14


def test_jacobian_operator_adjoint_and_matches_jvp(net):
    x = generic_point(net, np.random.default_rng(7))
    operator = jacobian_operator(net, "pool1", x)
    assert operator.shape == (128, 64)
    assert check_adjoint(operator, trials=5, seed=0) <= 1e-8
    v = np.random.default_rng(8).standard_normal(64)
    assert np.array_equal(operator.apply(v), jvp(net, "pool1", x, v.reshape(8, 8, 1)).ravel())
    assert np.array_equal(operator.tap_output, forward(net, x, "pool1"))


def test_batch_operator_equals_per_image_composition(net):
    rng = np.random.default_rng(9)
    batch = list(random_images(4, seed=10))
    stacked = batch_jacobian_operator(net, "pool1", batch, workers=2)
    v = rng.standard_normal(64)
    u = rng.standard_normal(stacked.out_dim)
    expected = np.concatenate([jvp(net, "pool1", x, v.reshape(8, 8, 1)).ravel() for x in batch])
    assert np.allclose(stacked.apply(v), expected, atol=1e-12, rtol=0)
    pulled = sum(vjp(net, "pool1", x, u[stacked.block_slice(j)].reshape(4, 4, 8)).ravel() for j, x in enumerate(batch))
    assert np.allclose(stacked.apply_adjoint(u), pulled, atol=1e-12, rtol=0)
    with pytest.raises(ValueError):
        batch_jacobian_operator(net, "pool1", [])


def test_parallel_prediction_matches_serial(net):
    xs = random_images(30, seed=11)
    assert np.array_equal(net.predict_proba(xs, chunk_size=7, workers=1), net.predict_proba(xs, chunk_size=7, workers=4))
    labels = net.predict(xs)
    assert accuracy(net, xs, labels) == 1.0


def test_network_storage_round_trip(net, tmp_path):
    path = save_network(net, tmp_path / "model.sfn1")
    loaded = load_network(path, net.input_shape)
    assert loaded.layer_names == net.layer_names
    xs = random_images(3, seed=12)
    assert np.array_equal(loaded.forward_batch(xs), net.forward_batch(xs))
    assert encode_network(loaded) == path.read_bytes()

    strided = Network([Conv2D(np.ones((2, 2, 1, 1)), np.zeros(1), stride=2, padding=1, name="c"), Flatten(), Softmax()], (4, 4, 1))
    restored = decode_network(encode_network(strided), (4, 4, 1)).layers[0]
    assert (restored.stride, restored.padding, restored.name) == (2, 1, "c")


def _walk_sfn1(payload: bytes) -> list[tuple[int, str, list[tuple[int, ...]]]]:
    pos = 4
    (count,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    records = []
    for _ in range(count):
        tag, name_len = struct.unpack_from("<BH", payload, pos)
        pos += 3
        name = payload[pos : pos + name_len].decode("utf-8")
        pos += name_len
        shapes = []
        for _ in range({0: 2, 1: 2}.get(tag, 0)):
            (rank,) = struct.unpack_from("<B", payload, pos)
            shapes.append(struct.unpack_from(f"<{rank}I", payload, pos + 1))
            pos += 1 + 4 * rank
        pos += 8 * sum(int(np.prod(shape)) for shape in shapes)
        records.append((tag, name, shapes))
    assert pos == len(payload)
    return records


def test_sfn1_layout_has_weights_and_bias_only(net):
    payload = encode_network(net)
    assert payload[:4] == b"SFN1"
    records = _walk_sfn1(payload)
    assert [name for _, name, _ in records] == net.layer_names
    assert [tag for tag, _, _ in records] == [1, 2, 3, 1, 2, 3, 4, 0, 5]
    assert records[0][2] == [(3, 3, 1, 8), (8,)]
    dense = net.layers[7]
    assert records[7][2] == [dense.weights.shape, dense.bias.shape]

    strided = Network([Conv2D(np.ones((2, 2, 1, 1)), np.zeros(1), stride=2, padding=0, name="c"), Flatten(), Softmax()], (4, 4, 1))
    assert _walk_sfn1(encode_network(strided))[0] == (1, "c@s2p0", [(2, 2, 1, 1), (1,)])


def test_network_storage_rejects_bad_payloads(net, tmp_path):
    payload = encode_network(net)
    with pytest.raises(DataFormatError):
        decode_network(b"XXXX" + payload[4:], net.input_shape)
    with pytest.raises(DataFormatError):
        decode_network(payload[:-8], net.input_shape)
    with pytest.raises(DataFormatError):
        decode_network(payload + b"\x00", net.input_shape)
    with pytest.raises(FileNotFoundError):
        load_network(tmp_path / "missing.sfn1")


def test_reference_network_folds_input_scale():
    unscaled = reference_network(seed=1, input_shape=(8, 8, 1), input_scale=1.0)
    scaled = reference_network(seed=1, input_shape=(8, 8, 1))
    assert np.array_equal(scaled.layers[0].kernels, unscaled.layers[0].kernels * 2.0**-8)
    assert np.array_equal(scaled.layers[3].kernels, unscaled.layers[3].kernels)
