"""Layers with analytic jvp and vjp rules on a leading batch axis.

Kinks: ReLU'(0) = 0, and a max-pool window routes through the lowest flat index among tied maxima.
"""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class LayerTag(enum.IntEnum):
    dense = 0
    conv2d = 1
    relu = 2
    maxpool2x2 = 3
    flatten = 4
    softmax = 5


class Layer(ABC):
    tag: LayerTag
    name: str

    def parameters(self) -> list[np.ndarray]:
        return []

    def set_parameters(self, params: list[np.ndarray]) -> None:
        if params:
            raise ValueError(f"{type(self).__name__} has no parameters")

    def param_grads(self, x: np.ndarray, u: np.ndarray) -> list[np.ndarray]:
        return []

    def clone(self) -> Layer:
        copy = object.__new__(type(self))
        copy.__dict__.update(self.__dict__)
        copy.set_parameters([np.array(p, dtype=np.float64) for p in self.parameters()])
        return copy

    def freeze(self) -> None:
        for p in self.parameters():
            p.setflags(write=False)

    @abstractmethod
    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]: ...

    @abstractmethod
    def forward(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def jvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def vjp(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


@dataclass(repr=False, eq=False)
class Dense(Layer):
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    name: str = "dense"
    tag: LayerTag = field(default=LayerTag.dense, init=False)

    def __post_init__(self) -> None:
        self.set_parameters([self.weights, self.bias])

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def set_parameters(self, params: list[np.ndarray]) -> None:
        weights, bias = (np.asarray(p, dtype=np.float64) for p in params)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ValueError(f"dense layer {self.name!r}: weights {weights.shape} and bias {bias.shape} do not match")
        self.weights, self.bias = weights, bias

    def output_shape(self, input_shape):
        if input_shape != (self.weights.shape[1],):
            raise ValueError(f"dense layer {self.name!r} expects input ({self.weights.shape[1]},), got {input_shape}")
        return (self.weights.shape[0],)

    def forward(self, x):
        return x @ self.weights.T + self.bias

    def jvp(self, x, v):
        return v @ self.weights.T

    def vjp(self, x, u):
        return u @ self.weights

    def param_grads(self, x, u):
        return [u.T @ x, u.sum(axis=0)]


@dataclass(repr=False, eq=False)
class Conv2D(Layer):
    kernels: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray  # (c_out,)
    stride: int = 1
    padding: int = 0
    name: str = "conv"
    tag: LayerTag = field(default=LayerTag.conv2d, init=False)

    def __post_init__(self) -> None:
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"conv layer {self.name!r}: bad stride={self.stride} padding={self.padding}")
        self.set_parameters([self.kernels, self.bias])

    def parameters(self) -> list[np.ndarray]:
        return [self.kernels, self.bias]

    def set_parameters(self, params: list[np.ndarray]) -> None:
        kernels, bias = (np.asarray(p, dtype=np.float64) for p in params)
        if kernels.ndim != 4 or bias.shape != (kernels.shape[3],):
            raise ValueError(f"conv layer {self.name!r}: kernels {kernels.shape} and bias {bias.shape} do not match")
        self.kernels, self.bias = kernels, bias

    def output_shape(self, input_shape):
        kh, kw, c_in, c_out = self.kernels.shape
        if len(input_shape) != 3 or input_shape[2] != c_in:
            raise ValueError(f"conv layer {self.name!r} expects (H, W, {c_in}) input, got {input_shape}")
        h, w = input_shape[0] + 2 * self.padding, input_shape[1] + 2 * self.padding
        if h < kh or w < kw:
            raise ValueError(f"conv layer {self.name!r}: input {input_shape} smaller than kernel")
        return ((h - kh) // self.stride + 1, (w - kw) // self.stride + 1, c_out)

    def _patches(self, x: np.ndarray) -> np.ndarray:
        """(N, Ho, Wo, c_in * kh * kw) im2col matrix."""
        kh, kw = self.kernels.shape[:2]
        p = self.padding
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, :: self.stride, :: self.stride]
        n, ho, wo = windows.shape[:3]
        return windows.reshape(n, ho, wo, -1)

    def _kernel_matrix(self) -> np.ndarray:
        kh, kw, c_in, c_out = self.kernels.shape
        # patch columns are ordered (c_in, kh, kw) by sliding_window_view
        return self.kernels.transpose(2, 0, 1, 3).reshape(c_in * kh * kw, c_out)

    def _linear(self, x: np.ndarray) -> np.ndarray:
        return self._patches(x) @ self._kernel_matrix()

    def forward(self, x):
        return self._linear(x) + self.bias

    def jvp(self, x, v):
        return self._linear(v)

    def vjp(self, x, u):
        kh, kw, c_in, _ = self.kernels.shape
        n, ho, wo, _ = u.shape
        p, s = self.padding, self.stride
        grads = (u @ self._kernel_matrix().T).reshape(n, ho, wo, c_in, kh, kw)
        padded = np.zeros((n, x.shape[1] + 2 * p, x.shape[2] + 2 * p, c_in))
        for i in range(kh):
            for j in range(kw):
                padded[:, i : i + s * ho : s, j : j + s * wo : s, :] += grads[..., i, j]
        return padded[:, p : p + x.shape[1], p : p + x.shape[2], :]

    def param_grads(self, x, u):
        kh, kw, c_in, c_out = self.kernels.shape
        patches = self._patches(x).reshape(-1, c_in * kh * kw)
        d_matrix = patches.T @ u.reshape(-1, c_out)
        d_kernels = d_matrix.reshape(c_in, kh, kw, c_out).transpose(1, 2, 0, 3)
        return [d_kernels, u.sum(axis=(0, 1, 2))]


@dataclass(repr=False, eq=False)
class ReLU(Layer):
    name: str = "relu"
    tag: LayerTag = field(default=LayerTag.relu, init=False)

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x):
        return np.maximum(x, 0.0)

    def jvp(self, x, v):
        return np.where(x > 0.0, v, 0.0)

    def vjp(self, x, u):
        return np.where(x > 0.0, u, 0.0)


@dataclass(repr=False, eq=False)
class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; trailing odd rows/columns are dropped."""

    name: str = "pool"
    tag: LayerTag = field(default=LayerTag.maxpool2x2, init=False)

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] < 2 or input_shape[1] < 2:
            raise ValueError(f"pool layer {self.name!r} expects (H>=2, W>=2, C) input, got {input_shape}")
        return (input_shape[0] // 2, input_shape[1] // 2, input_shape[2])

    @staticmethod
    def _windows(x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        blocks = x[:, : 2 * h2, : 2 * w2, :].reshape(n, h2, 2, w2, 2, c)
        return blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)

    def _selected(self, x: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest flat index in the window
        return np.argmax(self._windows(x), axis=-1)[..., np.newaxis]

    def forward(self, x):
        return np.take_along_axis(self._windows(x), self._selected(x), axis=-1)[..., 0]

    def jvp(self, x, v):
        return np.take_along_axis(self._windows(v), self._selected(x), axis=-1)[..., 0]

    def vjp(self, x, u):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        windows = np.zeros((n, h2, w2, c, 4))
        np.put_along_axis(windows, self._selected(x), u[..., np.newaxis], axis=-1)
        blocks = windows.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        out = np.zeros_like(x, dtype=np.float64)
        out[:, : 2 * h2, : 2 * w2, :] = blocks
        return out


@dataclass(repr=False, eq=False)
class Flatten(Layer):
    name: str = "flatten"
    tag: LayerTag = field(default=LayerTag.flatten, init=False)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def jvp(self, x, v):
        return v.reshape(v.shape[0], -1)

    def vjp(self, x, u):
        return u.reshape(x.shape)


@dataclass(repr=False, eq=False)
class Softmax(Layer):
    name: str = "softmax"
    tag: LayerTag = field(default=LayerTag.softmax, init=False)

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ValueError(f"softmax layer {self.name!r} expects a flat input, got {input_shape}")
        return tuple(input_shape)

    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def jvp(self, x, v):
        s = self.forward(x)
        return s * (v - np.sum(s * v, axis=-1, keepdims=True))

    def vjp(self, x, u):
        # the softmax Jacobian is symmetric
        return self.jvp(x, u)


LAYER_CLASSES: dict[LayerTag, type[Layer]] = {
    LayerTag.dense: Dense,
    LayerTag.conv2d: Conv2D,
    LayerTag.relu: ReLU,
    LayerTag.maxpool2x2: MaxPool2x2,
    LayerTag.flatten: Flatten,
    LayerTag.softmax: Softmax,
}
