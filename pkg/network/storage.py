"""SFN1 model files.

Layout (little-endian)::

    b"SFN1" | u32 layer_count
    per layer: u8 tag | u16 name_len | name (utf-8)
               per parameter tensor: u8 rank | u32 extent * rank
               float64 values of every parameter tensor, in the same order

Dense and Conv2D store (weights, bias); the other layers store nothing.
Convolutions are stride 1, padding 1 unless the stored name ends in
``@s<stride>p<padding>``. The input shape is not stored; callers pass the
shape of the data the model consumes.
"""

import io
import logging
import re
import struct
from pathlib import Path

import numpy as np

from errors import DataFormatError
from network.layers import LAYER_CLASSES, Conv2D, Dense, Layer, LayerTag
from network.model import Network

logger = logging.getLogger(__name__)

MAGIC = b"SFN1"
_TENSOR_COUNT = {LayerTag.dense: 2, LayerTag.conv2d: 2}
CONV_GEOMETRY = (1, 1)
_GEOMETRY_SUFFIX = re.compile(r"(?P<name>.*)@s(?P<stride>\d+)p(?P<padding>\d+)")


def _stored_name(layer: Layer) -> str:
    if isinstance(layer, Conv2D) and (layer.stride, layer.padding) != CONV_GEOMETRY:
        return f"{layer.name}@s{layer.stride}p{layer.padding}"
    return layer.name


def _conv_geometry(stored: str) -> tuple[str, int, int]:
    match = _GEOMETRY_SUFFIX.fullmatch(stored)
    if match is None:
        return stored, *CONV_GEOMETRY
    return match["name"], int(match["stride"]), int(match["padding"])


def encode_network(net: Network) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        name = _stored_name(layer).encode("utf-8")
        out.write(struct.pack("<BH", int(layer.tag), len(name)))
        out.write(name)
        tensors = layer.parameters()
        for tensor in tensors:
            out.write(struct.pack("<B", tensor.ndim))
            out.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        for tensor in tensors:
            out.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, payload: bytes, source: str) -> None:
        self._payload = payload
        self._pos = 0
        self._source = source

    def take(self, size: int) -> bytes:
        if self._pos + size > len(self._payload):
            raise DataFormatError(f"{self._source}: truncated at byte {self._pos}, need {size} more")
        chunk = self._payload[self._pos : self._pos + size]
        self._pos += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def at_end(self) -> bool:
        return self._pos == len(self._payload)


def decode_network(payload: bytes, input_shape: tuple[int, ...], source: str = "<bytes>") -> Network:
    reader = _Reader(payload, source)
    if reader.take(4) != MAGIC:
        raise DataFormatError(f"{source}: not an SFN1 model file")
    (layer_count,) = reader.unpack("<I")
    layers: list[Layer] = []
    for _ in range(layer_count):
        tag_raw, name_len = reader.unpack("<BH")
        try:
            tag = LayerTag(tag_raw)
        except ValueError:
            raise DataFormatError(f"{source}: unknown layer tag {tag_raw}") from None
        name = reader.take(name_len).decode("utf-8")
        shapes = []
        for _ in range(_TENSOR_COUNT.get(tag, 0)):
            (rank,) = reader.unpack("<B")
            shapes.append(reader.unpack(f"<{rank}I"))
        tensors = []
        for shape in shapes:
            count = int(np.prod(shape))
            tensors.append(np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape))

        if tag == LayerTag.dense:
            layers.append(Dense(tensors[0], tensors[1], name=name))
        elif tag == LayerTag.conv2d:
            name, stride, padding = _conv_geometry(name)
            layers.append(Conv2D(tensors[0], tensors[1], stride=stride, padding=padding, name=name))
        else:
            layers.append(LAYER_CLASSES[tag](name=name))
    if not reader.at_end():
        raise DataFormatError(f"{source}: trailing bytes after {layer_count} layers")
    return Network(layers, input_shape)


def save_network(net: Network, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_network(net))
    logger.info("Saved model %s (%d parameters)", path, net.parameter_count())
    return path


def load_network(path: str | Path, input_shape: tuple[int, ...] = (28, 28, 1)) -> Network:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    return decode_network(path.read_bytes(), tuple(input_shape), source=str(path))
