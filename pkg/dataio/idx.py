"""IDX (MNIST-family) readers and writers.

Images (big-endian)::

    u32 magic 0x00000803 | u32 count | u32 rows | u32 cols | u8 pixels[count*rows*cols]

Labels::

    u32 magic 0x00000801 | u32 count | u8 labels[count]

Gzip-compressed files are recognized by their header and read transparently.
"""

import gzip
import logging
import struct
from pathlib import Path

import numpy as np

from errors import DataFormatError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
_GZIP_MAGIC = b"\x1f\x8b"


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    payload = path.read_bytes()
    if payload[:2] == _GZIP_MAGIC:
        payload = gzip.decompress(payload)
    return payload


def _header(payload: bytes, fields: int, magic: int, path: str | Path) -> tuple[int, ...]:
    size = 4 * fields
    if len(payload) < size:
        raise DataFormatError(f"{path}: header truncated ({len(payload)} bytes)")
    values = struct.unpack(f">{fields}I", payload[:size])
    if values[0] != magic:
        raise DataFormatError(f"{path}: magic number mismatch, expected {magic:#010x}, got {values[0]:#010x}")
    return values


def read_idx_images(path: str | Path) -> np.ndarray:
    """(count, rows, cols) float64 array with raw pixel values in [0, 255]."""
    payload = _read_bytes(path)
    _, count, rows, cols = _header(payload, 4, IMAGE_MAGIC, path)
    expected = count * rows * cols
    body = payload[16:]
    if len(body) < expected:
        raise DataFormatError(f"{path}: payload has {len(body)} bytes, header promises {expected}")
    pixels = np.frombuffer(body, dtype=np.uint8, count=expected)
    logger.debug("Read %d images of %dx%d from %s", count, rows, cols, path)
    return pixels.reshape(count, rows, cols).astype(np.float64)


def read_idx_labels(path: str | Path) -> np.ndarray:
    payload = _read_bytes(path)
    _, count = _header(payload, 2, LABEL_MAGIC, path)
    body = payload[8:]
    if len(body) < count:
        raise DataFormatError(f"{path}: payload has {len(body)} bytes, header promises {count}")
    return np.frombuffer(body, dtype=np.uint8, count=count).astype(np.int64)


def write_idx_images(path: str | Path, images) -> Path:
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError(f"IDX images must be (count, rows, cols), got {images.shape}")
    if images.size and (images.min() < 0 or images.max() > 255):
        raise ValueError("IDX pixels must lie in [0, 255]")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = struct.pack(">4I", IMAGE_MAGIC, *images.shape)
    path.write_bytes(header + images.astype(np.uint8).tobytes())
    return path


def write_idx_labels(path: str | Path, labels) -> Path:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"IDX labels must be 1-d, got {labels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(struct.pack(">2I", LABEL_MAGIC, labels.shape[0]) + labels.astype(np.uint8).tobytes())
    return path
