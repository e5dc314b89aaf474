"""SFP1 array files (perturbations and raw-float image exports).

Layout (little-endian)::

    b"SFP1" | u8 rank | u32 extent * rank | f64 p | f64 norm
    | u32 meta_len | meta (utf-8 JSON) | f64 values (row-major)
"""

import json
import struct
from pathlib import Path

import numpy as np

from errors import DataFormatError

MAGIC = b"SFP1"


def encode_array(values: np.ndarray, p: float, norm: float, meta: dict) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = MAGIC + struct.pack("<B", values.ndim) + struct.pack(f"<{values.ndim}I", *values.shape)
    header += struct.pack("<dd", p, norm) + struct.pack("<I", len(blob))
    return header + blob + values.tobytes()


def decode_array(payload: bytes, source: str = "<bytes>") -> tuple[np.ndarray, float, float, dict]:
    if payload[:4] != MAGIC:
        raise DataFormatError(f"{source}: not an SFP1 file")
    pos = 4
    try:
        (rank,) = struct.unpack_from("<B", payload, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", payload, pos)
        pos += 4 * rank
        p, norm, meta_len = struct.unpack_from("<ddI", payload, pos)
        pos += struct.calcsize("<ddI")
    except struct.error as exc:
        raise DataFormatError(f"{source}: header truncated") from exc
    blob = payload[pos : pos + meta_len]
    if len(blob) != meta_len:
        raise DataFormatError(f"{source}: metadata truncated")
    pos += meta_len
    count = int(np.prod(shape))
    if len(payload) - pos != 8 * count:
        raise DataFormatError(f"{source}: expected {8 * count} value bytes, found {len(payload) - pos}")
    values = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
    return values, p, norm, json.loads(blob.decode("utf-8"))


def write_array(path: str | Path, values: np.ndarray, p: float, norm: float, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_array(values, p, norm, meta))
    return path


def read_array(path: str | Path) -> tuple[np.ndarray, float, float, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"SFP1 file not found: {path}")
    return decode_array(path.read_bytes(), source=str(path))
