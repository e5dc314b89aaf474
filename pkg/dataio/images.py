import json
import logging
from pathlib import Path

import numpy as np

from dataio.reports import to_jsonable
from dataio.sfp1 import write_array

logger = logging.getLogger(__name__)

MODES = ("raw", "pgm", "ppm")
TRANSFORMS = ("identity", "minmax")


def display_affine(t: np.ndarray, transform: str) -> tuple[float, float]:
    """(scale, offset) so that pixel = value * scale + offset."""
    if transform == "identity":
        return 1.0, 0.0
    if transform == "minmax":
        lo, hi = (float(t.min()), float(t.max())) if t.size else (0.0, 0.0)
        if hi == lo:
            return 0.0, 128.0
        scale = 255.0 / (hi - lo)
        return scale, -lo * scale
    raise ValueError(f"unknown display transform {transform!r}, expected one of {TRANSFORMS}")


def _to_pixels(t: np.ndarray, scale: float, offset: float) -> tuple[np.ndarray, int]:
    mapped = np.rint(t * scale + offset)
    clamped = int(np.count_nonzero((mapped < 0.0) | (mapped > 255.0)))
    return np.clip(mapped, 0.0, 255.0).astype(np.uint8), clamped


def export_image(t, path: str | Path, mode: str = "pgm", transform: str = "minmax", extra: dict | None = None) -> dict:
    """Write ``t`` as raw float (SFP1), PGM (P5) or PPM (P6), plus a JSON sidecar.

    The sidecar records the affine display transform, so stored pixels map back
    to values as (pixel - offset) / scale, and the count of clamped pixels. A
    constant tensor has scale 0 and records its value as ``constant``.
    """
    t = np.asarray(t, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar: dict = {"mode": mode, "shape": list(t.shape), **(extra or {})}

    if mode == "raw":
        write_array(path, t, p=float("inf"), norm=float(np.max(np.abs(t))) if t.size else 0.0, meta={"kind": "raw"})
    elif mode in ("pgm", "ppm"):
        if mode == "pgm":
            if t.ndim == 3 and t.shape[2] == 1:
                t = t[..., 0]
            if t.ndim != 2:
                raise ValueError(f"pgm export needs a rank-2 (or single-channel) tensor, got {t.shape}")
        elif t.ndim != 3 or t.shape[2] != 3:
            raise ValueError(f"ppm export needs a (H, W, 3) tensor, got {t.shape}")
        scale, offset = display_affine(t, transform)
        pixels, clamped = _to_pixels(t, scale, offset)
        magic = b"P5" if mode == "pgm" else b"P6"
        header = magic + f"\n{t.shape[1]} {t.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + pixels.tobytes())
        sidecar.update({"transform": transform, "scale": scale, "offset": offset, "clamped": clamped})
        if scale == 0.0 and t.size:
            sidecar["constant"] = float(t.flat[0])
        if clamped:
            logger.warning("export %s: %d pixels clamped to [0, 255]", path, clamped)
    else:
        raise ValueError(f"unknown export mode {mode!r}, expected one of {MODES}")

    sidecar_path = path.with_name(path.name + ".json")
    sidecar_path.write_text(json.dumps(to_jsonable(sidecar), sort_keys=True, indent=2), encoding="utf-8")
    logger.info("Exported %s (%s)", path, mode)
    return sidecar


def read_netpbm(path: str | Path) -> np.ndarray:
    payload = Path(path).read_bytes()
    parts = payload.split(b"\n", 3)
    magic, dims, maxval, body = parts[0], parts[1], parts[2], parts[3]
    width, height = (int(v) for v in dims.split())
    if maxval != b"255" or magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported netpbm header")
    channels = 1 if magic == b"P5" else 3
    pixels = np.frombuffer(body, dtype=np.uint8, count=width * height * channels)
    return pixels.reshape(height, width) if channels == 1 else pixels.reshape(height, width, 3)
