import math
import os

from dotenv import load_dotenv

load_dotenv(".env")


VERSION = "0.1.0"


def parse_norm_order(raw: str | float | int) -> float:
    if isinstance(raw, str):
        token = raw.strip().lower()
        if token in {"inf", "infinity", "+inf", "+infinity"}:
            return math.inf
        return float(token)
    return float(raw)


DEFAULT_P: float = parse_norm_order(os.getenv("DEFAULT_P", "inf"))
DEFAULT_Q: float = parse_norm_order(os.getenv("DEFAULT_Q", "5"))
DEFAULT_NORM_BUDGET: float = float(os.getenv("DEFAULT_NORM_BUDGET", "25"))  # raw [0, 255] pixel scale
DEFAULT_TAP: str = os.getenv("DEFAULT_TAP", "pool1")
DEFAULT_BATCH_SIZE: int = int(os.getenv("DEFAULT_BATCH_SIZE", "64"))

POWER_MAX_ITERS: int = int(os.getenv("POWER_MAX_ITERS", "100"))
POWER_REL_TOL: float = float(os.getenv("POWER_REL_TOL", "1e-5"))

WORKERS: int = int(os.getenv("WORKERS", "0")) or (os.cpu_count() or 1)
EVAL_CHUNK_SIZE: int = int(os.getenv("EVAL_CHUNK_SIZE", "500"))

TRAIN_EPOCHS: int = int(os.getenv("TRAIN_EPOCHS", "3"))
TRAIN_BATCH_SIZE: int = int(os.getenv("TRAIN_BATCH_SIZE", "64"))
TRAIN_LEARNING_RATE: float = float(os.getenv("TRAIN_LEARNING_RATE", "0.05"))
TRAIN_MOMENTUM: float = float(os.getenv("TRAIN_MOMENTUM", "0.9"))
TRAIN_INPUT_SCALE: float = 2.0**-8  # power of two keeps folding into conv1 exact

CLASS_COUNT: int = 10
PIXEL_MAX: float = 255.0

LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
