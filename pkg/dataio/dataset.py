import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import config
from dataio.idx import read_idx_images, read_idx_labels

logger = logging.getLogger(__name__)

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "eval": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images (N, H, W, C) with raw pixels in [0, 255] and their class labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    class_count: int = config.CLASS_COUNT

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim == 3:
            images = images[..., np.newaxis]
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"dataset images must be (N, H, W[, C]), got {images.shape}")
        if len(images) != len(labels):
            raise ValueError(f"dataset has {len(images)} images but {len(labels)} labels")
        if images.size and (images.min() < 0.0 or images.max() > config.PIXEL_MAX):
            raise ValueError("dataset pixels must lie in [0, 255]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError(f"dataset labels must lie in [0, {self.class_count})")
        if self.split not in SPLIT_FILES:
            raise ValueError(f"unknown split {self.split!r}")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, ids) -> np.ndarray:
        return self.images[np.asarray(ids, dtype=np.int64)]


def _find(directory: Path, stem: str) -> Path:
    candidates = [stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"]
    for name in candidates:
        path = directory / name
        if path.exists():
            return path
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def load_dataset(directory: str | Path, split: str, class_count: int = config.CLASS_COUNT) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    if split not in SPLIT_FILES:
        raise ValueError(f"unknown split {split!r}, expected one of {sorted(SPLIT_FILES)}")
    image_stem, label_stem = SPLIT_FILES[split]
    images = read_idx_images(_find(directory, image_stem))
    labels = read_idx_labels(_find(directory, label_stem))
    dataset = Dataset(images=images, labels=labels, split=split, class_count=class_count)
    logger.info(f"Loaded {split} split: {len(dataset)} images of shape {dataset.image_shape} from {directory}")
    return dataset
