import logging
from abc import ABC, abstractmethod
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_TINY = 1e-300


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _as_vector(v, size: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != size:
        raise ValueError(f"{what}: expected vector of length {size}, got shape {arr.shape}")
    return arr


class LinearMap(ABC):
    def __init__(self, in_dim: int, out_dim: int) -> None:
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"operator dimensions must be positive, got in_dim={in_dim} out_dim={out_dim}")
        self._in_dim = int(in_dim)
        self._out_dim = int(out_dim)

    @property
    def in_dim(self) -> int:
        return self._in_dim

    @property
    def out_dim(self) -> int:
        return self._out_dim

    @property
    def shape(self) -> tuple[int, int]:
        return self._out_dim, self._in_dim

    def apply(self, v) -> np.ndarray:
        return self._apply(_as_vector(v, self._in_dim, f"{type(self).__name__}.apply"))

    def apply_adjoint(self, u) -> np.ndarray:
        return self._apply_adjoint(_as_vector(u, self._out_dim, f"{type(self).__name__}.apply_adjoint"))

    @abstractmethod
    def _apply(self, v: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _apply_adjoint(self, u: np.ndarray) -> np.ndarray: ...

    def __repr__(self) -> str:
        return f"{type(self).__name__}(out_dim={self._out_dim}, in_dim={self._in_dim})"


class DenseMap(LinearMap):
    def __init__(self, entries) -> None:
        matrix = np.array(entries, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"dense map needs a 2-d array, got shape {matrix.shape}")
        super().__init__(in_dim=matrix.shape[1], out_dim=matrix.shape[0])
        matrix.setflags(write=False)
        self._entries = matrix

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def rows(self) -> int:
        return self.out_dim

    @property
    def cols(self) -> int:
        return self.in_dim

    def _apply(self, v: np.ndarray) -> np.ndarray:
        return self._entries @ v

    def _apply_adjoint(self, u: np.ndarray) -> np.ndarray:
        return self._entries.T @ u


class StackedMap(LinearMap):
    def __init__(self, blocks: Sequence[LinearMap], workers: int = 1) -> None:
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("stacked map needs at least one block")
        in_dims = {block.in_dim for block in blocks}
        if len(in_dims) != 1:
            raise ValueError(f"stacked blocks disagree on in_dim: {sorted(in_dims)}")
        offsets = np.cumsum([0] + [block.out_dim for block in blocks])
        super().__init__(in_dim=blocks[0].in_dim, out_dim=int(offsets[-1]))
        self._blocks = blocks
        self._offsets = tuple(int(o) for o in offsets)
        self._workers = max(1, int(workers))

    @property
    def blocks(self) -> tuple[LinearMap, ...]:
        return self._blocks

    def block_slice(self, index: int) -> slice:
        return slice(self._offsets[index], self._offsets[index + 1])

    def _apply(self, v: np.ndarray) -> np.ndarray:
        parts = ordered_map(lambda block: block.apply(v), self._blocks, self._workers)
        return np.concatenate(parts)

    def _apply_adjoint(self, u: np.ndarray) -> np.ndarray:
        parts = ordered_map(
            lambda j: self._blocks[j].apply_adjoint(u[self.block_slice(j)]),
            range(len(self._blocks)),
            self._workers,
        )
        # reduce strictly in block order so the sum does not depend on scheduling
        total = np.zeros(self.in_dim, dtype=np.float64)
        for part in parts:
            total += part
        return total


def dense_apply(dense: DenseMap, v) -> np.ndarray:
    return dense.apply(v)


def stacked_apply(stacked: StackedMap, v) -> np.ndarray:
    return stacked.apply(v)


def stacked_apply_adjoint(stacked: StackedMap, u) -> np.ndarray:
    return stacked.apply_adjoint(u)


def materialize(linear_map: LinearMap) -> np.ndarray:
    columns = []
    for j in range(linear_map.in_dim):
        e_j = np.zeros(linear_map.in_dim)
        e_j[j] = 1.0
        columns.append(linear_map.apply(e_j))
    return np.stack(columns, axis=1)


def check_adjoint(linear_map: LinearMap, trials: int = 5, seed: int = 0) -> float:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(linear_map.in_dim)
        u = rng.standard_normal(linear_map.out_dim)
        av = linear_map.apply(v)
        lhs = float(np.dot(av, u))
        rhs = float(np.dot(v, linear_map.apply_adjoint(u)))
        scale = float(np.linalg.norm(av) * np.linalg.norm(u)) + _TINY
        worst = max(worst, abs(lhs - rhs) / scale)
    logger.debug("check_adjoint %r: max discrepancy %.3e over %d trials", linear_map, worst, trials)
    return worst
