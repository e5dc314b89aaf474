"""Generalized (Boyd) power method for (p, q)-singular vectors.

For a linear map A the (p, q)-singular vector maximizes ||A x||_q subject to
||x||_p = 1; the attained value is the p -> q operator norm. The iteration is

    S x = psi_{p'}(A^T psi_q(A x)),   x <- S x / ||S x||_p,   s <- ||A x||_q

with psi_r(v) = sign(v) |v|^(r-1) applied element-wise and 1/p + 1/p' = 1.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from entities import HolderPair, InitMode, PowerSettings
from linalg.linop import DenseMap, LinearMap

logger = logging.getLogger(__name__)

_TINY = 1e-300


def psi(r: float, v) -> np.ndarray:
    if not (r >= 1.0) or math.isinf(r):
        raise ValueError(f"psi needs a finite r >= 1, got {r}")
    v = np.asarray(v, dtype=np.float64)
    if r == 1.0:
        return np.sign(v)
    if r == 2.0:
        return v.copy()
    return np.sign(v) * np.abs(v) ** (r - 1.0)


def p_norm(v, p: float) -> float:
    if not (p >= 1.0):
        raise ValueError(f"p-norm needs p >= 1, got {p}")
    a = np.abs(np.asarray(v, dtype=np.float64)).ravel()
    if a.size == 0:
        return 0.0
    if math.isinf(p):
        return float(a.max())
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        return float(np.linalg.norm(a))
    peak = a.max()
    if peak == 0.0:
        return 0.0
    return float(peak * np.sum((a / peak) ** p) ** (1.0 / p))


@dataclass
class PowerReport:
    vector: np.ndarray
    singular_value: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    failure: str | None = None

    def relative_errors(self) -> list[float]:
        return relative_errors(self.history)

    def summary(self) -> dict:
        return {
            "singular_value": self.singular_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "failure": self.failure,
            "history": list(self.history),
            "relative_errors": self.relative_errors(),
        }


def relative_errors(history: list[float]) -> list[float]:
    if not history:
        return []
    final = history[-1]
    if final == 0.0:
        return [0.0 if s == 0.0 else math.inf for s in history]
    return [abs(s - final) / final for s in history]


def _initial_vector(n: int, settings: PowerSettings, rng: np.random.Generator, initial) -> np.ndarray:
    if initial is not None:
        x = np.array(initial, dtype=np.float64).ravel()
        if x.shape[0] != n:
            raise ValueError(f"initial vector has length {x.shape[0]}, operator expects {n}")
        return x
    if settings.init == InitMode.user:
        raise ValueError("init mode 'user-supplied' needs an initial vector")
    if settings.init == InitMode.uniform_signs:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return rng.uniform(-1.0, 1.0, n)


def _power_step(linear_map: LinearMap, pair: HolderPair, ax: np.ndarray) -> np.ndarray:
    # psi_q and psi_p' are positively homogeneous and the caller renormalizes,
    # so dividing by the peak only guards against overflow for large q
    peak = np.max(np.abs(ax))
    if peak == 0.0 or not np.isfinite(peak):
        return np.zeros(linear_map.in_dim)
    z = linear_map.apply_adjoint(psi(pair.q, ax / peak))
    peak = np.max(np.abs(z))
    if peak == 0.0 or not np.isfinite(peak):
        return np.zeros(linear_map.in_dim)
    return psi(pair.p_conj, z / peak)


def power_method(linear_map: LinearMap, pair: HolderPair, settings: PowerSettings | None = None, initial=None) -> PowerReport:
    settings = settings or PowerSettings()
    rng = np.random.default_rng(settings.seed)
    n = linear_map.in_dim

    x = _initial_vector(n, settings, rng, initial)
    reinitialized = False
    if p_norm(x, pair.p) == 0.0:
        reinitialized = True
        x = rng.uniform(-1.0, 1.0, n)
    x = x / p_norm(x, pair.p)
    ax = linear_map.apply(x)
    s = p_norm(ax, pair.q)
    history = [s]

    iterations = 0
    converged = False
    while iterations < settings.max_iters:
        sx = _power_step(linear_map, pair, ax)
        norm_sx = p_norm(sx, pair.p)
        if norm_sx == 0.0:
            if reinitialized:
                logger.warning("power method degenerate: S x vanished twice (zero operator?), giving up")
                history.append(0.0)
                return PowerReport(
                    vector=x,
                    singular_value=0.0,
                    history=history,
                    iterations=iterations,
                    converged=False,
                    failure="degenerate iterate: S x = 0",
                )
            logger.debug("S x vanished at iteration %d, reinitializing from the seed stream", iterations)
            reinitialized = True
            sx = rng.uniform(-1.0, 1.0, n)
            norm_sx = p_norm(sx, pair.p)

        x = sx / norm_sx
        ax = linear_map.apply(x)
        s_new = p_norm(ax, pair.q)
        history.append(s_new)
        iterations += 1
        change = abs(s_new - s) / max(s_new, _TINY)
        s = s_new
        logger.debug("power iteration %d: s=%.10g rel_change=%.3e", iterations, s, change)
        if change < settings.rel_tol:
            converged = True
            break

    if s == 0.0:
        return PowerReport(
            vector=x,
            singular_value=0.0,
            history=history,
            iterations=iterations,
            converged=False,
            failure="zero singular value: operator annihilates every iterate",
        )
    return PowerReport(vector=x, singular_value=s, history=history, iterations=iterations, converged=converged)


def exact_inf_inf(dense: DenseMap) -> tuple[float, np.ndarray]:
    """Exact (inf, inf) norm: the row with the largest absolute sum, attained by its sign pattern."""
    a = dense.entries
    row = int(np.argmax(np.abs(a).sum(axis=1)))
    vector = np.where(a[row] < 0.0, -1.0, 1.0)
    value = float(np.max(np.abs(a @ vector)))
    return value, vector


def exact_one_one(dense: DenseMap) -> tuple[float, np.ndarray]:
    a = dense.entries
    column = int(np.argmax(np.abs(a).sum(axis=0)))
    vector = np.zeros(dense.cols)
    vector[column] = 1.0
    value = p_norm(a @ vector, 1.0)
    return value, vector
