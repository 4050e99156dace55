"""Stationary covariance kernels and the chunked prior covariance product."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.distance import cdist

from .errors import MemoryBudgetError
from .grid import ChunkPlan, Grid, plan_chunks

DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes per worker
_F64 = 8


class Family(str, Enum):
    EXPONENTIAL = "exponential"
    MATERN32 = "matern32"
    MATERN52 = "matern52"

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace(" ", "").replace("_", "").replace("/", "").replace("-", "")
        aliases = {"exp": "exponential", "matern3": "matern32", "matern5": "matern52"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown kernel family {name!r}") from None


@dataclass(frozen=True)
class Kernel:
    family: Family
    sigma0: float
    lambda0: float

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")

    def correlation(self, d) -> np.ndarray:
        t = np.asarray(d, dtype=float) / self.lambda0
        if self.family is Family.EXPONENTIAL:
            return np.exp(-t)
        if self.family is Family.MATERN32:
            u = np.sqrt(3.0) * t
            return (1.0 + u) * np.exp(-u)
        u = np.sqrt(5.0) * t
        return (1.0 + u + u * u / 3.0) * np.exp(-u)

    def __call__(self, d) -> np.ndarray:
        return self.sigma0**2 * self.correlation(d)

    def with_params(self, sigma0=None, lambda0=None) -> "Kernel":
        return Kernel(self.family, self.sigma0 if sigma0 is None else sigma0,
                      self.lambda0 if lambda0 is None else lambda0)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "sigma0": self.sigma0, "lambda0": self.lambda0}


@dataclass(frozen=True)
class PriorModel:
    """Constant-mean Gaussian process prior."""

    kernel: Kernel
    m0: float = 0.0

    @property
    def variance(self) -> float:
        return self.kernel.sigma0**2

    def to_dict(self) -> dict:
        return {**self.kernel.to_dict(), "m0": self.m0}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorModel":
        return cls(Kernel(d["family"], float(d["sigma0"]), float(d["lambda0"])), float(d.get("m0", 0.0)))


def kernel_eval(kernel: Kernel, d):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    out = kernel(d)
    return float(out) if out.ndim == 0 else out


def practical_range(kernel: Kernel, level: float = 0.05) -> float:
    """Distance at which the correlation falls to ``level`` (5% by default)."""
    hi = kernel.lambda0
    while kernel.correlation(hi) > level:
        hi *= 2.0
    return brentq(lambda d: kernel.correlation(d) - level, 0.0, hi, rtol=1e-12, xtol=1e-12 * hi)


def cross_cov_block(model: PriorModel | Kernel, a, b) -> np.ndarray:
    kernel = model.kernel if isinstance(model, PriorModel) else model
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError("point sets have different dimensions")
    return kernel(cdist(a, b))


def covmul_bytes(m: int, q: int, chunk_size: int) -> int:
    """Peak working memory of :func:`prior_covmul` for an ``m x q`` input."""
    slab = min(chunk_size, m) * min(m, _column_block(m, chunk_size)) * _F64
    return 2 * m * q * _F64 + slab


def _column_block(m: int, chunk_size: int) -> int:
    # Stream the m-wide kernel slab in column blocks once a full
    # chunk_size x m slab would exceed 256 MB.
    if chunk_size * m * _F64 <= 256 << 20:
        return m
    return max(chunk_size, 1)


def check_budget(m: int, q: int, chunk_size: int, budget: int | None) -> None:
    if budget is None:
        return
    need = covmul_bytes(m, q, chunk_size)
    if need > budget:
        raise MemoryBudgetError(
            f"covariance product with an input of shape {m}x{q} and chunk size {chunk_size} "
            f"needs {need} bytes, budget is {budget}"
        )


def prior_covmul(
    model: PriorModel,
    grid: Grid,
    a: np.ndarray,
    plan: ChunkPlan | None = None,
    memory_budget: int | None = DEFAULT_MEMORY_BUDGET,
    threads: int = 1,
    counter=None,
) -> np.ndarray:
    """Compute ``K0 @ a`` without ever forming the ``m x m`` prior covariance.

    Rows are processed one chunk at a time: the chunk's kernel slab is
    built on demand, multiplied, and discarded.  Chunks are independent and
    may run on a thread pool; each one writes only its own output rows.
    """
    a = np.asarray(a, dtype=float)
    vec = a.ndim == 1
    if vec:
        a = a[:, None]
    m = grid.m
    if a.shape[0] != m:
        raise ValueError(f"expected {m} rows, got {a.shape[0]}")
    plan = plan or plan_chunks(grid)
    check_budget(m, a.shape[1], plan.chunk_size, memory_budget)
    pts = grid.points
    kernel = model.kernel
    col_block = _column_block(m, plan.chunk_size)
    out = np.empty((m, a.shape[1]))

    def work(rng):
        lo, hi = rng
        if col_block >= m:
            block = kernel(cdist(pts[lo:hi], pts))
            out[lo:hi] = block @ a
        else:
            acc = np.zeros((hi - lo, a.shape[1]))
            for c0 in range(0, m, col_block):
                c1 = min(c0 + col_block, m)
                acc += kernel(cdist(pts[lo:hi], pts[c0:c1])) @ a[c0:c1]
            out[lo:hi] = acc
        if counter is not None:
            counter.add((hi - lo) * m * a.shape[1])

    if threads > 1 and plan.n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, plan.ranges))
    else:
        for rng in plan.ranges:
            work(rng)
    return out[:, 0] if vec else out


def prior_variance(model: PriorModel, grid: Grid) -> np.ndarray:
    return np.full(grid.m, model.variance)


def prior_cov_dense(model: PriorModel, grid: Grid) -> np.ndarray:
    """Full prior covariance; only for desk-scale grids and test oracles."""
    return cross_cov_block(model, grid.points, grid.points)
