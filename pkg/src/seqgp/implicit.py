"""Updatable, matrix-free posterior covariance.

After ``n`` assimilation stages the posterior covariance is never stored;
it is represented through

    K_n A = K_0 A - sum_i Lambda_i S_i^{-1} Lambda_i^T A,

with ``Lambda_i = K_{i-1} G_i^T`` (``m x p_i``) and
``S_i = G_i Lambda_i + tau_i^2 I`` (``p_i x p_i``, kept as a Cholesky
factor).  Products with the prior are computed in row chunks, so the only
``O(m)``-wide objects held are the thin pushforward matrices.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import MemoryBudgetError
from .explicit import DataStage
from .grid import ChunkPlan, Grid, plan_chunks
from .kernels import DEFAULT_MEMORY_BUDGET, PriorModel, prior_covmul
from .linalg import SPDFactor, spd_factor
from .operators import Operator

log = logging.getLogger(__name__)

_F64 = 8


@dataclass
class StageRecord:
    pushforward: np.ndarray  # Lambda_i, m x p_i (may be a read-only memmap)
    factor: SPDFactor  # Cholesky factor of S_i
    G: Operator
    tau2: float

    @property
    def p(self) -> int:
        return self.pushforward.shape[1]

    def apply_inv_inner(self, b: np.ndarray) -> np.ndarray:
        return self.factor.solve(b)


class ImplicitPosterior:
    """Posterior mean and implicit covariance after a sequence of data stages.

    Parameters
    ----------
    model : PriorModel
        Constant-mean prior.
    grid : Grid
        Discretization of the domain; all vectors are indexed by it.
    plan : ChunkPlan, optional
        Row chunking for prior products (default 2000 points per chunk).
    memory_budget : int, optional
        Bytes allowed for a single covariance product's working set.
    threads : int
        Worker threads for the chunked prior product.
    spill_dir : path, optional
        If given, pushforward matrices are written there and memory-mapped
        whenever the resident stage storage would exceed ``memory_budget``.
    """

    def __init__(self, model: PriorModel, grid: Grid, plan: ChunkPlan | None = None,
                 memory_budget: int | None = DEFAULT_MEMORY_BUDGET, threads: int = 1,
                 spill_dir=None):
        self.model = model
        self.grid = grid
        self.plan = plan or plan_chunks(grid)
        self.memory_budget = memory_budget
        self.threads = threads
        self.spill_dir = Path(spill_dir) if spill_dir is not None else None
        self.stages: list[StageRecord] = []
        self.mean = np.full(grid.m, float(model.m0))

    @property
    def n(self) -> int:
        return len(self.stages)

    @property
    def m(self) -> int:
        return self.grid.m

    def _check_q(self, q: int) -> None:
        if self.memory_budget is not None and 2 * self.m * q * _F64 > self.memory_budget:
            raise MemoryBudgetError(
                f"a covariance product with an {self.m}x{q} input needs {2 * self.m * q * _F64} bytes, "
                f"budget is {self.memory_budget}"
            )

    def covmul(self, a: np.ndarray, counter=None) -> np.ndarray:
        """Return ``K_n @ a`` for a thin ``m x q`` matrix (or length-``m`` vector)."""
        a = np.asarray(a, dtype=float)
        vec = a.ndim == 1
        if vec:
            a = a[:, None]
        self._check_q(a.shape[1])
        out = prior_covmul(self.model, self.grid, a, self.plan, self.memory_budget,
                           self.threads, counter=counter)
        for st in self.stages:
            lam = st.pushforward
            if counter is not None:
                t = counter.matmul(lam.T, a)
                counter.add(st.p * st.p * a.shape[1])
                out -= counter.matmul(lam, st.apply_inv_inner(t))
            else:
                out -= lam @ st.apply_inv_inner(lam.T @ a)
        return out[:, 0] if vec else out

    def _jitter_scale(self, G: Operator, tau2: float) -> float:
        # Upper bound on the prior variance of a data row.
        return float(self.model.variance * np.mean(G.row_abs_sums() ** 2) + tau2)

    def assimilate(self, stage: DataStage) -> "ImplicitPosterior":
        """Condition on one more data stage, updating the mean and the stage records in place."""
        G = stage.G
        if G.m != self.m:
            raise ValueError(f"operator has {G.m} columns, grid has {self.m} points")
        lam = self.covmul(G.dense_T())
        S = np.asarray(G @ lam) + stage.tau2 * np.eye(stage.p)
        factor = spd_factor(S, scale=self._jitter_scale(G, stage.tau2))
        if factor.jitter:
            log.warning("stage %d: inner matrix needed jitter %.3g", self.n + 1, factor.jitter)
        innovation = stage.y - np.asarray(G @ self.mean)
        self.mean = self.mean + lam @ factor.solve(innovation)
        lam = self._maybe_spill(lam, self.n + 1)
        self.stages.append(StageRecord(lam, factor, G, float(stage.tau2)))
        return self

    def _resident_bytes(self) -> int:
        return sum(st.pushforward.nbytes for st in self.stages if not isinstance(st.pushforward, np.memmap))

    def _maybe_spill(self, lam: np.ndarray, index: int) -> np.ndarray:
        if self.spill_dir is None or self.memory_budget is None:
            return lam
        if self._resident_bytes() + lam.nbytes <= self.memory_budget:
            return lam
        path = self.spill_dir / f"stage_{index}" / "lambda.bin"
        path.parent.mkdir(parents=True, exist_ok=True)
        io.write_matrix(path, lam)
        return io.read_matrix(path, mmap=True)

    def variance_diag(self) -> np.ndarray:
        """Pointwise posterior variance without forming any ``m x m`` matrix."""
        var = np.full(self.m, self.model.variance)
        for st in self.stages:
            for sl in self.plan.slices():
                w = st.factor.whiten(np.asarray(st.pushforward[sl]).T)
                var[sl] -= np.einsum("ij,ij->j", w, w)
        return var

    def storage_bytes(self, bytes_per_scalar: int = _F64) -> int:
        return implicit_storage_bytes(self.m, [st.p for st in self.stages], bytes_per_scalar)

    def flop_estimate(self, q: int, mode: str = "multiply") -> int:
        ps = [st.p for st in self.stages]
        if mode == "multiply":
            return multiply_flops(self.m, ps, q)
        if mode == "build":
            return build_flops(self.m, ps)
        raise ValueError(f"unknown mode {mode!r}")

    # --- persistence -----------------------------------------------------

    def save(self, run_dir) -> None:
        """Write ``stage_<i>/{lambda.bin,s_factor.bin,meta.json}`` plus ``mean.bin``.

        ``meta.json`` is written last, so a stage directory without it is
        incomplete and gets rewritten on the next save.
        """
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        for i, st in enumerate(self.stages, start=1):
            d = run_dir / f"stage_{i}"
            if (d / "meta.json").exists():
                continue  # stage records are immutable once complete
            d.mkdir(exist_ok=True)
            lam_path = d / "lambda.bin"
            if not (isinstance(st.pushforward, np.memmap) and Path(st.pushforward.filename) == lam_path.resolve()):
                io.write_matrix(lam_path, np.asarray(st.pushforward))
            io.write_matrix(d / "s_factor.bin", st.factor.lower)
            io.write_matrix(d / "operator.bin", st.G.dense())
            meta = {"index": i, "p": st.p, "tau2": st.tau2, "jitter": st.factor.jitter,
                    "operator_kind": st.G.kind, "m": self.m}
            io.atomic_write_text(d / "meta.json", json.dumps(meta, indent=2))
        io.write_matrix(run_dir / "mean.bin", self.mean[:, None])

    @classmethod
    def load(cls, run_dir, model: PriorModel, grid: Grid, plan: ChunkPlan | None = None,
             mmap: bool = True, **kwargs) -> "ImplicitPosterior":
        run_dir = Path(run_dir)
        post = cls(model, grid, plan, **kwargs)
        i = 1
        while (run_dir / f"stage_{i}" / "meta.json").exists():
            d = run_dir / f"stage_{i}"
            meta = json.loads((d / "meta.json").read_text())
            lam = io.read_matrix(d / "lambda.bin", mmap=mmap)
            lower = io.read_matrix(d / "s_factor.bin")
            G = Operator(io.read_matrix(d / "operator.bin"), kind=meta.get("operator_kind", "generic"))
            post.stages.append(StageRecord(lam, SPDFactor(lower, meta["jitter"]), G, meta["tau2"]))
            i += 1
        mean_path = run_dir / "mean.bin"
        if mean_path.exists():
            post.mean = io.read_matrix(mean_path)[:, 0].copy()
        return post


def implicit_storage_bytes(m: int, stage_sizes, bytes_per_scalar: int = _F64) -> int:
    """Pushforwards, inner factors and the mean vector."""
    return sum((m * p + p * p) * bytes_per_scalar for p in stage_sizes) + m * bytes_per_scalar


def explicit_storage_bytes(m: int, bytes_per_scalar: int = _F64) -> int:
    return m * m * bytes_per_scalar


def multiply_flops(m: int, stage_sizes, q: int) -> int:
    return m * m * q + sum(m * p * q + p * p * q for p in stage_sizes)


def build_flops(m: int, stage_sizes) -> int:
    """Operation count for assimilating the stages one after another.

    Stage ``i`` costs one product with the stage ``i-1`` covariance against
    ``G_i^T`` (``q = p_i``), the inner matrix ``G_i Lambda_i`` and its
    factorization.
    """
    total = 0
    for i, p in enumerate(stage_sizes):
        total += multiply_flops(m, stage_sizes[:i], p) + m * p * p + p**3
    return total


def storage_report(m: int, stage_sizes, bytes_per_scalar: int = 4) -> dict:
    return {
        "m": m,
        "bytes_per_scalar": bytes_per_scalar,
        "explicit_bytes": explicit_storage_bytes(m, bytes_per_scalar),
        "implicit_bytes": implicit_storage_bytes(m, stage_sizes, bytes_per_scalar),
        "n_stages": len(stage_sizes),
    }

