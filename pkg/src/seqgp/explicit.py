"""Dense reference posteriors for desk-scale grids.

These routines materialize the full ``m x m`` covariance and serve as the
oracles that the implicit engine is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularCovarianceError
from .grid import Grid
from .kernels import PriorModel, prior_cov_dense
from .linalg import numerical_rank, spd_factor
from .operators import Operator

NOISELESS_MAX_COND = 1e12
EIG_FLOOR = 1e-12


@dataclass
class DataStage:
    """One batch of linear observations ``y = G z + eps`` with ``eps ~ N(0, tau2 I)``."""

    G: Operator
    y: np.ndarray
    tau2: float = 0.0

    def __post_init__(self):
        if not isinstance(self.G, Operator):
            self.G = Operator(self.G)
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if self.tau2 < 0:
            raise ValueError("noise variance must be non-negative")
        if self.y.shape != (self.G.p,):
            raise ValueError(f"data has shape {self.y.shape}, operator has {self.G.p} rows")

    @property
    def p(self) -> int:
        return self.G.p

    @staticmethod
    def stack(stages) -> "DataStage":
        taus = {s.tau2 for s in stages}
        if len(taus) != 1:
            raise ValueError("stacking stages with different noise levels is not supported")
        return DataStage(Operator.stack([s.G for s in stages]), np.concatenate([s.y for s in stages]), taus.pop())


@dataclass
class ExplicitPosterior:
    mean: np.ndarray
    cov: np.ndarray
    stage: int = 0

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def explicit_prior(model: PriorModel, grid: Grid) -> ExplicitPosterior:
    return ExplicitPosterior(np.full(grid.m, model.m0), prior_cov_dense(model, grid), 0)


def _factor_data_cov(R: np.ndarray, tau2: float):
    if tau2 == 0.0:
        w = np.linalg.eigvalsh(0.5 * (R + R.T))
        if w.size and (w[0] <= 0 or w[-1] / w[0] >= NOISELESS_MAX_COND):
            raise SingularCovarianceError(
                "noiseless data covariance is numerically singular",
                rank=numerical_rank(R), size=R.shape[0],
            )
    return spd_factor(R)


def _update(mean, cov, stage: DataStage):
    G = stage.G.dense()
    KGt = cov @ G.T
    R = G @ KGt + stage.tau2 * np.eye(stage.p)
    fac = _factor_data_cov(R, stage.tau2)
    weights = fac.solve(KGt.T)  # R^{-1} G K, p x m
    new_mean = mean + weights.T @ (stage.y - G @ mean)
    new_cov = cov - KGt @ weights
    return new_mean, 0.5 * (new_cov + new_cov.T)


def condition_batch(model: PriorModel, grid: Grid, stage: DataStage) -> ExplicitPosterior:
    prior = explicit_prior(model, grid)
    mean, cov = _update(prior.mean, prior.cov, stage)
    return ExplicitPosterior(mean, cov, 1)


def update_stage_explicit(post: ExplicitPosterior, stage: DataStage) -> ExplicitPosterior:
    mean, cov = _update(post.mean, post.cov, stage)
    return ExplicitPosterior(mean, cov, post.stage + 1)


def condition_sequential_explicit(model: PriorModel, grid: Grid, stages) -> ExplicitPosterior:
    post = explicit_prior(model, grid)
    for st in stages:
        post = update_stage_explicit(post, st)
    return post


def representing_sequence(c_nu: np.ndarray) -> np.ndarray:
    """Columns ``y_i* = C^{-1/2} e_i`` of the symmetric inverse square root.

    They satisfy ``<C y_i*, y_j*> = delta_ij``.  Eigenvalues below
    ``1e-12 * trace / p`` are treated as a rank deficiency.
    """
    c = 0.5 * (c_nu + c_nu.T)
    p = c.shape[0]
    w, V = np.linalg.eigh(c)
    floor = EIG_FLOOR * np.trace(c) / p
    if np.any(w <= floor):
        raise SingularCovarianceError(
            "operator covariance is rank deficient", rank=int(np.sum(w > floor)), size=p
        )
    return (V / np.sqrt(w)) @ V.T


def condition_via_representing_sequence(model: PriorModel, grid: Grid, G, y) -> ExplicitPosterior:
    """Noiseless conditioning written as sums over a representing sequence."""
    G = G.dense() if isinstance(G, Operator) else np.atleast_2d(np.asarray(G, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    K = prior_cov_dense(model, grid)
    m_x = np.full(grid.m, model.m0)
    KGt = K @ G.T
    Y = representing_sequence(G @ KGt)
    innov = y - G @ m_x
    mean = m_x.copy()
    cov = K.copy()
    for i in range(Y.shape[1]):
        v = KGt @ Y[:, i]
        mean += (innov @ Y[:, i]) * v
        cov -= np.outer(v, v)
    return ExplicitPosterior(mean, 0.5 * (cov + cov.T), 1)

