"""Shared toy-problem generators and independent dense oracles for the tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from seqgp.explicit import DataStage
from seqgp.grid import Grid, build_grid
from seqgp.kernels import Family, Kernel, PriorModel, cross_cov_block
from seqgp.operators import Operator, gravity_operator, pointwise_operator, weighted_operator

FAMILIES = list(Family)

# Noiseless toys are only kept when the stacked data covariance is this well
# conditioned; beyond it a 1e-8 absolute agreement is not a meaningful target
# in double precision.
NOISELESS_COND_MAX = 1e6


@dataclass
class Toy:
    grid: Grid
    model: PriorModel
    stages: list
    kinds: list


def random_model(rng, extent: float) -> PriorModel:
    family = FAMILIES[rng.integers(len(FAMILIES))]
    sigma0 = float(rng.uniform(0.5, 2.0))
    lambda0 = float(rng.uniform(0.2, 0.8) * extent)
    return PriorModel(Kernel(family, sigma0, lambda0), float(rng.normal()))


def random_grid3(rng, m_max: int = 60) -> Grid:
    while True:
        shape = [int(rng.integers(2, 5)) for _ in range(3)]
        if np.prod(shape) <= m_max:
            break
    spacing = [float(rng.uniform(0.5, 1.5)) for _ in range(3)]
    return build_grid(3, shape, spacing)


def random_operator(rng, grid: Grid, p: int, kind: str) -> Operator:
    if kind == "pointwise":
        return pointwise_operator(grid, rng.choice(grid.m, p, replace=False))
    if kind == "weighted":
        rows = []
        for _ in range(p):
            idx = rng.choice(grid.m, int(rng.integers(1, min(grid.m, 8) + 1)), replace=False)
            rows.append([(int(j), float(rng.uniform(0.1, 1.0))) for j in idx])
        return weighted_operator(grid, rows)
    # gravity: stations above the grid top, rows scaled to unit max-abs
    top = grid.origin[2] + grid.spacing[2] * (grid.shape[2] - 0.5)
    lo = np.asarray(grid.origin[:2]) - 1.0
    hi = lo + np.asarray(grid.spacing[:2]) * np.asarray(grid.shape[:2]) + 2.0
    st = np.column_stack([rng.uniform(lo, hi, size=(p, 2)), top + rng.uniform(0.5, 3.0, size=p)])
    op = gravity_operator(grid, st)
    mat = op.dense()
    return Operator(mat / np.abs(mat).max(axis=1, keepdims=True), kind="gravity")


def stacked_data_cov(model, grid, stages) -> np.ndarray:
    G = np.vstack([st.G.dense() for st in stages])
    K = cross_cov_block(model, grid.points, grid.points)
    tau2 = np.concatenate([np.full(st.p, st.tau2) for st in stages])
    return G @ K @ G.T + np.diag(tau2)


def random_toy(rng, n_stages=None, tau2=None, kinds=("pointwise", "weighted", "gravity"),
               m_max: int = 60, cond_max: float = NOISELESS_COND_MAX) -> Toy:
    """Random instance; noiseless instances are redrawn until well conditioned."""
    while True:
        grid = random_grid3(rng, m_max)
        extent = float(np.max(np.asarray(grid.spacing) * np.asarray(grid.shape)))
        model = random_model(rng, extent)
        n = int(rng.integers(1, 5)) if n_stages is None else n_stages
        t2 = (0.0 if rng.random() < 0.5 else 0.01 * model.variance) if tau2 is None else tau2
        stages, used = [], []
        budget = grid.m // 2
        for _ in range(n):
            kind = kinds[rng.integers(len(kinds))]
            p = int(rng.integers(1, max(2, min(4, budget // n) + 1)))
            G = random_operator(rng, grid, p, kind)
            stages.append(DataStage(G, rng.normal(model.m0, model.kernel.sigma0, size=p), t2))
            used.append(kind)
        if t2 == 0:
            if np.linalg.cond(stacked_data_cov(model, grid, stages)) > cond_max:
                continue
        return Toy(grid, model, stages, used)


def schur_oracle(model, grid, stages):
    """Condition the joint Gaussian of (field, data) via a Schur complement.

    Deliberately naive: forms the joint covariance and uses a general solve.
    """
    K = cross_cov_block(model, grid.points, grid.points)
    G = np.vstack([st.G.dense() for st in stages])
    y = np.concatenate([st.y for st in stages])
    tau2 = np.concatenate([np.full(st.p, st.tau2) for st in stages])
    m = grid.m
    joint = np.block([[K, K @ G.T], [G @ K, G @ K @ G.T + np.diag(tau2)]])
    mu = np.concatenate([np.full(m, model.m0), G @ np.full(m, model.m0)])
    czy, cyy = joint[:m, m:], joint[m:, m:]
    mean = mu[:m] + czy @ np.linalg.solve(cyy, y - mu[m:])
    cov = joint[:m, :m] - czy @ np.linalg.solve(cyy, czy.T)
    return mean, cov


def report(label: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
