"""Weighted integrated variance reduction and myopic acquisition campaigns."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import NumericalError, SeqGPError
from .excursion import coverage, detection_metrics, vorobev_expectation, CoverageField
from .explicit import DataStage
from .grid import Grid, build_grid
from .implicit import ImplicitPosterior
from .kernels import PriorModel
from .operators import GravityConfig, Operator, gravity_operator
from .rng import stream
from .sampling import VolumeDistribution, residual_update, sample_prior, volume_distribution

log = logging.getLogger(__name__)


TIE_RTOL = 1e-12


class CampaignComplete(SeqGPError):
    """Every surface site has been visited."""


def wivr(post: ImplicitPosterior, candidates: Operator, tau2: float, weight) -> np.ndarray:
    """Weighted integrated variance reduction of each candidate row.

    All candidates share one ``m x q`` covariance product.  The value does
    not depend on any data.
    """
    weight = np.asarray(weight, dtype=float)
    if np.any(weight < 0):
        raise ValueError("weights must be non-negative")
    u = post.covmul(candidates.dense_T())
    s2 = np.einsum("ij,ji->i", candidates.dense(), u) + tau2
    if np.any(s2 <= 0):
        raise NumericalError(f"non-positive predictive variance {s2.min():.3g} for a candidate")
    return (weight @ (u * u)) / s2 * post.grid.cell_volume


def dedupe_sites(sites) -> np.ndarray:
    """Drop colocated sites, keeping the first occurrence and the input order."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    _, first = np.unique(sites, axis=0, return_index=True)
    return sites[np.sort(first)]


def candidate_set(sites, last_site, radius: float, visited=()) -> np.ndarray:
    """Indices of unvisited sites within ``radius`` of ``last_site``.

    If the ball holds no unvisited site, the nearest unvisited site is
    returned instead.  Raises ``CampaignComplete`` once all are visited.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if sites.shape[0] == 0:
        raise ValueError("no surface sites")
    if not radius > 0:
        raise ValueError("candidate radius must be positive")
    free = np.ones(sites.shape[0], dtype=bool)
    free[list(visited)] = False
    if not free.any():
        raise CampaignComplete("all surface sites visited")
    dist = np.linalg.norm(sites - np.asarray(last_site, dtype=float), axis=1)
    inside = np.flatnonzero(free & (dist <= radius))
    if inside.size:
        return inside
    idx = np.flatnonzero(free)
    return idx[[int(np.argmin(dist[idx]))]]


@dataclass
class StepRecord:
    step: int
    site: int  # -1 for the initial state
    criterion: float
    tp: float
    fp: float
    mean_variance: float
    expected_volume: float
    alpha: float


@dataclass
class CampaignState:
    """Mutable state of a sequential acquisition campaign.

    ``site_ops`` holds one operator row per surface site; ``truth`` is the
    ground-truth field used to simulate observations.
    """

    post: ImplicitPosterior
    sites: np.ndarray
    site_ops: Operator
    truth: np.ndarray
    threshold: float
    tau2: float
    start: np.ndarray
    radius: float = 150.0
    weight_mode: str = "coverage"
    strategy: str = "wivr"
    seed: int = 0
    visited: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("candidate radius must be positive")
        if self.weight_mode not in ("coverage", "uniform"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if self.strategy not in ("wivr", "random"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        self.truth_mask = np.asarray(self.truth) >= self.threshold

    @property
    def step(self) -> int:
        return len(self.visited)

    @property
    def last_site(self) -> np.ndarray:
        return self.sites[self.visited[-1]] if self.visited else np.asarray(self.start, dtype=float)

    def coverage_field(self) -> CoverageField:
        return coverage(self.post.mean, self.post.variance_diag(), self.threshold,
                        self.post.grid.cell_volume, self.post.model.variance)

    def weight(self) -> np.ndarray:
        if self.weight_mode == "uniform":
            return np.ones(self.post.m)
        return self.coverage_field().p

    def record(self, site: int, criterion: float) -> StepRecord:
        var = self.post.variance_diag()
        cov = coverage(self.post.mean, var, self.threshold, self.post.grid.cell_volume,
                       self.post.model.variance)
        alpha, est = vorobev_expectation(cov)
        tp, fp = detection_metrics(est, self.truth_mask)
        ev = float(cov.cell_volume * np.sum(cov.p))
        rec = StepRecord(self.step, site, criterion, tp, fp, float(np.mean(var)), ev, alpha)
        self.history.append(rec)
        return rec


def observe(state: CampaignState, site: int) -> DataStage:
    """Simulated noisy observation of the ground truth at one site."""
    G = state.site_ops.rows([site])
    noise = stream(state.seed, "observation", state.step).standard_normal(1)
    y = np.asarray(G @ state.truth) + np.sqrt(state.tau2) * noise
    return DataStage(G, y, state.tau2)


def choose_site(state: CampaignState) -> tuple[int, float]:
    cand = candidate_set(state.sites, state.last_site, state.radius, state.visited)
    if state.strategy == "random":
        pick = int(stream(state.seed, "random-walk", state.step).integers(cand.size))
        return int(cand[pick]), float("nan")
    values = wivr(state.post, state.site_ops.rows(cand), state.tau2, state.weight())
    # symmetric layouts give ties up to rounding; candidates ascend, so the smallest index wins
    best = int(np.flatnonzero(values >= values.max() * (1 - TIE_RTOL))[0])
    return int(cand[best]), float(values[best])


def myopic_step(state: CampaignState) -> StepRecord:
    """Pick the next site, observe it, assimilate, and record the metrics."""
    site, value = choose_site(state)
    stage = observe(state, site)
    state.post.assimilate(stage)
    state.stages.append(stage)
    state.visited.append(site)
    return state.record(site, value)


def replay_step(state: CampaignState, site: int) -> StepRecord:
    """Observe a prescribed site (static design replay)."""
    if site in state.visited:
        raise ValueError(f"site {site} already visited")
    stage = observe(state, site)
    state.post.assimilate(stage)
    state.stages.append(stage)
    state.visited.append(site)
    return state.record(site, float("nan"))


@dataclass
class CampaignResult:
    history: list
    visited: list
    volumes: VolumeDistribution | None = None


def run_campaign(state: CampaignState, n_steps: int, n_volume_samples: int = 0,
                 design=None, on_step=None) -> CampaignResult:
    """Run ``n_steps`` acquisitions (or replay ``design``) from the current state.

    The initial state is recorded as step 0 when the history is empty.
    ``on_step(state)`` is called after every step, e.g. to checkpoint.
    """
    if not state.history:
        state.record(-1, float("nan"))
    if design is not None:
        for site in list(design)[state.step:]:
            replay_step(state, int(site))
            if on_step:
                on_step(state)
    else:
        while state.step < n_steps:
            try:
                myopic_step(state)
            except CampaignComplete:
                log.info("campaign complete after %d steps", state.step)
                break
            if on_step:
                on_step(state)
    vols = None
    if n_volume_samples > 0:
        prior = sample_prior(state.post.model, state.post.grid, n_volume_samples, state.seed)
        ens = residual_update(prior, state.stages, state.post)
        vols = volume_distribution(ens, state.threshold, state.post.grid)
    return CampaignResult(state.history, list(state.visited), vols)


def limiting_distribution(model: PriorModel, grid: Grid, site_ops: Operator, tau2: float,
                          threshold: float, truth=None, seed: int = 0, batch_size: int = 10,
                          **kw) -> tuple[np.ndarray, CoverageField, ImplicitPosterior]:
    """Posterior after observing every allowed site, assimilated in batches.

    Data are simulated from ``truth`` with noise drawn per site (so results
    do not depend on the batching); without a truth the data equal the prior
    prediction and the mean stays at ``m0``.
    """
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    post = ImplicitPosterior(model, grid, **kw)
    n = site_ops.p
    for lo in range(0, n, batch_size):
        idx = list(range(lo, min(n, lo + batch_size)))
        G = site_ops.rows(idx)
        if truth is None:
            y = np.asarray(G @ np.full(grid.m, model.m0))
        else:
            noise = np.array([stream(seed, "limit-noise", j).standard_normal() for j in idx])
            y = np.asarray(G @ truth) + np.sqrt(tau2) * noise
        post.assimilate(DataStage(G, y, tau2))
    var = post.variance_diag()
    return var, coverage(post.mean, var, threshold, grid.cell_volume, model.variance), post


@dataclass
class Volcano:
    grid: Grid
    sites: np.ndarray
    start: np.ndarray


def synthetic_volcano(shape=(10, 10, 5), spacing=(100.0, 100.0, 50.0), peak: float = 200.0,
                      standoff: float = 1.0, site_stride: int = 1) -> Volcano:
    """Box-shaped subsurface grid under a cone-shaped surface carrying the stations.

    The grid top sits at ``z = 0``; the surface rises linearly to ``peak``
    above the centre and never comes closer than ``standoff`` to the grid top,
    so every station is outside every cell.
    """
    nz = shape[2]
    origin = (spacing[0] / 2, spacing[1] / 2, -spacing[2] * (nz - 0.5))
    grid = build_grid(3, shape, spacing, origin)
    xs = grid.axis_coords(0)[::site_stride]
    ys = grid.axis_coords(1)[::site_stride]
    cx, cy = xs.mean(), ys.mean()
    radius = np.hypot(xs.max() - cx, ys.max() - cy)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    Z = np.maximum(standoff, peak * (1.0 - np.hypot(X - cx, Y - cy) / radius) + standoff)
    sites = dedupe_sites(np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]))
    start = sites[int(np.argmin(np.hypot(sites[:, 0] - cx, sites[:, 1] - cy)))]
    return Volcano(grid, sites, start)


def prior_quantile_threshold(model: PriorModel, q: float) -> float:
    """Pointwise prior quantile of a constant-mean stationary field."""
    return float(model.m0 + model.kernel.sigma0 * ndtri(q))


def new_campaign(model: PriorModel, grid: Grid, sites, truth, threshold: float, tau2: float,
                 start=None, cfg: GravityConfig = GravityConfig(), site_ops: Operator | None = None,
                 **kw) -> CampaignState:
    """Fresh campaign over gravimetric stations (unless ``site_ops`` is supplied)."""
    post_kw = {k: kw.pop(k) for k in ("plan", "memory_budget", "threads", "spill_dir") if k in kw}
    sites = dedupe_sites(sites)
    if site_ops is None:
        site_ops = gravity_operator(grid, sites, cfg)
    start = sites[0] if start is None else np.asarray(start, dtype=float)
    post = ImplicitPosterior(model, grid, **post_kw)
    return CampaignState(post, sites, site_ops, np.asarray(truth, dtype=float), threshold, tau2,
                         start, **kw)
