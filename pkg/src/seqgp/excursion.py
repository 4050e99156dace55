"""Excursion-set estimation from Gaussian posterior marginals.

Only upper excursions ``{z >= T}`` are handled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import NumericalError

NEG_VAR_TOL = 1e-8


@dataclass
class CoverageField:
    p: np.ndarray
    threshold: float
    cell_volume: float = 1.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise ValueError("coverage probabilities must lie in [0, 1]")


@dataclass
class ExcursionEstimate:
    mask: np.ndarray
    alpha: float | None
    cell_volume: float = 1.0

    @property
    def volume(self) -> float:
        return int(np.count_nonzero(self.mask)) * self.cell_volume


def coverage(mean, var, threshold: float, cell_volume: float = 1.0, var_scale: float = 1.0) -> CoverageField:
    """Pointwise probability ``P[z_x >= T]`` under independent Gaussian marginals.

    Variances in ``[-1e-8 * var_scale, 0)`` are rounding noise and clipped to
    zero; zero-variance points get the indicator of ``mean >= T``.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var < -NEG_VAR_TOL * var_scale):
        bad = int(np.argmin(var))
        raise NumericalError(f"negative variance {var[bad]:.3g} at index {bad}")
    var = np.clip(var, 0.0, None)
    p = (mean >= threshold).astype(float)
    pos = var > 0
    p[pos] = ndtr((mean[pos] - threshold) / np.sqrt(var[pos]))
    return CoverageField(p, threshold, cell_volume)


def vorobev_quantile(cov: CoverageField, alpha: float) -> ExcursionEstimate:
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return ExcursionEstimate(cov.p >= alpha, alpha, cov.cell_volume)


def expected_volume(cov: CoverageField) -> float:
    return cov.cell_volume * math.fsum(cov.p)


def vorobev_expectation(cov: CoverageField) -> tuple[float, ExcursionEstimate]:
    """Vorob'ev expectation by a descending scan over the attained coverage levels.

    Returns the largest level ``alpha_V`` (among attained levels and 1.0)
    whose quantile volume is at least the expected volume.
    """
    ev = expected_volume(cov)
    levels = np.unique(np.concatenate([cov.p[cov.p > 0], [1.0]]))[::-1]
    sorted_p = np.sort(cov.p)
    for alpha in levels:
        count = sorted_p.size - np.searchsorted(sorted_p, alpha, side="left")
        if count * cov.cell_volume >= ev:
            return float(alpha), vorobev_quantile(cov, float(alpha))
    # only reachable if every positive level is too small, i.e. never for ev <= V
    alpha = float(levels[-1])
    return alpha, vorobev_quantile(cov, alpha)


def plugin_estimate(mean, threshold: float, cell_volume: float = 1.0) -> ExcursionEstimate:
    return ExcursionEstimate(np.asarray(mean) >= threshold, None, cell_volume)


def detection_metrics(estimate, truth_mask) -> tuple[float, float]:
    """Fractions of true positives (of the true set) and false positives (of its complement)."""
    est = np.asarray(estimate.mask if isinstance(estimate, ExcursionEstimate) else estimate, dtype=bool)
    truth = np.asarray(truth_mask, dtype=bool)
    if est.shape != truth.shape:
        raise ValueError("masks have different lengths")
    n_true = int(truth.sum())
    n_false = truth.size - n_true
    if n_true == 0:
        tp = 1.0 if not est.any() else 0.0
    else:
        tp = np.count_nonzero(est & truth) / n_true
    fp = np.count_nonzero(est & ~truth) / n_false if n_false else 0.0
    return float(tp), float(fp)
