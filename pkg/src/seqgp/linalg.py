"""Small dense linear-algebra helpers: guarded Cholesky and rank estimates."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import SingularCovarianceError

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
# reciprocal-condition floor on the Cholesky pivots before escalating jitter
PIVOT_RCOND = 1e-14


@dataclass
class SPDFactor:
    """Lower Cholesky factor ``L`` with ``L L^T = S + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.lower, True), b, check_finite=False)

    def whiten(self, b: np.ndarray) -> np.ndarray:
        """Return ``L^{-1} b``; rows of the result have ``S^{-1}``-weighted norms."""
        return sla.solve_triangular(self.lower, b, lower=True, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.size))


def numerical_rank(a: np.ndarray, rtol: float = 1e-12) -> int:
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    top = max(float(np.max(np.abs(w))) if w.size else 0.0, np.finfo(float).tiny)
    return int(np.sum(w > rtol * top))


def spd_factor(s: np.ndarray, scale: float | None = None, ladder=JITTER_LADDER) -> SPDFactor:
    """Cholesky-factor a symmetric matrix, escalating diagonal jitter on failure.

    Jitter steps are relative to ``scale`` (defaults to the mean diagonal).  A
    factorization whose pivots span more than ``1/PIVOT_RCOND`` is treated
    as a failure so near-singular systems also climb the ladder.
    """
    s = np.asarray(s, dtype=float)
    s = 0.5 * (s + s.T)
    p = s.shape[0]
    if scale is None or not scale > 0:
        scale = float(np.trace(s)) / p if p else 1.0
    if not scale > 0:
        scale = 1.0
    for rel in ladder:
        jitter = rel * scale
        try:
            lower = np.linalg.cholesky(s + jitter * np.eye(p))
        except np.linalg.LinAlgError:
            continue
        piv = np.diag(lower) ** 2
        if np.all(np.isfinite(lower)) and piv.min() > PIVOT_RCOND * piv.max():
            return SPDFactor(lower, jitter)
    raise SingularCovarianceError(
        "matrix is not positive definite after the jitter ladder",
        rank=numerical_rank(s),
        size=p,
    )


class FlopCounter:
    """Thread-safe multiply-add tally for instrumented runs."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.count += int(n)

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.add(a.shape[0] * a.shape[1] * (b.shape[1] if b.ndim > 1 else 1))
        return a @ b
