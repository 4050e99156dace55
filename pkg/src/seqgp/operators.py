"""Discretized linear observation operators.

Every builder returns an :class:`Operator`, a ``p x m`` real matrix whose
rows are weighted sums of point evaluations on the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .grid import Grid

GAMMA_N = 6.674e-11  # m^3 kg^-1 s^-2
MGAL_PER_SI = 1e5


@dataclass
class Operator:
    matrix: np.ndarray | sparse.csr_matrix
    labels: list | None = None
    kind: str = "generic"
    degenerate_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        if sparse.issparse(self.matrix):
            self.matrix = sparse.csr_matrix(self.matrix, dtype=float)
        else:
            self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        data = self.matrix.data if sparse.issparse(self.matrix) else self.matrix
        if not np.all(np.isfinite(data)):
            raise ValueError("operator has non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    @property
    def degenerate(self) -> bool:
        return bool(self.degenerate_rows)

    def __matmul__(self, other):
        out = self.matrix @ other
        return np.asarray(out)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sparse.issparse(self.matrix) else self.matrix

    def dense_T(self) -> np.ndarray:
        """Dense ``m x p`` transpose, the input shape of covariance products."""
        return np.ascontiguousarray(self.dense().T)

    def row_sums(self) -> np.ndarray:
        """``G @ 1``, the response to a unit constant field."""
        return np.asarray(self.matrix.sum(axis=1), dtype=float).ravel()

    def row_abs_sums(self) -> np.ndarray:
        return np.asarray(abs(self.matrix).sum(axis=1)).ravel()

    def rows(self, idx) -> "Operator":
        idx = np.atleast_1d(idx)
        labels = [self.labels[i] for i in idx] if self.labels is not None else None
        return Operator(self.matrix[idx], labels=labels, kind=self.kind)

    @staticmethod
    def stack(ops: Sequence["Operator"]) -> "Operator":
        if any(sparse.issparse(op.matrix) for op in ops):
            mat = sparse.vstack([sparse.csr_matrix(op.matrix) for op in ops]).tocsr()
        else:
            mat = np.vstack([op.matrix for op in ops])
        labels = None
        if all(op.labels is not None for op in ops):
            labels = [lab for op in ops for lab in op.labels]
        return Operator(mat, labels=labels, kind="stacked")


def pointwise_operator(grid: Grid, flat_indices) -> Operator:
    idx = np.asarray(flat_indices, dtype=int).ravel()
    if idx.size == 0:
        raise ValueError("need at least one index")
    if np.any(idx < 0) or np.any(idx >= grid.m):
        raise ValueError(f"indices out of range for m={grid.m}")
    if np.unique(idx).size != idx.size:
        raise ValueError("duplicate observation indices")
    mat = sparse.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, grid.m))
    return Operator(mat, labels=[int(i) for i in idx], kind="pointwise")


def weighted_operator(grid: Grid, rows: Sequence[Sequence[tuple[int, float]]]) -> Operator:
    data, ri, ci, degenerate = [], [], [], []
    for r, row in enumerate(rows):
        if len(row) == 0:
            degenerate.append(r)
        for j, w in row:
            j = int(j)
            if not 0 <= j < grid.m:
                raise ValueError(f"row {r}: index {j} out of range for m={grid.m}")
            ri.append(r)
            ci.append(j)
            data.append(float(w))
    mat = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), grid.m))
    mat.sum_duplicates()
    return Operator(mat, kind="weighted", degenerate_rows=degenerate)


def average_operator(grid: Grid) -> Operator:
    return weighted_operator(grid, [[(j, 1.0 / grid.m) for j in range(grid.m)]])


def integral_operator(grid: Grid) -> Operator:
    return weighted_operator(grid, [[(j, grid.cell_volume) for j in range(grid.m)]])


# --- Fourier -----------------------------------------------------------------


def _square_side(grid: Grid) -> int:
    if grid.dim != 2 or grid.shape[0] != grid.shape[1]:
        raise ValueError("the DFT operator needs a square 2D grid")
    return grid.shape[0]


def dft_operator(grid: Grid, freqs: Sequence[tuple[int, int]], skip_zero_rows: bool = False) -> Operator:
    """Real and imaginary parts of ``F_uv = sum_kl Z_kl exp(-2 pi i (uk + vl) / M)``.

    Node indices ``k, l`` and frequencies ``u, v`` both run over ``1..M``;
    node ``(k, l)`` is flat index ``(k-1) * M + (l-1)``.  Each frequency
    yields a cosine row then a negated sine row.  With ``skip_zero_rows``
    the identically-zero imaginary rows of self-conjugate frequencies are
    dropped.
    """
    M = _square_side(grid)
    k = np.arange(1, M + 1)
    rows, labels = [], []
    for u, v in freqs:
        if not (1 <= u <= M and 1 <= v <= M):
            raise ValueError(f"frequency {(u, v)} outside 1..{M}")
        phase = 2.0 * np.pi * ((u * k)[:, None] + (v * k)[None, :]) / M
        rows.append(np.cos(phase).ravel())
        labels.append((u, v, "re"))
        if skip_zero_rows and _self_conjugate(u, v, M):
            continue
        rows.append(-np.sin(phase).ravel())
        labels.append((u, v, "im"))
    return Operator(np.array(rows), labels=labels, kind="dft")


def _self_conjugate(u: int, v: int, M: int) -> bool:
    return (2 * u) % M == 0 and (2 * v) % M == 0


def _signed(u: int, M: int) -> int:
    s = u % M
    return s - M if s > M // 2 else s


def dft_frequencies(M: int, count: int | None = None, unique: bool = True) -> list[tuple[int, int]]:
    """Frequencies ordered by growing l-infinity norm of the wrapped frequency.

    ``(M, M)`` is the zero frequency and comes first; ties are broken
    lexicographically on ``(u, v)``.  With ``unique`` only one member of each
    conjugate pair ``(u, v) ~ (M-u, M-v)`` is kept, so the real rows of the
    selection are linearly independent.
    """
    all_f = [(u, v) for u in range(1, M + 1) for v in range(1, M + 1)]
    all_f.sort(key=lambda f: (max(abs(_signed(f[0], M)), abs(_signed(f[1], M))), f))
    out, seen = [], set()
    for u, v in all_f:
        if unique:
            conj = ((-u) % M or M, (-v) % M or M)
            if conj in seen:
                continue
            seen.add((u, v))
        out.append((u, v))
        if count is not None and len(out) >= count:
            break
    return out


# --- gravimetry --------------------------------------------------------------


@dataclass(frozen=True)
class Prism:
    x_l: float
    x_h: float
    y_l: float
    y_h: float
    z_l: float
    z_h: float

    def __post_init__(self):
        for lo, hi, ax in ((self.x_l, self.x_h, "x"), (self.y_l, self.y_h, "y"), (self.z_l, self.z_h, "z")):
            if not lo < hi:
                raise ValueError(f"prism bounds on {ax} must satisfy low < high")

    def contains(self, point, closed: bool = True) -> bool:
        x, y, z = point
        if closed:
            return self.x_l <= x <= self.x_h and self.y_l <= y <= self.y_h and self.z_l <= z <= self.z_h
        return self.x_l < x < self.x_h and self.y_l < y < self.y_h and self.z_l < z < self.z_h


@dataclass(frozen=True)
class GravityConfig:
    gamma_N: float = GAMMA_N
    output_unit: float = MGAL_PER_SI

    def __post_init__(self):
        if not self.gamma_N > 0:
            raise ValueError("gamma_N must be positive")


def _log_ratio(a, r, other_sq):
    """``log((r + a) / (r - a))`` with ``other_sq = r**2 - a**2``, cancellation-free."""
    a = np.asarray(a, dtype=float)
    out = np.zeros(np.broadcast(a, r).shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(r > 0, a / r, 0.0)
        mid = np.abs(q) < 0.9
        out = np.where(mid, 2.0 * np.arctanh(np.clip(q, -0.9, 0.9)), out)
        pos = ~mid & (a > 0) & (other_sq > 0)
        neg = ~mid & (a < 0) & (other_sq > 0)
        safe_sq = np.where(other_sq > 0, other_sq, 1.0)
        out = np.where(pos, 2.0 * np.log(r + np.abs(a)) - np.log(safe_sq), out)
        out = np.where(neg, np.log(safe_sq) - 2.0 * np.log(r + np.abs(a)), out)
    return out


def _corner_term(x, y, z):
    """Bracketed prism term at one corner, with the finite limits at zero arguments."""
    r = np.sqrt(x * x + y * y + z * z)
    t1 = x * _log_ratio(y, r, x * x + z * z)
    t2 = y * _log_ratio(x, r, y * y + z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        at = np.where(z != 0, np.arctan(x * y / np.where(z != 0, z * r, 1.0)), 0.0)
    t3 = -2.0 * z * at
    return t1 + t2 + t3


def prism_corner_sum(xb, yb, zb, station) -> np.ndarray:
    """Triple difference of the prism bracket over the given bound pairs.

    ``xb``, ``yb``, ``zb`` are ``(upper, lower)`` pairs (arrays broadcast
    over prisms); order is not validated, so swapping a pair flips the sign.
    """
    x0, y0, z0 = station
    total = 0.0
    for i, xv in enumerate(xb):
        for j, yv in enumerate(yb):
            for k, zv in enumerate(zb):
                sign = -1.0 if (i + j + k) % 2 else 1.0
                total = total + sign * _corner_term(np.asarray(xv) - x0, np.asarray(yv) - y0, np.asarray(zv) - z0)
    return total


# The bracket below is the downward-positive magnitude; observations are the
# z-up component, i.e. the integral of (x3 - s3) / |x - s|^3, hence the sign.
_BRACKET_SIGN = -0.5


def prism_gz(prism: Prism, station, density: float = 1.0, cfg: GravityConfig = GravityConfig()) -> float:
    """Vertical (z-up) gravity component in mGal of a uniform prism at ``station``.

    Equals ``gamma_N * density * integral of (x3 - s3) / |x - s|^3`` over the
    prism, so mass below the station gives a negative value.
    """
    if prism.contains(station, closed=True):
        raise ValueError(f"station {tuple(station)} lies inside prism {prism}")
    s = prism_corner_sum(
        (prism.x_h, prism.x_l), (prism.y_h, prism.y_l), (prism.z_h, prism.z_l), station
    )
    return float(_BRACKET_SIGN * cfg.gamma_N * density * s * cfg.output_unit)


def cell_bounds(grid: Grid) -> np.ndarray:
    """``(m, 6)`` array of ``(x_l, x_h, y_l, y_h, z_l, z_h)``; points are cell centroids."""
    if grid.dim != 3:
        raise ValueError("gravity operators need a 3D grid")
    half = 0.5 * np.asarray(grid.spacing)
    c = grid.points
    return np.column_stack([c[:, 0] - half[0], c[:, 0] + half[0],
                            c[:, 1] - half[1], c[:, 1] + half[1],
                            c[:, 2] - half[2], c[:, 2] + half[2]])


def gravity_operator(grid: Grid, stations, cfg: GravityConfig = GravityConfig()) -> Operator:
    """``G[i, j]`` is the unit-density response of cell ``j`` at station ``i`` (mGal per kg/m^3)."""
    stations = np.atleast_2d(np.asarray(stations, dtype=float))
    b = cell_bounds(grid)
    G = np.empty((stations.shape[0], grid.m))
    for i, s in enumerate(stations):
        inside = ((b[:, 0] <= s[0]) & (s[0] <= b[:, 1]) & (b[:, 2] <= s[1]) & (s[1] <= b[:, 3])
                  & (b[:, 4] <= s[2]) & (s[2] <= b[:, 5]))
        if np.any(inside):
            j = int(np.flatnonzero(inside)[0])
            raise ValueError(f"station {i} at {tuple(s)} lies inside cell {j}")
        G[i] = _BRACKET_SIGN * cfg.gamma_N * cfg.output_unit * prism_corner_sum(
            (b[:, 1], b[:, 0]), (b[:, 3], b[:, 2]), (b[:, 5], b[:, 4]), s
        )
    labels = [tuple(float(c) for c in s) for s in stations]
    return Operator(G, labels=labels, kind="gravity")
