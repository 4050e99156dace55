"""Regular grids over box domains and row-chunk plans for block products."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

DEFAULT_CHUNK_SIZE = 2000


@dataclass(frozen=True)
class Grid:
    """Regular grid of ``m`` points stored in row-major axis order.

    Flat index ``i`` corresponds to ``origin + multi_index(i) * spacing``
    where ``multi_index`` follows ``numpy.unravel_index`` (C order), so the
    last axis varies fastest.
    """

    dim: int
    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    @property
    def m(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def points(self) -> np.ndarray:
        """Coordinates of every grid point, shape ``(m, dim)``."""
        axes = [o + s * np.arange(n) for o, s, n in zip(self.origin, self.spacing, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=1)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    def point(self, flat_index: int) -> np.ndarray:
        idx = np.unravel_index(flat_index, self.shape)
        return np.asarray(self.origin) + np.asarray(idx) * np.asarray(self.spacing)

    def flat_index(self, coords: Sequence[float]) -> int:
        """Inverse of :meth:`point` for coordinates lying on grid nodes."""
        rel = (np.asarray(coords, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)
        idx = np.rint(rel).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise ValueError(f"coordinates {tuple(coords)} fall outside the grid")
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "shape": list(self.shape),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return build_grid(d["dim"], d["shape"], d["spacing"], d["origin"])


def build_grid(dim: int, shape, spacing, origin=None) -> Grid:
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    spacing = tuple(float(s) for s in np.atleast_1d(spacing))
    origin = (0.0,) * dim if origin is None else tuple(float(o) for o in np.atleast_1d(origin))
    if not (len(shape) == len(spacing) == len(origin) == dim):
        raise ValueError("shape, spacing and origin must each have one entry per axis")
    if any(n < 1 for n in shape):
        raise ValueError(f"empty grid shape {shape}")
    if any(not s > 0 for s in spacing):
        raise ValueError(f"grid spacing must be positive, got {spacing}")
    return Grid(dim, shape, spacing, origin)


@dataclass(frozen=True)
class ChunkPlan:
    chunk_size: int
    ranges: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_chunks(self) -> int:
        return len(self.ranges)

    def slices(self):
        for lo, hi in self.ranges:
            yield slice(lo, hi)


def plan_chunks(grid_or_m, chunk_size: int = DEFAULT_CHUNK_SIZE) -> ChunkPlan:
    """Partition ``0..m-1`` into consecutive half-open ranges of at most ``chunk_size``."""
    m = grid_or_m.m if isinstance(grid_or_m, Grid) else int(grid_or_m)
    chunk_size = int(chunk_size)
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    ranges = [(lo, min(lo + chunk_size, m)) for lo in range(0, m, chunk_size)]
    return ChunkPlan(chunk_size, ranges)
