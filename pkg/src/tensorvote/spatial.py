"""Exact fixed-radius neighbor graphs over point sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError


@dataclass(frozen=True)
class PointSet:
    """N points in R^d, optionally carrying one input tensor each."""

    points: np.ndarray
    tensors: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidInputError(f"points must be a non-empty (N, d) array, got shape {pts.shape}")
        if pts.shape[1] < 2:
            raise InvalidInputError("points need d >= 2")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.tensors is not None:
            T = np.ascontiguousarray(self.tensors, dtype=float)
            if T.shape != (pts.shape[0], pts.shape[1], pts.shape[1]):
                raise InvalidInputError(f"expected tensors of shape {(len(pts),) + pts.shape[1:] * 2}")
            object.__setattr__(self, "tensors", T)

    @classmethod
    def from_rows(cls, rows) -> "PointSet":
        rows = list(rows)
        if not rows:
            raise InvalidInputError("empty point set")
        d = len(rows[0])
        for k, r in enumerate(rows):
            if len(r) != d:
                raise InvalidInputError(f"point {k} has {len(r)} coordinates, expected {d}")
        return cls(np.array(rows, dtype=float))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def ball_tensors(self) -> np.ndarray:
        return np.broadcast_to(np.eye(self.d), (self.n, self.d, self.d)).copy()


class NeighborIndex:
    """All pairs within ``radius``, stored as a CSR graph.

    ``indices[indptr[i]:indptr[i + 1]]`` lists the neighbors of ``i`` in
    ascending order, never including ``i`` itself. The relation is symmetric.
    """

    def __init__(self, ps: PointSet, radius: float):
        if not (np.isfinite(radius) and radius > 0):
            raise InvalidInputError(f"radius must be positive, got {radius}")
        self.points = ps.points
        self.radius = float(radius)
        self._tree = cKDTree(self.points)
        lists = self._tree.query_ball_point(self.points, self.radius, return_sorted=True)
        counts = np.fromiter((len(l) - 1 for l in lists), dtype=np.int64, count=len(lists))
        self.indptr = np.zeros(ps.n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.indptr[1:])
        self.indices = np.empty(self.indptr[-1], dtype=np.int64)
        for i, l in enumerate(lists):
            arr = np.asarray(l, dtype=np.int64)
            self.indices[self.indptr[i]:self.indptr[i + 1]] = arr[arr != i]

    @property
    def n(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def edges(self) -> int:
        return int(self.indptr[-1])

    def neighbors(self, i: int, radius_override: float | None = None) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"site {i} out of range for {self.n} points")
        if radius_override is None:
            return self.indices[self.indptr[i]:self.indptr[i + 1]].copy()
        found = np.asarray(self._tree.query_ball_point(self.points[i], radius_override,
                                                       return_sorted=True), dtype=np.int64)
        return found[found != i]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)


def build(ps: PointSet, radius: float) -> NeighborIndex:
    return NeighborIndex(ps, radius)


def brute_force_neighbors(points: np.ndarray, radius: float) -> list[np.ndarray]:
    """O(N^2) reference scan."""
    diff = points[:, None, :] - points[None, :, :]
    within = np.einsum("ija,ija->ij", diff, diff) <= radius * radius
    np.fill_diagonal(within, False)
    return [np.flatnonzero(row) for row in within]
