"""Baseline hyperplane fitters and the fundamental-matrix pipeline.

All fitters estimate a unit normal ``v`` with ``x' v = 0``; data that does not
pass through the origin should be embedded homogeneously first. Fundamental
matrices are estimated as 9-dimensional hyperplanes in the space of design
vectors ``U = (u u', u v', u, v u', v v', v, u', v', 1)``, whose normal is ``F``
listed column by column.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import emtv
from .errors import DegenerateInputError, InvalidInputError, UnderdeterminedError
from .spatial import PointSet
from .tensors import Scale

MAX_RANSAC_TRIALS = 20000
_BATCH = 256


def _points(ps) -> np.ndarray:
    return ps.points if isinstance(ps, PointSet) else np.asarray(ps, dtype=float)


def smallest_eigenvector(x: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    S = x.T @ x if weights is None else (x * weights[:, None]).T @ x
    _, V = np.linalg.eigh(0.5 * (S + S.T))
    v = V[:, 0]
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def tls_fit(ps) -> np.ndarray:
    """Unit normal minimizing ``sum (x_i' v)^2``."""
    x = _points(ps)
    if x.shape[0] < x.shape[1] - 1:
        raise UnderdeterminedError(f"{x.shape[0]} points cannot fix a hyperplane in R^{x.shape[1]}")
    return smallest_eigenvector(x)


@dataclass
class RansacResult:
    v: np.ndarray
    inliers: np.ndarray
    trials: int


def _required_trials(inlier_fraction: float, sample_size: int, confidence: float) -> int:
    good = inlier_fraction ** sample_size
    if good <= 0.0:
        return MAX_RANSAC_TRIALS
    if good >= 1.0:
        return 1
    return min(MAX_RANSAC_TRIALS, int(math.ceil(math.log(1.0 - confidence) / math.log(1.0 - good))))


def ransac_fit(ps, inlier_scale: float, confidence: float = 0.99,
               seed: int | np.random.Generator = 0) -> RansacResult:
    """Hyperplanes through ``d - 1`` sampled points, scored by consensus size.

    The trial budget shrinks as better hypotheses appear so that, at the given
    confidence, at least one all-inlier sample was drawn. Ties keep the
    earliest hypothesis. The winning consensus set is refit by least squares.
    """
    x = _points(ps)
    n, d = x.shape
    k = d - 1
    if not inlier_scale > 0:
        raise InvalidInputError("inlier_scale must be positive")
    if not 0 < confidence < 1:
        raise InvalidInputError("confidence must lie in (0, 1)")
    if n < k:
        raise UnderdeterminedError(f"need at least {k} points, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    best_count, best_v = -1, None
    budget = MAX_RANSAC_TRIALS
    done = 0
    while done < budget:
        batch = min(_BATCH, budget - done)
        picks = rng.integers(0, n, size=(batch, k))
        if k > 1:
            s = np.sort(picks, axis=1)
            distinct = np.all(s[:, 1:] != s[:, :-1], axis=1)
        else:
            distinct = np.ones(batch, dtype=bool)
        samples = x[picks]
        # normal = right-singular vector with the smallest singular value
        _, sv, Vt = np.linalg.svd(samples, full_matrices=True)
        normals = Vt[:, -1, :]
        if k > 1:
            distinct &= sv[:, -1] > 1e-12 * np.maximum(sv[:, 0], 1e-300)
        counts = np.sum(np.abs(x @ normals.T) <= inlier_scale, axis=0)
        for b in range(batch):
            done += 1
            if distinct[b] and counts[b] > best_count:
                best_count, best_v = int(counts[b]), normals[b]
                budget = min(budget, _required_trials(best_count / n, k, confidence))
            if done >= budget:
                break
    if best_v is None:
        raise DegenerateInputError("every sampled subset was degenerate")
    mask = np.abs(x @ best_v) <= inlier_scale
    v = smallest_eigenvector(x[mask]) if mask.sum() >= k else best_v
    mask = np.abs(x @ v) <= inlier_scale
    return RansacResult(v=v, inliers=mask, trials=done)


# ---------------------------------------------------------- two-view geometry

def design_vectors(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Rows ``U`` with ``U . h = x2' F x1`` for ``h = F`` read column by column."""
    u, v = x1[:, 0], x1[:, 1]
    up, vp = x2[:, 0], x2[:, 1]
    one = np.ones_like(u)
    return np.stack([u * up, u * vp, u, v * up, v * vp, v, up, vp, one], axis=1)


def h_to_F(h: np.ndarray) -> np.ndarray:
    return np.asarray(h, dtype=float).reshape(3, 3, order="F")


def F_to_h(F: np.ndarray) -> np.ndarray:
    return np.asarray(F, dtype=float).reshape(-1, order="F")


def _as_pixels(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.shape[1] not in (2, 3):
        raise InvalidInputError(f"expected (N, 2) pixel coordinates, got shape {a.shape}")
    if a.shape[1] == 3:
        if not np.allclose(a[:, 2], 1.0):
            raise InvalidInputError("homogeneous coordinates must have third component 1")
        a = a[:, :2]
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("coordinates must be finite")
    return a


def hartley_transform(x: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    x = _as_pixels(x)
    if x.shape[0] < 2:
        raise DegenerateInputError("normalization needs at least two points")
    centroid = x.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(x - centroid, axis=1)))
    if not mean_dist > 0:
        raise DegenerateInputError("all points coincide; scale is undefined")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def apply_transform(T: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = _as_pixels(x)
    return x @ T[:2, :2].T + T[:2, 2]


def hartley_normalize(x1, x2):
    """Normalized copies of both point lists and the transforms ``T``, ``T'``."""
    T1, T2 = hartley_transform(x1), hartley_transform(x2)
    return apply_transform(T1, x1), apply_transform(T2, x2), T1, T2


def enforce_rank2(F: np.ndarray) -> np.ndarray:
    """Zero the smallest singular value and scale to unit Frobenius norm."""
    U, s, Vt = np.linalg.svd(F)
    F2 = (U * np.array([s[0], s[1], 0.0])) @ Vt
    F2 /= np.linalg.norm(F2)
    k = int(np.argmax(np.abs(F2)))
    return -F2 if F2.flat[k] < 0 else F2


@dataclass
class FundamentalFit:
    F: np.ndarray
    method: str
    inliers: np.ndarray
    iterations: int
    report: emtv.FitReport | None = None


def fit_fundamental(x1, x2, method: Literal["emtv", "ransac", "tls"] = "emtv",
                    cfg: emtv.EmtvConfig | None = None, ransac_scale: float = 1e-2,
                    seed: int = 0) -> FundamentalFit:
    """Rank-2, unit-norm ``F`` with ``x2' F x1 = 0`` from pixel correspondences.

    ``ransac_scale`` is the algebraic residual threshold in normalized
    coordinates.
    """
    x1, x2 = _as_pixels(x1), _as_pixels(x2)
    if x1.shape != x2.shape:
        raise InvalidInputError("correspondence lists differ in length")
    if x1.shape[0] < 8:
        raise UnderdeterminedError(f"need at least 8 correspondences, got {x1.shape[0]}")
    n1, n2, T1, T2 = hartley_normalize(x1, x2)
    U = design_vectors(n1, n2)
    report = None
    iterations = 1
    if method == "tls":
        h = tls_fit(U)
        inliers = np.ones(len(U), dtype=bool)
    elif method == "ransac":
        res = ransac_fit(U, ransac_scale, seed=seed)
        h, inliers, iterations = res.v, res.inliers, res.trials
    elif method == "emtv":
        cfg = cfg or emtv.EmtvConfig(scale=Scale(0.1))
        report = emtv.fit(PointSet(U), cfg)
        h, inliers, iterations = report.v, report.inliers, report.iterations
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    F = T2.T @ h_to_F(h) @ T1
    return FundamentalFit(F=enforce_rank2(F), method=method, inliers=inliers,
                          iterations=iterations, report=report)


def rms_error(F: np.ndarray, x1, x2) -> float:
    """Root mean square algebraic residual ``x2' F x1`` over the given pairs."""
    U = design_vectors(_as_pixels(x1), _as_pixels(x2))
    r = U @ F_to_h(F)
    return float(np.sqrt(np.mean(r * r)))
