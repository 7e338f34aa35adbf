"""Robust single-hyperplane fitting by EM over inverse structure tensors.

The model is a unit normal ``v`` with ``x' v = 0`` for inliers. Each point
also carries an inverse tensor ``K_i^-1`` that is kept consistent with the
inverse votes ``S'_ij`` of its neighbors, and inliers must agree with ``v``
through ``v' K_i^-1 v``. Outliers are uniform with density ``1 / C``.

The E-step computes inlier posteriors ``w_i``; the M-step updates, in order,
``alpha``, every ``K_i^-1``, ``v``, ``sigma``, ``sigma1`` and ``sigma2``.
Inverse votes are recomputed from the current ``K_j^-1`` whenever they are
needed, so nothing is cached per edge.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateSupportError, InvalidInputError, UnderdeterminedError
from .spatial import NeighborIndex, PointSet, build
from .tensors import Scale

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12
INITIAL_SIGMA1 = 1e6


@dataclass(frozen=True)
class EmtvConfig:
    scale: Scale
    C: float | None = None
    alpha_fixed: float | None = None
    max_iters: int = 100
    tol: float = 1e-8
    inlier_threshold: float = 0.8

    def __post_init__(self):
        if self.C is not None and not (np.isfinite(self.C) and self.C > 0):
            raise InvalidInputError(f"C must be positive, got {self.C}")
        if self.alpha_fixed is not None and not 0 <= self.alpha_fixed <= 1:
            raise InvalidInputError("alpha_fixed must lie in [0, 1]")
        if not 0 < self.inlier_threshold < 1:
            raise InvalidInputError("inlier_threshold must lie in (0, 1)")
        if self.max_iters < 1 or not self.tol > 0:
            raise InvalidInputError("max_iters and tol must be positive")


@dataclass
class EmtvState:
    v: np.ndarray
    K_inv: np.ndarray
    w: np.ndarray
    alpha: float
    sigma: float
    sigma1: float
    sigma2: float
    C: float
    loglik: list[float] = field(default_factory=list)
    cap_events: int = 0
    clamped: bool = False


@dataclass
class FitReport:
    v: np.ndarray
    w: np.ndarray
    inliers: np.ndarray
    alpha: float
    sigma: float
    sigma1: float
    sigma2: float
    iterations: int
    converged: bool
    loglik: list[float]
    cap_events: int
    clamped: bool

    def to_dict(self) -> dict:
        return {
            "v": [float(x) for x in self.v],
            "w": [float(x) for x in self.w],
            "inliers": [bool(x) for x in self.inliers],
            "alpha": float(self.alpha),
            "sigma": float(self.sigma),
            "sigma1": float(self.sigma1),
            "sigma2": float(self.sigma2),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "loglik": [float(x) for x in self.loglik],
            "cap_events": int(self.cap_events),
            "clamped": bool(self.clamped),
        }


def bounding_box_size(points: np.ndarray) -> float:
    """Largest side of the axis-aligned bounding box (``C_m``)."""
    span = float(np.max(points.max(axis=0) - points.min(axis=0)))
    return span if span > 0 else 1.0


def _project_inverse(T: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize, clamp eigenvalues at ``floor * lambda_max``, scale into (0, 1].

    Works on a stack of matrices; one with no positive eigenvalue becomes ``I``.
    """
    lam, V = np.linalg.eigh(0.5 * (T + np.swapaxes(T, -1, -2)))
    top = lam[..., -1:]
    good = top[..., 0] > 0
    safe = np.where(top > 0, top, 1.0)
    lam = np.maximum(lam, floor * safe) / safe
    out = np.einsum("...ak,...k,...bk->...ab", V, lam, V)
    out[~good] = np.eye(T.shape[-1])
    return out


def _orient(v: np.ndarray, ref: np.ndarray | None) -> np.ndarray:
    v = v / np.linalg.norm(v)
    if ref is not None:
        return -v if v @ ref < 0 else v
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def _clamp(x: float, state: EmtvState) -> float:
    if not x > SIGMA_FLOOR:
        state.clamped = True
        return SIGMA_FLOOR
    return x


def _orientation_terms(K_inv: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.abs(np.einsum("a,iab,b->i", v, K_inv, v))


def _inlier_density(points, state: EmtvState) -> np.ndarray:
    beta = 1.0 / (2.0 * np.pi * state.sigma * state.sigma1)
    r = points @ state.v
    e1 = np.exp(-(r * r) / (2.0 * state.sigma ** 2))
    e2 = np.exp(-_orientation_terms(state.K_inv, state.v) / (2.0 * state.sigma1 ** 2))
    return state.alpha * beta * e1 * e2


def log_likelihood(ps: PointSet, state: EmtvState) -> float:
    """Observed-data log-likelihood ``sum_i log(p_in + (1 - alpha) / C)``."""
    total = _inlier_density(ps.points, state) + (1.0 - state.alpha) / state.C
    return float(np.sum(np.log(np.maximum(total, 1e-300))))


def e_step(state: EmtvState, ps: PointSet, cfg: EmtvConfig | None = None) -> np.ndarray:
    """Inlier posteriors ``w_i``; stored on ``state`` and returned."""
    state.sigma = _clamp(state.sigma, state)
    state.sigma1 = _clamp(state.sigma1, state)
    p_in = _inlier_density(ps.points, state)
    p_out = (1.0 - state.alpha) / state.C
    denom = p_in + p_out
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(denom > 0, p_in / denom, 0.0)
    state.w = np.clip(w, 0.0, 1.0)
    return state.w


def _update_inverse_tensors(state: EmtvState, ps: PointSet, idx: NeighborIndex, cfg: EmtvConfig,
                            with_model: bool) -> None:
    acc, wsum = kernels.inverse_vote_sums(ps.points, state.K_inv, state.w, idx.indptr, idx.indices,
                                          cfg.scale.sigma_d)
    coef = state.sigma2 ** 2 / (2.0 * state.sigma1 ** 2) if with_model else 0.0
    active = wsum > 0
    A = acc[active]
    sub = coef * state.w[active]
    if coef > 0:
        # spectral norm of the symmetric part of each accumulated vote
        cap = np.abs(np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, 1, 2)))).max(axis=1)
        over = sub > cap
        state.cap_events += int(np.count_nonzero(over))
        sub = np.where(over, cap, sub)
    raw = (A - sub[:, None, None] * np.outer(state.v, state.v)) / wsum[active, None, None]
    new = state.K_inv.copy()
    new[active] = _project_inverse(raw, cfg.scale.epsilon)
    state.K_inv = new


def _update_model(state: EmtvState, ps: PointSet) -> None:
    w = state.w
    x = ps.points
    M = np.einsum("i,ia,ib->ab", w, x, x)
    M += (state.sigma ** 2 / state.sigma1 ** 2) * np.einsum("i,iab->ab", w, state.K_inv)
    _, V = np.linalg.eigh(0.5 * (M + M.T))
    state.v = _orient(V[:, 0], state.v)


def _update_scales(state: EmtvState, ps: PointSet, idx: NeighborIndex, cfg: EmtvConfig) -> None:
    w = state.w
    W = float(np.sum(w))
    r = ps.points @ state.v
    state.sigma = _clamp(float(np.sqrt(np.sum(r * r * w) / W)), state)
    state.sigma1 = _clamp(float(np.sqrt(np.sum(_orientation_terms(state.K_inv, state.v) * w) / W)), state)
    resid = kernels.inverse_residual_sum(ps.points, state.K_inv, w, idx.indptr, idx.indices,
                                         cfg.scale.sigma_d)
    state.sigma2 = _clamp(float(np.sqrt(resid / W)), state)


def _check_support(state: EmtvState, d: int) -> None:
    if not float(np.sum(state.w)) >= d:
        raise DegenerateSupportError(
            f"total inlier weight {float(np.sum(state.w)):.3g} is below the dimension {d}")


def m_step(state: EmtvState, ps: PointSet, idx: NeighborIndex, cfg: EmtvConfig) -> EmtvState:
    _check_support(state, ps.d)
    state.alpha = float(np.mean(state.w)) if cfg.alpha_fixed is None else cfg.alpha_fixed
    _update_inverse_tensors(state, ps, idx, cfg, with_model=True)
    _update_model(state, ps)
    _update_scales(state, ps, idx, cfg)
    return state


def init(ps: PointSet, cfg: EmtvConfig, idx: NeighborIndex | None = None) -> EmtvState:
    """Start from ball tensors, all points inliers and a huge ``sigma1``."""
    if ps.n < ps.d:
        raise UnderdeterminedError(f"{ps.n} points cannot determine a hyperplane in R^{ps.d}")
    idx = idx or build(ps, cfg.scale.radius)
    C = cfg.C if cfg.C is not None else bounding_box_size(ps.points)
    d = ps.d
    # (I + eps I)^-1 for every input ball tensor
    K_inv = np.broadcast_to(np.eye(d) / (1.0 + cfg.scale.epsilon), (ps.n, d, d)).copy()
    state = EmtvState(v=np.eye(d)[-1], K_inv=K_inv, w=np.ones(ps.n),
                      alpha=0.5 if cfg.alpha_fixed is None else cfg.alpha_fixed,
                      sigma=1.0, sigma1=INITIAL_SIGMA1, sigma2=1.0, C=C)
    if cfg.alpha_fixed is None:
        state.alpha = float(np.mean(state.w))
    _update_inverse_tensors(state, ps, idx, cfg, with_model=False)
    state.v = None
    _update_model(state, ps)
    _update_scales(state, ps, idx, cfg)
    if cfg.alpha_fixed is None:
        # a posterior of exactly one everywhere would make the outlier class vanish
        state.alpha = 0.5
    return state


def fit(ps: PointSet, cfg: EmtvConfig, idx: NeighborIndex | None = None) -> FitReport:
    """Alternate E- and M-steps until the log-likelihood settles."""
    idx = idx or build(ps, cfg.scale.radius)
    state = init(ps, cfg, idx)
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        e_step(state, ps, cfg)
        m_step(state, ps, idx, cfg)
        state.loglik.append(log_likelihood(ps, state))
        if len(state.loglik) >= 2:
            prev, cur = state.loglik[-2], state.loglik[-1]
            if abs(cur - prev) <= cfg.tol * max(abs(prev), 1.0):
                converged = True
                break
    if not converged:
        log.info("EMTV stopped after %d iterations without converging", it)
    if state.cap_events:
        log.info("tensor update cap was active %d times", state.cap_events)
    e_step(state, ps, cfg)
    return FitReport(v=state.v.copy(), w=state.w.copy(), inliers=state.w > cfg.inlier_threshold,
                     alpha=state.alpha, sigma=state.sigma, sigma1=state.sigma1, sigma2=state.sigma2,
                     iterations=it, converged=converged, loglik=list(state.loglik),
                     cap_events=state.cap_events, clamped=state.clamped)
