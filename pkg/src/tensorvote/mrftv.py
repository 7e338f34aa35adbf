"""Iterated tensor voting as minimization of a quadratic MRF energy.

Hidden tensors ``K_i`` are tied to their observations ``Kt_i`` and to the
symmetric closed-form votes ``S_ij`` cast by their neighbors' current
tensors::

    E = sum_i |K_i - Kt_i|_F^2 + g sum_i sum_{j in N(i)} |K_i - S_ij|_F^2

Sweeps visit sites in order and replace ``K_i`` by a relaxed step toward the
minimizer of ``E`` over ``K_i`` alone (Gauss-Seidel, with SOR weight ``q``).
Because ``S_ji`` depends on ``K_i`` too, that minimizer solves::

    (1 + g n_i) K + g sum_j c_ij^2 M_ij(M_ij(K)) = Kt_i + 2 g sum_j S_ij

with ``M_ij(K) = K - (P K + K P)/4`` and ``P = r_ij r_ij'``. The asymmetric
vote gives the same equation with ``M_ij(M_ij(K))`` replaced by
``K (I - 3P/4)``; ``update="approx"`` uses that right-multiplied form on the
symmetric votes instead of the exact solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .spatial import NeighborIndex, PointSet, build
from .tensors import Scale, decompose

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class MrfConfig:
    scale: Scale
    g: float = 1.0
    q: float = 1.5
    max_iters: int = 100
    tol: float = 1e-8
    step_tol: float = 1e-6
    update: Literal["exact", "approx"] = "exact"
    recompute_votes: bool = True

    def __post_init__(self):
        if not self.g > 0:
            raise InvalidInputError(f"g must be positive, got {self.g}")
        if not 1 <= self.q < 2:
            raise InvalidInputError(f"SOR weight q must lie in [1, 2), got {self.q}")
        if self.max_iters < 1 or not self.tol > 0 or not self.step_tol > 0:
            raise InvalidInputError("max_iters, tol and step_tol must be positive")
        if self.update not in ("exact", "approx"):
            raise InvalidInputError(f"unknown update rule {self.update!r}")


@dataclass
class MrfState:
    points: np.ndarray
    K: np.ndarray
    K_obs: np.ndarray
    energies: list[float] = field(default_factory=list)

    @classmethod
    def from_pointset(cls, ps: PointSet) -> "MrfState":
        obs = ps.tensors if ps.tensors is not None else ps.ball_tensors()
        return cls(points=ps.points, K=obs.copy(), K_obs=obs.copy())


@dataclass
class MrfReport:
    energies: list[float]
    sweeps: int
    converged: bool
    saliency: np.ndarray
    normals: np.ndarray
    eigenvalues: np.ndarray


def energy(state: MrfState, idx: NeighborIndex, cfg: MrfConfig) -> float:
    return float(kernels.mrf_energy(state.points, state.K, state.K_obs, idx.indptr, idx.indices,
                                    cfg.scale.sigma_d, cfg.g, cfg.recompute_votes))


def gauss_seidel_update(state: MrfState, i: int, idx: NeighborIndex, cfg: MrfConfig) -> np.ndarray:
    """Energy-minimizing ``K_i`` with all other sites held fixed."""
    return kernels.mrf_site_update(i, state.points, state.K, state.K_obs, idx.indptr, idx.indices,
                                   cfg.scale.sigma_d, cfg.g, cfg.update == "exact",
                                   cfg.recompute_votes)


def sor_sweep(state: MrfState, idx: NeighborIndex, cfg: MrfConfig, order=None) -> MrfState:
    """One in-place pass over all sites, then eigenvalue normalization into (0, 1]."""
    if order is None:
        order = np.arange(state.K.shape[0], dtype=np.int64)
    kernels.mrf_sweep(state.points, state.K, state.K_obs, idx.indptr, idx.indices,
                      cfg.scale.sigma_d, cfg.g, cfg.q, cfg.update == "exact",
                      cfg.recompute_votes, np.asarray(order, dtype=np.int64), EIG_FLOOR)
    return state


def saliencies(K: np.ndarray):
    """Sorted eigenvalues and principal eigenvectors of every site tensor."""
    vals = np.empty(K.shape[:2])
    normals = np.empty(K.shape[:2])
    for i, T in enumerate(K):
        sal = decompose(T)
        vals[i] = sal.values
        normals[i] = sal.normal
    return vals, normals


def stick_saliency(vals: np.ndarray) -> np.ndarray:
    """Gap ``l1 - l2`` of each tensor rescaled so that ``l1 = 1``.

    Converged tensors shrink roughly with the number of voters a site hears,
    so the raw gap would rank sparse sites above dense ones.
    """
    top = vals[:, 0]
    safe = np.where(top > 0, top, 1.0)
    return np.where(top > 0, (vals[:, 0] - vals[:, 1]) / safe, 0.0)


def run(ps: PointSet, cfg: MrfConfig, idx: NeighborIndex | None = None,
        max_iters: int | None = None, order=None) -> tuple[MrfState, MrfReport]:
    """Sweep until the relative energy change drops below ``cfg.tol`` and no
    site tensor moves by more than ``cfg.step_tol`` (Frobenius).

    Non-convergence is reported, not raised.
    """
    idx = idx or build(ps, cfg.scale.radius)
    state = MrfState.from_pointset(ps)
    sweeps = max_iters or cfg.max_iters
    state.energies.append(energy(state, idx, cfg))
    converged = False
    done = 0
    for done in range(1, sweeps + 1):
        before = state.K.copy()
        sor_sweep(state, idx, cfg, order)
        e = energy(state, idx, cfg)
        prev = state.energies[-1]
        state.energies.append(e)
        step = float(np.sqrt(np.sum((state.K - before) ** 2, axis=(1, 2))).max())
        if abs(prev - e) <= cfg.tol * max(abs(prev), 1e-300) and step <= cfg.step_tol:
            converged = True
            break
    if not converged and max_iters is None:
        log.warning("MRF iteration stopped after %d sweeps without converging", done)
    vals, normals = saliencies(state.K)
    report = MrfReport(energies=list(state.energies), sweeps=done, converged=converged,
                       saliency=stick_saliency(vals), normals=normals, eigenvalues=vals)
    return state, report


def classic_passes(ps: PointSet, scale, passes: int = 2, symmetric: bool = True,
                   idx: NeighborIndex | None = None) -> np.ndarray:
    """Plain iterated voting without the energy: every pass replaces each
    tensor by the sum of the votes it receives from the previous pass."""
    idx = idx or build(ps, scale.radius)
    K = ps.tensors if ps.tensors is not None else ps.ball_tensors()
    kind = kernels.SYM if symmetric else kernels.ASYM
    for _ in range(passes):
        K = kernels.accumulate(ps.points, K, idx.indptr, idx.indices, scale.sigma_d, kind, True)
    return K


def filter_mask(state: MrfState, saliency_threshold: float) -> np.ndarray:
    """Keep sites whose normalized saliency gap reaches the threshold."""
    vals, _ = saliencies(state.K)
    return stick_saliency(vals) >= saliency_threshold


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Threshold maximizing between-class variance of a 1-D histogram."""
    hist, edges = np.histogram(values, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    mu0 = np.divide(m0, w0, out=np.zeros_like(m0, dtype=float), where=w0 > 0)
    mu1 = np.divide(m0[-1] - m0, w1, out=np.zeros_like(m0, dtype=float), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return float(edges[np.argmax(between) + 1])
