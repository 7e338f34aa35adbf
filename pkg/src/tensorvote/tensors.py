"""Closed-form tensor votes in d dimensions.

A voter at ``xj`` carrying a symmetric PSD tensor ``Kj`` casts a tensor vote
at a receiver ``xi``. The vote is a d x d matrix built from the reflection
``R = I - 2 r r'`` about the hyperplane normal to ``r``, the unit vector from
``xj`` to ``xi``, attenuated by the Gaussian proximity weight
``c = exp(-|xi - xj|^2 / sigma_d)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateInputError, InvalidInputError, UnderflowError

Mode = Literal["asymmetric", "symmetric"]

DEFAULT_EPSILON = 1e-3
PRUNE_WEIGHT = 1e-6
_MAX_INV_EXPONENT = -np.log(1e-300)


@dataclass(frozen=True)
class Scale:
    """Scale of analysis.

    ``sigma_d`` is in squared feature-space units; ``epsilon`` is the ball
    regularizer added before inverting a tensor.
    """

    sigma_d: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not (np.isfinite(self.sigma_d) and self.sigma_d > 0):
            raise InvalidInputError(f"sigma_d must be positive, got {self.sigma_d}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidInputError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def radius(self) -> float:
        """Distance beyond which the proximity weight drops below ``PRUNE_WEIGHT``."""
        return float(np.sqrt(-self.sigma_d * np.log(PRUNE_WEIGHT)))


@dataclass(frozen=True)
class Saliency:
    """Sorted eigensystem. ``vectors[:, k]`` pairs with ``values[k]``."""

    values: np.ndarray
    vectors: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        return self.vectors[:, 0]

    @property
    def stick(self) -> float:
        """Top saliency gap ``l1 - l2``."""
        return float(self.values[0] - self.values[1])

    @property
    def ball(self) -> float:
        return float(self.values[-1])


def as_point(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim != 1 or p.shape[0] < 2:
        raise InvalidInputError(f"a point needs at least 2 coordinates, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("point coordinates must be finite")
    return p


def as_tensor(K, d: int | None = None) -> np.ndarray:
    T = np.asarray(K, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise InvalidInputError(f"tensor must be square, got shape {T.shape}")
    if d is not None and T.shape[0] != d:
        raise InvalidInputError(f"tensor is {T.shape[0]}-dimensional, point is {d}-dimensional")
    if not np.all(np.isfinite(T)):
        raise InvalidInputError("tensor entries must be finite")
    return T


def _direction(xi, xj):
    xi, xj = as_point(xi), as_point(xj)
    if xi.shape != xj.shape:
        raise InvalidInputError("points have different dimensions")
    diff = xi - xj
    dist2 = float(diff @ diff)
    if dist2 == 0.0:
        raise DegenerateInputError("receiver and voter coincide; r_ij is undefined")
    return xi, xj, diff / np.sqrt(dist2), dist2


def proximity_weight(xi, xj, scale: Scale) -> float:
    """Gaussian proximity weight ``exp(-|xi - xj|^2 / sigma_d)``."""
    xi, xj = as_point(xi), as_point(xj)
    diff = xi - xj
    return float(np.exp(-(diff @ diff) / scale.sigma_d))


def stick_decay(xi, xj, nj, scale: Scale) -> float:
    """Proximity weight times the squared sine between ``r_ij`` and ``nj``."""
    _, _, r, dist2 = _direction(xi, xj)
    n = np.asarray(nj, dtype=float)
    return float(np.exp(-dist2 / scale.sigma_d) * (1.0 - (r @ n) ** 2))


def stick_vote(xi, xj, nj, tau: float = 1.0) -> np.ndarray:
    """Normal received at ``xi`` along the osculating arc from a stick ``nj`` at ``xj``."""
    _, _, r, _ = _direction(xi, xj)
    n = np.asarray(nj, dtype=float)
    return (n - 2.0 * r * (r @ n)) * tau


def reflection(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.eye(r.shape[0]) - 2.0 * np.outer(r, r)


def _vote(xi, xj, Kj, scale, kind):
    xi, xj, _, dist2 = _direction(xi, xj)
    K = as_tensor(Kj, xi.shape[0])
    if kind == kernels.INV and dist2 / scale.sigma_d > _MAX_INV_EXPONENT:
        raise UnderflowError("proximity weight below 1e-300; prune distant voters first")
    S, _ = kernels.edge_votes_np(xi[None], xj[None], K[None], scale.sigma_d, kind)
    return S[0]


def cftv_vote(xi, xj, Kj, scale: Scale, cutoff45: bool = False) -> np.ndarray:
    """Asymmetric closed-form vote ``c R Kj R'`` with ``R' = (I - r r'/2) R``.

    With ``cutoff45`` the vote is zeroed when the receiver lies more than 45
    degrees off the voter's tangent space, measured against the voter's
    principal direction.
    """
    S = _vote(xi, xj, Kj, scale, kernels.ASYM)
    if cutoff45 and _outside_45(xi, xj, Kj):
        return np.zeros_like(S)
    return S


def cftv_vote_symmetric(xi, xj, Kj, scale: Scale, cutoff45: bool = False) -> np.ndarray:
    """Symmetric closed-form vote ``c R (Kj - (P Kj + Kj P)/4) R``, ``P = r r'``."""
    S = _vote(xi, xj, Kj, scale, kernels.SYM)
    S = 0.5 * (S + S.T)
    if cutoff45 and _outside_45(xi, xj, Kj):
        return np.zeros_like(S)
    return S


def cftv_vote_inverse(xi, xj, Kj_inv, scale: Scale) -> np.ndarray:
    """Inverse vote ``c^-1 R (I + r r') Kj^-1 R``; ``S' @ S = I`` for matching inputs."""
    return _vote(xi, xj, Kj_inv, scale, kernels.INV)


def _outside_45(xi, xj, Kj) -> bool:
    _, _, r, _ = _direction(xi, xj)
    n = decompose(as_tensor(Kj)).normal
    return abs(r @ n) > np.sqrt(0.5)


def regularized_inverse(K, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """``(K + eps I)^-1`` with ``eps`` scaled by the largest eigenvalue of ``K``."""
    K = as_tensor(K)
    top = np.linalg.eigvalsh(0.5 * (K + K.T)).max()
    eps = epsilon * top if top > 0 else epsilon
    return np.linalg.inv(K + eps * np.eye(K.shape[0]))


def psd_part(S) -> np.ndarray:
    """``U diag(s) U'`` from ``S = U diag(s) V'``; equals ``sqrt(S S')``."""
    return kernels.psd_part_np(as_tensor(S))


def accumulate(site, neighbors: Iterable[tuple[Sequence[float], np.ndarray]], scale: Scale,
               mode: Mode = "asymmetric") -> np.ndarray:
    """Structure tensor at ``site``: sum over voters of the PSD part of each vote.

    Voters are summed in the order given. With no voters the result is
    ``epsilon * I``.
    """
    x = as_point(site)
    total = np.zeros((x.shape[0], x.shape[0]))
    count = 0
    vote = cftv_vote if mode == "asymmetric" else cftv_vote_symmetric
    if mode not in ("asymmetric", "symmetric"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    for xj, Kj in neighbors:
        total += psd_part(vote(x, xj, Kj, scale))
        count += 1
    if count == 0:
        return scale.epsilon * np.eye(x.shape[0])
    return 0.5 * (total + total.T)


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            out[:, k] = -col
    return out


def decompose(T) -> Saliency:
    """Sorted eigensystem of ``T``.

    Symmetric input uses the eigendecomposition. Anything else is read
    through its SVD: the singular values with the left-singular vectors, i.e.
    the eigensystem of ``sqrt(T T')``. Each eigenvector's first nonzero
    component is made positive.
    """
    T = as_tensor(T)
    scale = max(np.abs(T).max(), 1e-300)
    if np.abs(T - T.T).max() <= 1e-12 * scale:
        lam, V = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(-lam, kind="stable")
        lam, V = lam[order], V[:, order]
    else:
        V, lam, _ = np.linalg.svd(T)
    return Saliency(values=lam, vectors=_canonical_signs(V))


def random_psd(rng: np.random.Generator, d: int, eps: float = 1e-2) -> np.ndarray:
    """``A A' + eps I`` with standard normal ``A``."""
    A = rng.standard_normal((d, d))
    return A @ A.T + eps * np.eye(d)
