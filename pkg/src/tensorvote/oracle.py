"""Brute-force voting by summing stick votes over sampled normals.

The voter tensor ``K`` is expanded into a family of weighted unit sticks by
pushing a uniform set of unit directions ``m`` through ``K^(1/2)``: each
image ``y = K^(1/2) m`` gives a normal ``n = y / |y|`` with weight
``tau^2 = |y|^2 = m' K m``. Because the ``m`` set has an isotropic second
moment, the weighted sticks sum back to ``K`` exactly; a pure stick collapses
onto a single normal and a ball tensor onto the uniform sampling itself.
Each stick contributes ``tau^2 * eta(xi, xj, n) * v v'`` with ``v`` the
osculating-arc vote.

Only d = 2 and d = 3 are supported: the ``m`` are evenly spaced on the half
circle in 2D and the vertices of a subdivided icosahedron (one per antipodal
pair) in 3D.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from . import tensors as tc
from .errors import InvalidInputError

DEFAULT_SAMPLES_2D = 720
DEFAULT_ICO_DEPTH = 4
MIN_SAMPLES = 16


@dataclass(frozen=True)
class DirectionSampling:
    """Density of the base direction set.

    ``samples`` is the number of normals on the half circle; ``ico_depth``
    the icosahedron subdivision depth used for 3-dimensional components.
    """

    samples: int = DEFAULT_SAMPLES_2D
    ico_depth: int = DEFAULT_ICO_DEPTH

    def __post_init__(self):
        if self.samples < 1 or self.ico_depth < 0:
            raise InvalidInputError("sampling density must be positive")
        if self.samples < MIN_SAMPLES:
            warnings.warn(f"only {self.samples} normals on the half circle; expect coarse votes",
                          RuntimeWarning, stacklevel=2)


@lru_cache(maxsize=8)
def half_circle(samples: int) -> np.ndarray:
    theta = np.arange(samples) * (np.pi / samples)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


@lru_cache(maxsize=8)
def icosphere_hemisphere(depth: int) -> np.ndarray:
    """One representative of each antipodal pair of icosphere vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    pts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(depth):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = pts[a] + pts[b]
                pts.append(m / np.linalg.norm(m))
                cache[key] = len(pts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    P = np.array(pts)
    # keep the half with the first nonzero coordinate positive
    key = np.where(np.abs(P[:, 2]) > 1e-12, P[:, 2],
                   np.where(np.abs(P[:, 1]) > 1e-12, P[:, 1], P[:, 0]))
    return P[key > 0]


def base_directions(d: int, sampling: DirectionSampling) -> np.ndarray:
    if d == 2:
        return half_circle(sampling.samples)
    if d == 3:
        return icosphere_hemisphere(sampling.ico_depth)
    raise InvalidInputError("the discrete oracle supports d = 2 and d = 3 only")


def stick_decomposition(K, sampling: DirectionSampling | None = None):
    """Unit normals ``n`` (rows) and weights ``tau^2`` with ``sum tau^2 n n' = K``.

    Zero-weight directions are dropped.
    """
    sampling = sampling or DirectionSampling()
    K = tc.as_tensor(K)
    d = K.shape[0]
    m = base_directions(d, sampling)
    lam, V = np.linalg.eigh(0.5 * (K + K.T))
    root = (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T
    y = m @ root
    tau2 = np.einsum("ma,ma->m", y, y)
    keep = tau2 > 1e-300
    n = y[keep] / np.sqrt(tau2[keep])[:, None]
    # the m set sums to (len(m) / d) * I
    return n, tau2[keep] * (d / m.shape[0])


def discrete_vote(xi, xj, Kj, scale: tc.Scale, sampling: DirectionSampling | None = None) -> np.ndarray:
    """Sum of weighted osculating-arc stick votes over the sampled normals of ``Kj``."""
    xi, xj = tc.as_point(xi), tc.as_point(xj)
    diff = xi - xj
    dist2 = float(diff @ diff)
    if dist2 == 0.0:
        raise tc.DegenerateInputError("receiver and voter coincide")
    r = diff / np.sqrt(dist2)
    c = np.exp(-dist2 / scale.sigma_d)
    n, tau2 = stick_decomposition(Kj, sampling)
    cos = n @ r
    eta = c * (1.0 - cos ** 2)
    v = n - 2.0 * cos[:, None] * r[None, :]
    S = np.einsum("m,ma,mb->ab", tau2 * eta, v, v)
    return 0.5 * (S + S.T)


# ------------------------------------------------------------------ fields

FieldKind = Literal["stick", "plate", "ball"]


def voter_tensor(kind: FieldKind, d: int) -> np.ndarray:
    if kind == "stick":
        return np.diag([1.0] + [0.0] * (d - 1))
    if kind == "plate":
        if d < 3:
            raise InvalidInputError("plate fields need d >= 3")
        return np.diag([1.0] * (d - 1) + [0.0])
    if kind == "ball":
        return np.eye(d)
    raise InvalidInputError(f"unknown field kind {kind!r}")


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice ``[-half_extent, half_extent]^d`` with ``steps`` nodes per side.

    The origin, where the voter sits, is left out.
    """

    half_extent: float
    steps: int = 21
    plane: bool = False

    def sites(self, d: int) -> np.ndarray:
        axis = np.linspace(-self.half_extent, self.half_extent, self.steps)
        dims = 2 if self.plane else d
        mesh = np.stack(np.meshgrid(*([axis] * dims), indexing="ij"), axis=-1).reshape(-1, dims)
        if dims < d:
            mesh = np.hstack([mesh, np.zeros((mesh.shape[0], d - dims))])
        keep = np.linalg.norm(mesh, axis=1) > 1e-12
        return mesh[keep]


@dataclass
class FieldGrid:
    kind: str
    method: str
    sites: np.ndarray
    tensors: np.ndarray
    values: np.ndarray = field(init=False)
    vectors: np.ndarray = field(init=False)

    def __post_init__(self):
        vals, vecs = [], []
        for T in self.tensors:
            sal = tc.decompose(T)
            vals.append(sal.values)
            vecs.append(sal.vectors)
        self.values = np.array(vals)
        self.vectors = np.array(vecs)

    def orientation(self) -> np.ndarray:
        """Distinguished direction per site.

        Stick fields: the normal (top eigenvector). Plate and ball fields:
        the tangent (bottom eigenvector), which is the only non-degenerate
        one there.
        """
        k = 0 if self.kind == "stick" else -1
        return self.vectors[:, :, k]

    def write_csv(self, fh) -> None:
        d = self.sites.shape[1]
        coords = ["x", "y", "z"][:d] if d <= 3 else [f"x{k}" for k in range(d)]
        header = coords + [f"t{a}{b}" for a in range(d) for b in range(d)]
        header += [f"lambda{k + 1}" for k in range(d)] + [f"e1_{k}" for k in range(d)]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, T, lam, V in zip(self.sites, self.tensors, self.values, self.vectors):
            row = list(x) + list(T.reshape(-1)) + list(lam) + list(V[:, 0])
            w.writerow([f"{v:.12g}" for v in row])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)


def generate_field(kind: FieldKind, d: int, scale: tc.Scale, grid: GridSpec,
                   method: Literal["closed_form", "discrete"] = "closed_form",
                   sampling: DirectionSampling | None = None,
                   cutoff45: bool = False, symmetric: bool = False) -> FieldGrid:
    """Votes cast by a voter at the origin onto every lattice site.

    ``symmetric`` selects the symmetric closed form; it has no effect on the
    discrete method, whose votes are symmetric by construction.
    """
    vote = tc.cftv_vote_symmetric if symmetric else tc.cftv_vote
    K = voter_tensor(kind, d)
    origin = np.zeros(d)
    sites = grid.sites(d)
    out = np.empty((sites.shape[0], d, d))
    for m, x in enumerate(sites):
        if method == "closed_form":
            out[m] = vote(x, origin, K, scale, cutoff45=cutoff45)
        elif method == "discrete":
            out[m] = discrete_vote(x, origin, K, scale, sampling)
            if cutoff45 and tc._outside_45(x, origin, K):
                out[m] = 0.0
        else:
            raise InvalidInputError(f"unknown method {method!r}")
    return FieldGrid(kind=kind, method=method, sites=sites, tensors=out)


def angular_deviation_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise angle between lines spanned by ``a`` and ``b``, in [0, 90]."""
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    cos = np.clip(np.abs(np.sum(a * b, axis=-1)), 0.0, 1.0)
    return np.degrees(np.arccos(cos))
