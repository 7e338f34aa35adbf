"""Hot loops over neighbor graphs.

Neighbor graphs are CSR pairs ``(indptr, indices)``: the voters of site ``i``
are ``indices[indptr[i]:indptr[i + 1]]``, in ascending order.

Each kernel comes as ``<name>_nb`` (explicit loops, numba-compiled when
available) and ``<name>_np`` (vectorized numpy, chunked over sites to bound
memory). The unsuffixed name is whichever backend :mod:`tensorvote._accel`
selected. Both paths reduce over voters in index order.

Closed forms used below, with ``u`` the unit vector from voter to receiver,
``a = K u``, ``s = u'K u``, ``b = B u``, ``t = u'B u``::

    asymmetric  c R K (I - P/2) R       = c (K - 1.5 a u' - 2 u a' + 3 s u u')
    symmetric   c R (K - (PK+KP)/4) R   = c (K - 1.75 (u a' + a u') + 3 s u u')
    inverse     c^-1 R (I + P) B R      = c^-1 (B - 3 u b' - 2 b u' + 6 t u u')
"""
from __future__ import annotations

import numpy as np

from ._accel import BACKEND, njit, pick

ASYM, SYM, INV = 0, 1, 2
_CHUNK_EDGES = 1 << 18


# ---------------------------------------------------------------- single votes

@njit(cache=True, nogil=True, inline="always")
def vote_scratch_nb(out, u, Ku, X, i, j, Ks, sigma_d, kind):
    """Vote of voter ``X[j]`` carrying ``Ks[j]`` at receiver ``X[i]``, into ``out``.

    ``u`` and ``Ku`` are length-d scratch. Returns the proximity weight ``c``
    (``1 / c`` for inverse votes). Indexing the stacked arrays directly
    avoids building a view per edge.
    """
    d = X.shape[1]
    dist2 = 0.0
    for a in range(d):
        diff = X[i, a] - X[j, a]
        u[a] = diff
        dist2 += diff * diff
    norm = np.sqrt(dist2)
    for a in range(d):
        u[a] /= norm
    s = 0.0
    for a in range(d):
        acc = 0.0
        for b in range(d):
            acc += Ks[j, a, b] * u[b]
        Ku[a] = acc
        s += u[a] * acc
    if kind == INV:
        c = np.exp(dist2 / sigma_d)
        for a in range(d):
            for b in range(d):
                out[a, b] = c * (Ks[j, a, b] - 3.0 * u[a] * Ku[b] - 2.0 * Ku[a] * u[b]
                                 + 6.0 * s * u[a] * u[b])
    elif kind == SYM:
        c = np.exp(-dist2 / sigma_d)
        for a in range(d):
            for b in range(d):
                out[a, b] = c * (Ks[j, a, b] - 1.75 * (u[a] * Ku[b] + Ku[a] * u[b])
                                 + 3.0 * s * u[a] * u[b])
    else:
        c = np.exp(-dist2 / sigma_d)
        for a in range(d):
            for b in range(d):
                out[a, b] = c * (Ks[j, a, b] - 1.5 * Ku[a] * u[b] - 2.0 * u[a] * Ku[b]
                                 + 3.0 * s * u[a] * u[b])
    return c


@njit(cache=True, nogil=True)
def vote_into_nb(out, xi, xj, K, sigma_d, kind):
    d = xi.shape[0]
    X = np.empty((2, d))
    X[0] = xi
    X[1] = xj
    Ks = np.empty((2, d, d))
    Ks[1] = K
    return vote_scratch_nb(out, np.empty(d), np.empty(d), X, 0, 1, Ks, sigma_d, kind)


def edge_votes_np(xi, xj, K, sigma_d, kind):
    """Votes for stacked edges: ``xi``, ``xj`` are (E, d), ``K`` is (E, d, d)."""
    diff = xi - xj
    dist2 = np.einsum("ea,ea->e", diff, diff)
    u = diff / np.sqrt(dist2)[:, None]
    Ku = np.einsum("eab,eb->ea", K, u)
    s = np.einsum("ea,ea->e", u, Ku)
    uu = u[:, :, None] * u[:, None, :]
    uKu = u[:, :, None] * Ku[:, None, :]
    Kuu = Ku[:, :, None] * u[:, None, :]
    if kind == INV:
        c = np.exp(dist2 / sigma_d)
        S = K - 3.0 * uKu - 2.0 * Kuu + 6.0 * s[:, None, None] * uu
    elif kind == SYM:
        c = np.exp(-dist2 / sigma_d)
        S = K - 1.75 * (uKu + Kuu) + 3.0 * s[:, None, None] * uu
    else:
        c = np.exp(-dist2 / sigma_d)
        S = K - 1.5 * Kuu - 2.0 * uKu + 3.0 * s[:, None, None] * uu
    return S * c[:, None, None], c


@njit(cache=True, nogil=True)
def psd_part_nb(S):
    """``sqrt(S S')``: the left-singular PSD representative of ``S``."""
    U, sv, _ = np.linalg.svd(S)
    d = S.shape[0]
    out = np.zeros((d, d))
    for k in range(d):
        for a in range(d):
            for b in range(d):
                out[a, b] += sv[k] * U[a, k] * U[b, k]
    return out


def psd_part_np(S):
    U, sv, _ = np.linalg.svd(S)
    return np.einsum("...ak,...k,...bk->...ab", U, sv, U)


# ---------------------------------------------------------- structure tensors

@njit(cache=True, nogil=True)
def accumulate_nb(points, tensors, indptr, indices, sigma_d, kind, psd):
    n, d = points.shape
    out = np.zeros((n, d, d))
    S = np.empty((d, d))
    u = np.empty(d)
    Ku = np.empty(d)
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            vote_scratch_nb(S, u, Ku, points, i, j, tensors, sigma_d, kind)
            if psd:
                out[i] += psd_part_nb(S)
            else:
                for a in range(d):
                    for b in range(d):
                        out[i, a, b] += S[a, b]
    return out


def _site_chunks(indptr):
    n = indptr.shape[0] - 1
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and indptr[stop + 1] - indptr[start] <= _CHUNK_EDGES:
            stop += 1
        yield start, stop
        start = stop


def _segment_sum(values, local_ptr):
    """Sum ``values`` over CSR segments; empty segments give zeros."""
    nseg = local_ptr.shape[0] - 1
    out = np.zeros((nseg,) + values.shape[1:])
    counts = np.diff(local_ptr)
    nz = counts > 0
    if values.shape[0]:
        out[nz] = np.add.reduceat(values, local_ptr[:-1][nz], axis=0)
    return out


def accumulate_np(points, tensors, indptr, indices, sigma_d, kind, psd):
    n, d = points.shape
    out = np.zeros((n, d, d))
    for lo, hi in _site_chunks(indptr):
        e0, e1 = indptr[lo], indptr[hi]
        if e0 == e1:
            continue
        dst = np.repeat(np.arange(lo, hi), np.diff(indptr[lo:hi + 1]))
        src = indices[e0:e1]
        S, _ = edge_votes_np(points[dst], points[src], tensors[src], sigma_d, kind)
        if psd:
            S = psd_part_np(S)
        out[lo:hi] = _segment_sum(S, indptr[lo:hi + 1] - e0)
    return out


# ------------------------------------------------------------------- MRFTV

@njit(cache=True, nogil=True)
def _normalize_eigs_nb(K, floor):
    lam, V = np.linalg.eigh(0.5 * (K + K.T))
    top = lam.max()
    scale = 1.0 / top if top > 1.0 else 1.0
    d = K.shape[0]
    out = np.zeros((d, d))
    for k in range(d):
        lk = lam[k] * scale
        if lk < floor:
            lk = floor
        for a in range(d):
            for b in range(d):
                out[a, b] += lk * V[a, k] * V[b, k]
    return out


@njit(cache=True, nogil=True)
def _smoothness_operator_nb(L, u, weight):
    """Add ``weight * M @ M`` to ``L``, with ``M(K) = K - (PK + KP)/4``
    written on row-major ``vec(K)``."""
    d = u.shape[0]
    m = d * d
    M = np.zeros((m, m))
    for a in range(d):
        for b in range(d):
            row = a * d + b
            M[row, row] += 1.0
            for k in range(d):
                # (P K)[a, b] = sum_k P[a, k] K[k, b]
                M[row, k * d + b] -= 0.25 * u[a] * u[k]
                # (K P)[a, b] = sum_k K[a, k] P[k, b]
                M[row, a * d + k] -= 0.25 * u[k] * u[b]
    L += weight * (M @ M)


@njit(cache=True, nogil=True)
def mrf_site_update_nb(i, points, K, Kt, indptr, indices, sigma_d, g, exact, recompute):
    """Minimizer of the MRF energy over ``K[i]`` with every other site fixed."""
    d = points.shape[1]
    m = d * d
    rhs = Kt[i].copy()
    L = np.zeros((m, m))
    n_i = indptr[i + 1] - indptr[i]
    S = np.empty((d, d))
    u = np.empty(d)
    Ku = np.empty(d)
    right = np.zeros((d, d))
    for e in range(indptr[i], indptr[i + 1]):
        j = indices[e]
        src = K if recompute else Kt
        c = vote_scratch_nb(S, u, Ku, points, i, j, src, sigma_d, SYM)
        if not recompute:
            rhs += g * S
            continue
        # u now holds the unit direction from voter to receiver
        rhs += 2.0 * g * S
        if exact:
            _smoothness_operator_nb(L, u, g * c * c)
        else:
            for a in range(d):
                for b in range(d):
                    right[a, b] -= 0.75 * g * c * c * u[a] * u[b]
                right[a, a] += g * c * c
    if not recompute:
        return rhs / (1.0 + g * n_i)
    if exact:
        for k in range(m):
            L[k, k] += 1.0 + g * n_i
        sol = np.linalg.solve(L, rhs.reshape(m))
        out = sol.reshape((d, d))
    else:
        for a in range(d):
            right[a, a] += 1.0 + g * n_i
        out = rhs @ np.linalg.inv(right)
    return 0.5 * (out + out.T)


@njit(cache=True, nogil=True)
def mrf_sweep_nb(points, K, Kt, indptr, indices, sigma_d, g, q, exact, recompute, order, floor):
    for i in order:
        Kstar = mrf_site_update_nb(i, points, K, Kt, indptr, indices, sigma_d, g,
                                   exact, recompute)
        K[i] = (1.0 - q) * K[i] + q * Kstar
    for i in range(K.shape[0]):
        K[i] = _normalize_eigs_nb(K[i], floor)


@njit(cache=True, nogil=True)
def mrf_energy_nb(points, K, Kt, indptr, indices, sigma_d, g, recompute):
    n, d = points.shape
    data = 0.0
    smooth = 0.0
    S = np.empty((d, d))
    u = np.empty(d)
    Ku = np.empty(d)
    for i in range(n):
        for a in range(d):
            for b in range(d):
                diff = K[i, a, b] - Kt[i, a, b]
                data += diff * diff
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            vote_scratch_nb(S, u, Ku, points, i, j, K if recompute else Kt, sigma_d, SYM)
            for a in range(d):
                for b in range(d):
                    diff = K[i, a, b] - S[a, b]
                    smooth += diff * diff
    return data + g * smooth


def _smoothness_operator_np(u, weight):
    d = u.shape[-1]
    eye = np.eye(d)
    P = u[:, :, None] * u[:, None, :]
    # row-major vec: vec(PK) = (P kron I) vec(K), vec(KP) = (I kron P) vec(K)
    M = np.eye(d * d) - 0.25 * (np.einsum("eac,bf->eabcf", P, eye)
                                 + np.einsum("ac,efb->eabcf", eye, P)).reshape(-1, d * d, d * d)
    return np.einsum("e,eij,ejk->ik", weight, M, M)


def mrf_site_update_np(i, points, K, Kt, indptr, indices, sigma_d, g, exact, recompute):
    d = points.shape[1]
    nbr = indices[indptr[i]:indptr[i + 1]]
    n_i = nbr.shape[0]
    if n_i == 0:
        return Kt[i].copy()
    xi = np.broadcast_to(points[i], (n_i, d))
    src = K[nbr] if recompute else Kt[nbr]
    S, c = edge_votes_np(xi, points[nbr], src, sigma_d, SYM)
    if not recompute:
        return (Kt[i] + g * S.sum(axis=0)) / (1.0 + g * n_i)
    rhs = Kt[i] + 2.0 * g * S.sum(axis=0)
    diff = xi - points[nbr]
    u = diff / np.linalg.norm(diff, axis=1)[:, None]
    w = g * c * c
    if exact:
        L = _smoothness_operator_np(u, w) + (1.0 + g * n_i) * np.eye(d * d)
        out = np.linalg.solve(L, rhs.reshape(-1)).reshape(d, d)
    else:
        right = (1.0 + g * n_i + w.sum()) * np.eye(d) - 0.75 * np.einsum("e,ea,eb->ab", w, u, u)
        out = rhs @ np.linalg.inv(right)
    return 0.5 * (out + out.T)


def _normalize_eigs_np(K, floor):
    lam, V = np.linalg.eigh(0.5 * (K + np.swapaxes(K, -1, -2)))
    top = lam.max(axis=-1, keepdims=True)
    lam = np.where(top > 1.0, lam / top, lam)
    lam = np.maximum(lam, floor)
    return np.einsum("...ak,...k,...bk->...ab", V, lam, V)


def mrf_sweep_np(points, K, Kt, indptr, indices, sigma_d, g, q, exact, recompute, order, floor):
    for i in order:
        Kstar = mrf_site_update_np(i, points, K, Kt, indptr, indices, sigma_d, g, exact, recompute)
        K[i] = (1.0 - q) * K[i] + q * Kstar
    K[:] = _normalize_eigs_np(K, floor)


def mrf_energy_np(points, K, Kt, indptr, indices, sigma_d, g, recompute):
    data = float(np.sum((K - Kt) ** 2))
    src = K if recompute else Kt
    smooth = 0.0
    for lo, hi in _site_chunks(indptr):
        e0, e1 = indptr[lo], indptr[hi]
        if e0 == e1:
            continue
        dst = np.repeat(np.arange(lo, hi), np.diff(indptr[lo:hi + 1]))
        nbr = indices[e0:e1]
        S, _ = edge_votes_np(points[dst], points[nbr], src[nbr], sigma_d, SYM)
        smooth += float(np.sum((K[dst] - S) ** 2))
    return data + g * smooth


# -------------------------------------------------------------------- EMTV

@njit(cache=True, nogil=True)
def inverse_vote_sums_nb(points, kinv, w, indptr, indices, sigma_d):
    """Per site: ``sum_j w_j S'_ij`` and ``sum_j w_j``."""
    n, d = points.shape
    acc = np.zeros((n, d, d))
    wsum = np.zeros(n)
    S = np.empty((d, d))
    u = np.empty(d)
    Ku = np.empty(d)
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            wj = w[j]
            if wj == 0.0:
                continue
            vote_scratch_nb(S, u, Ku, points, i, j, kinv, sigma_d, INV)
            for a in range(d):
                for b in range(d):
                    acc[i, a, b] += wj * S[a, b]
            wsum[i] += wj
    return acc, wsum


@njit(cache=True, nogil=True)
def inverse_residual_sum_nb(points, kinv, w, indptr, indices, sigma_d):
    """``sum_i sum_j ||K_i^-1 - S'_ij||_F^2 w_i w_j``."""
    n, d = points.shape
    total = 0.0
    S = np.empty((d, d))
    u = np.empty(d)
    Ku = np.empty(d)
    for i in range(n):
        if w[i] == 0.0:
            continue
        row = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            if w[j] == 0.0:
                continue
            vote_scratch_nb(S, u, Ku, points, i, j, kinv, sigma_d, INV)
            r = 0.0
            for a in range(d):
                for b in range(d):
                    diff = kinv[i, a, b] - S[a, b]
                    r += diff * diff
            row += r * w[j]
        total += row * w[i]
    return total


def inverse_vote_sums_np(points, kinv, w, indptr, indices, sigma_d):
    n, d = points.shape
    acc = np.zeros((n, d, d))
    wsum = np.zeros(n)
    for lo, hi in _site_chunks(indptr):
        e0, e1 = indptr[lo], indptr[hi]
        if e0 == e1:
            continue
        local = indptr[lo:hi + 1] - e0
        dst = np.repeat(np.arange(lo, hi), np.diff(local))
        src = indices[e0:e1]
        S, _ = edge_votes_np(points[dst], points[src], kinv[src], sigma_d, INV)
        ws = w[src]
        acc[lo:hi] = _segment_sum(S * ws[:, None, None], local)
        wsum[lo:hi] = _segment_sum(ws, local)
    return acc, wsum


def inverse_residual_sum_np(points, kinv, w, indptr, indices, sigma_d):
    total = 0.0
    for lo, hi in _site_chunks(indptr):
        e0, e1 = indptr[lo], indptr[hi]
        if e0 == e1:
            continue
        local = indptr[lo:hi + 1] - e0
        dst = np.repeat(np.arange(lo, hi), np.diff(local))
        src = indices[e0:e1]
        S, _ = edge_votes_np(points[dst], points[src], kinv[src], sigma_d, INV)
        r = np.sum((kinv[dst] - S) ** 2, axis=(1, 2)) * w[src]
        total += float(np.sum(_segment_sum(r, local) * w[lo:hi]))
    return total


accumulate = pick(accumulate_nb, accumulate_np)
mrf_sweep = pick(mrf_sweep_nb, mrf_sweep_np)
mrf_energy = pick(mrf_energy_nb, mrf_energy_np)
mrf_site_update = pick(mrf_site_update_nb, mrf_site_update_np)
inverse_vote_sums = pick(inverse_vote_sums_nb, inverse_vote_sums_np)
inverse_residual_sum = pick(inverse_residual_sum_nb, inverse_residual_sum_np)

__all__ = [
    "ASYM", "SYM", "INV", "BACKEND",
    "accumulate", "mrf_sweep", "mrf_energy", "mrf_site_update",
    "inverse_vote_sums", "inverse_residual_sum", "edge_votes_np", "psd_part_np",
]
