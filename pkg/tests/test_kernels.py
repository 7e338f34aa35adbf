"""Both kernel backends against each other and against per-pair reference code."""
from __future__ import annotations

import numpy as np
import pytest

from tensorvote import kernels
from tensorvote import tensors as tc
from tensorvote._accel import BACKEND, HAVE_NUMBA
from tensorvote.spatial import PointSet, build


def _instance(rng, n=60, d=3, sigma_d=0.3):
    pts = rng.uniform(-1, 1, size=(n, d))
    K = np.stack([tc.random_psd(rng, d) for _ in range(n)])
    K /= np.linalg.eigvalsh(K)[:, -1][:, None, None]
    idx = build(PointSet(pts), tc.Scale(sigma_d).radius)
    return pts, K, idx


def test_backend_reported():
    assert BACKEND in ("numba", "numpy")
    if HAVE_NUMBA:
        assert BACKEND == "numba"


@pytest.mark.parametrize("kind", [kernels.ASYM, kernels.SYM, kernels.INV])
def test_edge_votes_match_single_votes(rng, kind):
    pts, K, _ = _instance(rng, n=10)
    s = tc.Scale(0.3)
    ref = {kernels.ASYM: tc.cftv_vote, kernels.SYM: tc.cftv_vote_symmetric,
           kernels.INV: tc.cftv_vote_inverse}[kind]
    S, c = kernels.edge_votes_np(pts[:5], pts[5:], K[5:], s.sigma_d, kind)
    for e in range(5):
        np.testing.assert_allclose(S[e], ref(pts[e], pts[5 + e], K[5 + e], s), rtol=1e-12, atol=1e-14)
        out = np.empty((3, 3))
        kernels.vote_into_nb(out, pts[e], pts[5 + e], K[5 + e], s.sigma_d, kind)
        np.testing.assert_allclose(out, S[e], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("kind", [kernels.ASYM, kernels.SYM])
@pytest.mark.parametrize("psd", [True, False])
def test_accumulate_parity(rng, kind, psd):
    pts, K, idx = _instance(rng)
    a = kernels.accumulate_nb(pts, K, idx.indptr, idx.indices, 0.3, kind, psd)
    b = kernels.accumulate_np(pts, K, idx.indptr, idx.indices, 0.3, kind, psd)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_accumulate_matches_reference(rng):
    pts, K, idx = _instance(rng, n=30)
    got = kernels.accumulate(pts, K, idx.indptr, idx.indices, 0.3, kernels.ASYM, True)
    s = tc.Scale(0.3)
    for i in range(len(pts)):
        nb = [(pts[j], K[j]) for j in idx.neighbors(i)]
        if not nb:
            continue
        np.testing.assert_allclose(got[i], tc.accumulate(pts[i], nb, s), rtol=1e-10, atol=1e-12)


def test_psd_part_parity(rng):
    S = rng.standard_normal((20, 4, 4))
    b = kernels.psd_part_np(S)
    for k in range(20):
        np.testing.assert_allclose(kernels.psd_part_nb(S[k]), b[k], atol=1e-12)
        np.testing.assert_allclose(b[k] @ b[k], S[k] @ S[k].T, atol=1e-10)


@pytest.mark.parametrize("exact", [True, False])
@pytest.mark.parametrize("recompute", [True, False])
def test_mrf_parity(rng, exact, recompute):
    pts, K, idx = _instance(rng)
    Kt = K.copy()
    args = (idx.indptr, idx.indices, 0.3, 1.0)
    for i in (0, 7, 30):
        np.testing.assert_allclose(
            kernels.mrf_site_update_nb(i, pts, K, Kt, *args, exact, recompute),
            kernels.mrf_site_update_np(i, pts, K, Kt, *args, exact, recompute), rtol=1e-10, atol=1e-12)
    Ka, Kb = K.copy(), K.copy()
    order = np.arange(len(pts), dtype=np.int64)
    kernels.mrf_sweep_nb(pts, Ka, Kt, *args, 1.5, exact, recompute, order, 1e-12)
    kernels.mrf_sweep_np(pts, Kb, Kt, *args, 1.5, exact, recompute, order, 1e-12)
    np.testing.assert_allclose(Ka, Kb, rtol=1e-9, atol=1e-11)
    ea = kernels.mrf_energy_nb(pts, Ka, Kt, *args, recompute)
    eb = kernels.mrf_energy_np(pts, Ka, Kt, *args, recompute)
    assert ea == pytest.approx(eb, rel=1e-12)


def test_inverse_parity(rng):
    pts, K, idx = _instance(rng)
    w = rng.uniform(size=len(pts))
    a = kernels.inverse_vote_sums_nb(pts, K, w, idx.indptr, idx.indices, 0.3)
    b = kernels.inverse_vote_sums_np(pts, K, w, idx.indptr, idx.indices, 0.3)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-10)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12)
    ra = kernels.inverse_residual_sum_nb(pts, K, w, idx.indptr, idx.indices, 0.3)
    rb = kernels.inverse_residual_sum_np(pts, K, w, idx.indptr, idx.indices, 0.3)
    assert ra == pytest.approx(rb, rel=1e-10)


def test_inverse_sums_reference(rng):
    pts, K, idx = _instance(rng, n=25)
    w = rng.uniform(size=len(pts))
    acc, wsum = kernels.inverse_vote_sums(pts, K, w, idx.indptr, idx.indices, 0.3)
    s = tc.Scale(0.3)
    for i in range(len(pts)):
        nb = idx.neighbors(i)
        ref = sum((w[j] * tc.cftv_vote_inverse(pts[i], pts[j], K[j], s) for j in nb), np.zeros((3, 3)))
        np.testing.assert_allclose(acc[i], ref, rtol=1e-10, atol=1e-12)
        assert wsum[i] == pytest.approx(w[nb].sum())
