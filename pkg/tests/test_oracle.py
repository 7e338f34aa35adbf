from __future__ import annotations

import csv
import io

import numpy as np
import pytest

from tensorvote import oracle
from tensorvote import tensors as tc
from tensorvote.errors import DegenerateInputError, InvalidInputError


def test_half_circle_frame():
    m = oracle.half_circle(720)
    np.testing.assert_allclose(m.T @ m, 360 * np.eye(2), atol=1e-9)


def test_icosphere_is_a_tight_frame():
    m = oracle.icosphere_hemisphere(4)
    assert m.shape == (1281, 3)
    np.testing.assert_allclose(np.linalg.norm(m, axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(m.T @ m, (m.shape[0] / 3) * np.eye(3), atol=1e-9)
    # no antipodal duplicates
    assert np.max(np.abs(m @ m.T - np.eye(len(m)))) < 1.0 - 1e-9


@pytest.mark.parametrize("d", [2, 3])
def test_stick_decomposition_reconstructs(rng, d):
    K = tc.random_psd(rng, d)
    n, tau2 = oracle.stick_decomposition(K)
    np.testing.assert_allclose(np.einsum("m,ma,mb->ab", tau2, n, n), K, atol=1e-9)
    assert np.all(tau2 >= 0)


def test_single_stick_is_one_term():
    n = np.array([0.6, 0.8])
    xi, xj, s = np.array([0.5, -0.3]), np.zeros(2), tc.Scale(1.0)
    got = oracle.discrete_vote(xi, xj, np.outer(n, n), s)
    v = tc.stick_vote(xi, xj, n, 1.0)
    np.testing.assert_allclose(got, tc.stick_decay(xi, xj, n, s) * np.outer(v, v), atol=1e-12)


def test_ball_vote_is_radial_2d(rng):
    s = tc.Scale(1.0)
    for _ in range(20):
        xi = rng.standard_normal(2)
        sal = tc.decompose(oracle.discrete_vote(xi, np.zeros(2), np.eye(2), s))
        # the field line (tangent, weakest eigenvector) points along r
        tangent = sal.vectors[:, -1]
        assert abs(tangent @ xi / np.linalg.norm(xi)) == pytest.approx(1.0, abs=1e-6)


def test_refinement_converges():
    K = np.array([[1.0, 0.3], [0.3, 0.4]])
    xi, xj, s = np.array([0.4, 0.3]), np.zeros(2), tc.Scale(1.0)
    a = oracle.discrete_vote(xi, xj, K, s, oracle.DirectionSampling(720))
    b = oracle.discrete_vote(xi, xj, K, s, oracle.DirectionSampling(1440))
    assert np.linalg.norm(a - b) < 1e-3


def test_direction_agreement_2d(rng):
    s = tc.Scale(1.0)
    dots = []
    while len(dots) < 200:
        K = tc.random_psd(rng, 2)
        lam = np.linalg.eigvalsh(K)
        if lam[1] / lam[0] < 1.5:
            continue
        xi = rng.normal(scale=0.7, size=2)
        a = tc.decompose(tc.cftv_vote(xi, np.zeros(2), K, s)).normal
        b = tc.decompose(oracle.discrete_vote(xi, np.zeros(2), K, s)).normal
        dots.append(abs(a @ b))
    assert np.mean(dots) >= 0.95


def test_coarse_sampling_warns():
    with pytest.warns(RuntimeWarning):
        oracle.DirectionSampling(samples=8)


def test_bad_sampling():
    with pytest.raises(InvalidInputError):
        oracle.DirectionSampling(samples=0)


def test_coincident():
    with pytest.raises(DegenerateInputError):
        oracle.discrete_vote([0, 0], [0, 0], np.eye(2), tc.Scale(1.0))


def test_unsupported_dimension():
    with pytest.raises(InvalidInputError):
        oracle.discrete_vote(np.ones(4), np.zeros(4), np.eye(4), tc.Scale(1.0))


def test_grid_excludes_origin_and_is_symmetric():
    sites = oracle.GridSpec(1.0, 5).sites(2)
    assert len(sites) == 24
    assert not np.any(np.all(sites == 0, axis=1))
    assert {tuple(p) for p in sites} == {tuple(-p) for p in sites}
    plane = oracle.GridSpec(1.0, 5, plane=True).sites(3)
    assert plane.shape == (24, 3) and not plane[:, 2].any()


@pytest.mark.parametrize("d", [2, 3])
def test_stick_field_matches_osculating_arc(d):
    s = tc.Scale(1.0)
    grid = oracle.GridSpec(1.5, 9, plane=(d == 3))
    closed = oracle.generate_field("stick", d, s, grid)
    discrete = oracle.generate_field("stick", d, s, grid, method="discrete")
    n = np.eye(d)[0]
    for x, e_c, e_d in zip(closed.sites, closed.orientation(), discrete.orientation()):
        if abs(x @ n) / np.linalg.norm(x) > 1 - 1e-12:
            continue  # on the voter's normal axis the vote vanishes
        v = tc.stick_vote(x, np.zeros(d), n, 1.0)
        assert abs(e_c @ v) == pytest.approx(1.0, abs=1e-10)
        assert abs(e_d @ v) == pytest.approx(1.0, abs=1e-10)


def test_ball_field_3d_within_five_degrees():
    s = tc.Scale(1.0)
    grid = oracle.GridSpec(1.5, 7)
    a = oracle.generate_field("ball", 3, s, grid)
    b = oracle.generate_field("ball", 3, s, grid, method="discrete")
    assert oracle.angular_deviation_deg(a.orientation(), b.orientation()).max() <= 5.0


def test_plate_needs_3d():
    with pytest.raises(InvalidInputError):
        oracle.generate_field("plate", 2, tc.Scale(1.0), oracle.GridSpec(1.0, 3))


def test_symmetric_field_is_symmetric():
    f = oracle.generate_field("plate", 3, tc.Scale(1.0), oracle.GridSpec(1.0, 3), symmetric=True)
    np.testing.assert_allclose(f.tensors, np.swapaxes(f.tensors, 1, 2), atol=0)


def test_cutoff45_zeroes_cone():
    f = oracle.generate_field("stick", 2, tc.Scale(1.0), oracle.GridSpec(1.0, 5), cutoff45=True)
    for x, T in zip(f.sites, f.tensors):
        if abs(x[0]) / np.linalg.norm(x) > np.sqrt(0.5) + 1e-12:
            assert not T.any()


def test_csv_layout():
    f = oracle.generate_field("ball", 3, tc.Scale(1.0), oracle.GridSpec(1.0, 3))
    buf = io.StringIO()
    f.write_csv(buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["x", "y", "z", "t00", "t01", "t02", "t10", "t11", "t12", "t20", "t21", "t22",
                       "lambda1", "lambda2", "lambda3", "e1_0", "e1_1", "e1_2"]
    assert len(rows) == 1 + 26
    assert all(len(r) == 18 for r in rows)
