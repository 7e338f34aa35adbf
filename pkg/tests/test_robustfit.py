from __future__ import annotations

import math

import numpy as np
import pytest

from tensorvote import datagen
from tensorvote import robustfit as rf
from tensorvote.errors import DegenerateInputError, DegenerateSupportError, InvalidInputError, UnderdeterminedError
from tensorvote.spatial import PointSet


def _frob_up_to_sign(A, B):
    return min(np.linalg.norm(A - B), np.linalg.norm(A + B))


class TestTls:
    def test_axis_aligned(self):
        pts = np.column_stack([np.linspace(-1, 1, 9), np.zeros(9)])
        np.testing.assert_allclose(np.abs(rf.tls_fit(PointSet(pts))), [0, 1], atol=1e-15)

    def test_two_points(self):
        v = rf.tls_fit(np.array([[1.0, 2.0], [-2.0, -4.0]]))
        assert abs(v @ [1.0, 2.0]) < 1e-12

    def test_matches_svd(self, rng):
        x = rng.standard_normal((50, 5))
        v = rf.tls_fit(x)
        ref = np.linalg.svd(x)[2][-1]
        assert abs(v @ ref) == pytest.approx(1.0, abs=1e-12)

    def test_weighted(self, rng):
        x = rng.standard_normal((30, 3))
        w = rng.uniform(size=30)
        v = rf.smallest_eigenvector(x, w)
        ref = np.linalg.svd(x * np.sqrt(w)[:, None])[2][-1]
        assert abs(v @ ref) == pytest.approx(1.0, abs=1e-12)

    def test_underdetermined(self):
        with pytest.raises(UnderdeterminedError):
            rf.tls_fit(np.ones((1, 3)))


class TestRansac:
    def test_no_outliers_keeps_everything(self):
        inst = datagen.gen_line(datagen.LineInstanceSpec(noise_sd=0.01, seed=3))
        res = rf.ransac_fit(inst.points, 0.05, seed=1)
        assert res.inliers.all()
        assert datagen.angular_error_deg(res.v, inst.normal) < 1.0

    def test_reproducible(self):
        inst = datagen.gen_line(datagen.LineInstanceSpec(oi_ratio=2.0, seed=3))
        a, b = rf.ransac_fit(inst.points, 0.2, seed=9), rf.ransac_fit(inst.points, 0.2, seed=9)
        np.testing.assert_array_equal(a.v, b.v)
        assert a.trials == b.trials

    def test_finds_line_among_outliers(self):
        inst = datagen.gen_line(datagen.LineInstanceSpec(oi_ratio=5.0, noise_sd=0.01, seed=3))
        res = rf.ransac_fit(inst.points, 0.03, seed=2)
        assert datagen.angular_error_deg(res.v, inst.normal) < 1.0

    def test_trial_budget(self):
        assert rf._required_trials(1.0, 3, 0.99) == 1
        assert rf._required_trials(0.0, 3, 0.99) == rf.MAX_RANSAC_TRIALS
        assert rf._required_trials(0.5, 1, 0.99) == math.ceil(math.log(0.01) / math.log(0.5))

    @pytest.mark.parametrize("kw", [{"inlier_scale": 0.0}, {"inlier_scale": 1.0, "confidence": 1.0}])
    def test_bad_args(self, kw):
        with pytest.raises(InvalidInputError):
            rf.ransac_fit(np.ones((5, 2)), **kw)

    def test_all_degenerate(self):
        with pytest.raises(DegenerateInputError):
            rf.ransac_fit(np.zeros((5, 3)), 0.1)


class TestTwoView:
    def test_epipolar_identity(self, rng):
        F = rng.standard_normal((3, 3))
        x1, x2 = rng.uniform(0, 640, (20, 2)), rng.uniform(0, 480, (20, 2))
        h1 = np.column_stack([x1, np.ones(20)])
        h2 = np.column_stack([x2, np.ones(20)])
        direct = np.einsum("ia,ab,ib->i", h2, F, h1)
        via_design = rf.design_vectors(x1, x2) @ rf.F_to_h(F)
        np.testing.assert_allclose(via_design, direct, rtol=1e-12, atol=1e-12 * np.abs(direct).max())

    def test_design_vector_layout(self):
        U = rf.design_vectors(np.array([[2.0, 3.0]]), np.array([[5.0, 7.0]]))
        np.testing.assert_array_equal(U[0], [10, 14, 2, 15, 21, 3, 5, 7, 1])
        F = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(rf.F_to_h(F), [0, 3, 6, 1, 4, 7, 2, 5, 8])
        np.testing.assert_array_equal(rf.h_to_F(rf.F_to_h(F)), F)

    def test_hartley_identity_on_normalized_set(self):
        x = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
        np.testing.assert_allclose(rf.hartley_transform(x), np.eye(3), atol=1e-15)

    def test_hartley_postconditions(self, rng):
        x1, x2 = rng.uniform(0, 640, (40, 2)), rng.uniform(0, 480, (40, 2))
        n1, n2, T1, T2 = rf.hartley_normalize(x1, x2)
        for n in (n1, n2):
            np.testing.assert_allclose(n.mean(axis=0), 0.0, atol=1e-12)
            assert np.mean(np.linalg.norm(n, axis=1)) == pytest.approx(math.sqrt(2.0))
        back = np.linalg.solve(T1, np.column_stack([n1, np.ones(40)]).T).T
        np.testing.assert_allclose(back[:, :2], x1, atol=1e-9)

    @pytest.mark.parametrize("x", [np.array([[1.0, 2.0]]), np.array([[1.0, 2.0], [1.0, 2.0]])])
    def test_hartley_degenerate(self, x):
        with pytest.raises(DegenerateInputError):
            rf.hartley_transform(x)

    def test_homogeneous_input(self):
        x = np.array([[1.0, 2.0, 1.0], [3.0, 4.0, 1.0]])
        np.testing.assert_allclose(rf.apply_transform(np.eye(3), x), x[:, :2])
        with pytest.raises(InvalidInputError):
            rf.hartley_transform(np.array([[1.0, 2.0, 2.0], [3.0, 4.0, 1.0]]))

    def test_exact_tls_recovers_truth(self):
        d = datagen.two_view(100, 0.0, 0.0, seed=7)
        fit = rf.fit_fundamental(d.x1, d.x2, "tls")
        assert _frob_up_to_sign(fit.F, d.F) < 1e-6

    @pytest.mark.parametrize("method", ["tls", "ransac", "emtv"])
    def test_rank_two_unit_norm(self, method):
        d = datagen.two_view(60, 0.5, 0.5, seed=3)
        F = rf.fit_fundamental(d.x1, d.x2, method).F
        s = np.linalg.svd(F, compute_uv=False)
        assert s[2] < 1e-12 * s[0]
        assert np.linalg.norm(F) == pytest.approx(1.0, abs=1e-12)

    def test_emtv_low_outlier_ratio(self):
        d = datagen.two_view(100, 0.5, 0.5, seed=7)
        fit = rf.fit_fundamental(d.x1, d.x2, "emtv")
        assert rf.rms_error(fit.F, d.clean1, d.clean2) < 0.15

    def test_too_few(self):
        with pytest.raises(UnderdeterminedError):
            rf.fit_fundamental(np.ones((7, 2)), np.ones((7, 2)))

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            rf.fit_fundamental(np.ones((9, 2)), np.ones((10, 2)))

    def test_unknown_method(self, rng):
        with pytest.raises(InvalidInputError):
            rf.fit_fundamental(rng.uniform(size=(9, 2)), rng.uniform(size=(9, 2)), "lmeds")

    def test_pure_outliers_have_no_support(self, rng):
        x1, x2 = rng.uniform(0, 640, (60, 2)), rng.uniform(0, 480, (60, 2))
        with pytest.raises(DegenerateSupportError):
            rf.fit_fundamental(x1, x2, "emtv")


class TestRms:
    def test_truth_on_exact_data(self):
        d = datagen.two_view(50, 0.0, 0.0, seed=2)
        assert rf.rms_error(d.F, d.clean1, d.clean2) < 1e-12

    def test_linear_in_F(self, rng):
        d = datagen.two_view(50, 0.0, 0.5, seed=2)
        assert rf.rms_error(3.0 * d.F, d.x1, d.x2) == pytest.approx(3.0 * rf.rms_error(d.F, d.x1, d.x2))

    def test_per_term_sum(self, rng):
        F = rng.standard_normal((3, 3))
        x1, x2 = rng.uniform(0, 10, (15, 2)), rng.uniform(0, 10, (15, 2))
        terms = [(np.append(b, 1) @ F @ np.append(a, 1)) ** 2 for a, b in zip(x1, x2)]
        assert rf.rms_error(F, x1, x2) == pytest.approx(math.sqrt(sum(terms) / 15), rel=1e-12)


def test_rank2_projection(rng):
    F = rf.enforce_rank2(rng.standard_normal((3, 3)))
    assert np.linalg.matrix_rank(F, tol=1e-12) == 2
    assert np.linalg.norm(F) == pytest.approx(1.0)
