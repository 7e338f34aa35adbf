from __future__ import annotations

import numpy as np
import pytest

from tensorvote.errors import InvalidInputError
from tensorvote.spatial import NeighborIndex, PointSet, brute_force_neighbors, build


def test_single_point():
    idx = build(PointSet(np.zeros((1, 2))), 1.0)
    assert idx.neighbors(0).size == 0 and idx.edges == 0


def test_collinear_triplet():
    s = np.sqrt(0.25)
    ps = PointSet(np.array([[0, 0], [s, 0], [2 * s, 0]]))
    idx = build(ps, 3.72 * s)
    assert list(idx.neighbors(1)) == [0, 2]


@pytest.mark.parametrize("d", [2, 3, 10])
def test_matches_brute_force(rng, d):
    pts = rng.uniform(-1, 1, size=(1000 if d == 2 else 400, d))
    radius = 0.1 if d == 2 else 0.6
    idx = build(PointSet(pts), radius)
    ref = brute_force_neighbors(pts, radius)
    for i in range(len(pts)):
        np.testing.assert_array_equal(idx.neighbors(i), ref[i])


def test_symmetric_and_sorted(rng):
    pts = rng.uniform(size=(300, 3))
    idx = build(PointSet(pts), 0.2)
    for i in range(300):
        nb = idx.neighbors(i)
        assert i not in nb
        assert np.all(np.diff(nb) > 0)
        for j in nb:
            assert i in idx.neighbors(j)


def test_radius_override(rng):
    pts = rng.uniform(size=(200, 2))
    idx = build(PointSet(pts), 0.1)
    np.testing.assert_array_equal(idx.neighbors(5, radius_override=0.3),
                                  brute_force_neighbors(pts, 0.3)[5])


def test_isolated_point():
    idx = build(PointSet(np.array([[0, 0], [10, 10], [0.1, 0]])), 1.0)
    assert idx.neighbors(1).size == 0
    assert list(idx.degree()) == [1, 0, 1]


def test_mixed_dimensions():
    with pytest.raises(InvalidInputError):
        PointSet.from_rows([[0, 0], [1, 2, 3]])


@pytest.mark.parametrize("pts", [np.zeros((0, 2)), np.zeros((3, 1)), np.array([[0, np.inf]])])
def test_invalid_pointsets(pts):
    with pytest.raises(InvalidInputError):
        PointSet(pts)


def test_tensor_shape_checked():
    with pytest.raises(InvalidInputError):
        PointSet(np.zeros((2, 2)), tensors=np.zeros((2, 3, 3)))


def test_bad_radius():
    with pytest.raises(InvalidInputError):
        NeighborIndex(PointSet(np.zeros((2, 2))), 0.0)


def test_out_of_range_site():
    with pytest.raises(IndexError):
        build(PointSet(np.zeros((2, 2))), 1.0).neighbors(2)
