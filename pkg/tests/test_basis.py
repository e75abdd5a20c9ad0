import numpy as np
import pytest
import scipy.interpolate
from hypothesis import given, settings, strategies as st

from poisson_hotspots.basis import BasisSet, bspline_basis, default_basis_set, identity_basis


def scipy_design(n_points, knots, order):
    knots = np.asarray(knots, dtype=float)
    x = np.linspace(knots[0], knots[-1], n_points)
    t = np.concatenate([[knots[0]] * (order - 1), knots, [knots[-1]] * (order - 1)])
    return scipy.interpolate.BSpline.design_matrix(x, t, order - 1).toarray()


@pytest.mark.parametrize("n_points,n_knots,order", [(49, 8, 4), (10, 7, 4), (26, 7, 4), (12, 3, 2), (9, 5, 1), (30, 4, 3)])
def test_matches_scipy_design_matrix(n_points, n_knots, order):
    knots = np.linspace(1, 50, n_knots)
    got = bspline_basis(n_points, knots, order)
    np.testing.assert_allclose(got, scipy_design(n_points, knots, order), atol=1e-12)


@given(st.integers(2, 60), st.integers(2, 10), st.integers(1, 5), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_partition_of_unity_and_nonnegative(n_points, n_knots, order, seed):
    rng = np.random.default_rng(seed)
    knots = np.sort(rng.choice(np.arange(1, 200), size=n_knots, replace=False)).astype(float)
    b = bspline_basis(n_points, knots, order)
    assert b.shape == (n_points, n_knots + order - 2)
    assert np.all(b >= -1e-15)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_column_counts_for_default_layout():
    bs = default_basis_set((49, 10, 26))
    assert bs.b_m1.shape == (49, 10)
    assert bs.b_m2.shape == (10, 9)
    assert bs.b_m3.shape == (26, 9)
    assert bs.p == 810
    assert bs.q == 49 * 10 * 26
    assert bs.hotspot_is_identity


def test_kron_design_matches_dense():
    bs = default_basis_set((5, 4, 6))
    dense = np.kron(np.kron(bs.b_m1, bs.b_m2), bs.b_m3)
    np.testing.assert_allclose(bs.X.toarray(), dense, atol=0)
    assert bs.X.shape == (bs.n, bs.p)


def test_small_modes_stay_identifiable():
    for dims in [(1, 1, 1), (2, 3, 2), (3, 3, 3), (6, 2, 26)]:
        bs = default_basis_set(dims)
        for b, n in zip(bs.mean_bases, dims):
            assert b.shape[1] <= n
            np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)


def test_knot_count_override():
    bs = default_basis_set((30, 10, 20), knot_counts=(4, 3, 3))
    assert bs.core_dims_m == (6, 5, 5)
    with pytest.raises(ValueError):
        default_basis_set((30, 10, 20), knot_counts=(1, 3, 3))


@pytest.mark.parametrize(
    "knots,order",
    [([1.0], 4), ([1.0, 1.0, 2.0], 4), ([3.0, 2.0], 2), ([1.0, 2.0], 0)],
)
def test_invalid_knots(knots, order):
    with pytest.raises(ValueError):
        bspline_basis(10, knots, order)


def test_basis_set_rejects_mismatched_shapes():
    b = identity_basis(3)
    with pytest.raises(ValueError):
        BasisSet(b, b, np.eye(4), b, b, b)
