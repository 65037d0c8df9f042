import numpy as np
import pytest

from dlnm_lps.basis import bspline_spec, eval_basis, linear_spec
from dlnm_lps.crossbasis import build_crossbasis, build_history, build_interaction
from dlnm_lps.errors import ShapeError
from oracles import naive_cross_sum


def test_history_example():
    h = build_history(np.array([[1.0, 2, 3, 4]]), 2)
    np.testing.assert_array_equal(h.values[h.valid_mask], [[3, 2, 1], [4, 3, 2]])
    assert not h.valid_mask[:2].any()


def test_history_without_lags():
    x = np.arange(10.0).reshape(2, 5)
    h = build_history(x, 0)
    assert h.valid_mask.all()
    np.testing.assert_array_equal(h.values[:, 0], x.reshape(-1))


def test_history_single_valid_row_per_area():
    h = build_history(np.random.default_rng(0).normal(size=(3, 7)), 6)
    assert h.valid_mask.reshape(3, 7).sum(axis=1).tolist() == [1, 1, 1]


def test_history_shape_errors():
    with pytest.raises(ShapeError):
        build_history([np.arange(4.0), np.arange(5.0)], 1)
    with pytest.raises(ShapeError):
        build_history(np.zeros((1, 3)), 3)


def test_constant_bases_count_lags():
    x = np.random.default_rng(1).uniform(0, 1, (2, 12))
    h = build_history(x, 4)
    const = bspline_spec(0.0, 1.0, 1, degree=0)
    cb = build_crossbasis(h, const, bspline_spec(0.0, 4.0, 1, degree=0))
    np.testing.assert_array_equal(cb.W[h.valid_mask, 0], 5.0)
    np.testing.assert_array_equal(cb.W[~h.valid_mask, 0], 0.0)


def test_dimension_arithmetic():
    x = np.random.default_rng(2).uniform(0, 10, (1, 30))
    cb = build_crossbasis(build_history(x, 8), bspline_spec(0, 10, 8), bspline_spec(0, 8, 8))
    assert cb.W.shape == (30, 64)


def test_crossbasis_matches_triple_sum():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 10, (1, 40))
    xspec, lspec = bspline_spec(0, 10, 6), bspline_spec(0, 8, 5)
    cb = build_crossbasis(build_history(x, 8), xspec, lspec)
    theta = rng.normal(size=30)
    want = naive_cross_sum(x, 8, xspec, lspec, theta)
    np.testing.assert_allclose((cb.W @ theta).reshape(1, 40), want, atol=1e-10)


def test_interaction_zero_and_unit_modifier():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 10, (3, 20))
    cb = build_crossbasis(build_history(x, 3), bspline_spec(0, 10, 5), bspline_spec(0, 3, 4))
    assert np.all(build_interaction(cb, linear_spec(), np.zeros(3)).V == 0)
    np.testing.assert_array_equal(build_interaction(cb, linear_spec(), np.ones(3)).V, cb.W)


def test_interaction_matches_loop_oracle():
    rng = np.random.default_rng(5)
    J, T, L = 4, 15, 2
    x = rng.uniform(0, 10, (J, T))
    z = rng.normal(0, 0.4, J)
    cb = build_crossbasis(build_history(x, L), bspline_spec(0, 10, 4), bspline_spec(0, L, 3, degree=2))
    zspec = bspline_spec(z.min(), z.max(), 5, intercept=False)
    ib = build_interaction(cb, zspec, z)
    vxl, vz = cb.W.shape[1], 5
    theta2 = rng.normal(size=vz * vxl)
    C = eval_basis(zspec, z)
    want = np.zeros(J * T)
    for j in range(J):
        for t in range(T):
            r = j * T + t
            want[r] = sum(theta2[m * vxl + q] * cb.W[r, q] * C[j, m] for m in range(vz) for q in range(vxl))
    np.testing.assert_allclose(ib.V @ theta2, want, atol=1e-10)


def test_interaction_needs_one_value_per_area():
    x = np.ones((2, 5)) * np.arange(5)
    cb = build_crossbasis(build_history(x, 1), bspline_spec(0, 4, 4), bspline_spec(0, 1, 2, degree=1))
    with pytest.raises(ShapeError):
        build_interaction(cb, linear_spec(), [0.1, 0.2, 0.3])


def test_contrasts_sum_over_lags():
    x = np.random.default_rng(6).uniform(0, 10, (1, 30))
    cb = build_crossbasis(build_history(x, 5), bspline_spec(0, 10, 6), bspline_spec(0, 5, 4))
    lagc = cb.lag_contrasts([1.0, 7.5], 5.0)
    np.testing.assert_allclose(lagc.sum(axis=1), cb.overall_contrasts([1.0, 7.5], 5.0), atol=1e-14)
    assert np.all(cb.lag_contrasts([5.0], 5.0) == 0)
