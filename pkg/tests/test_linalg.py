import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import gauss_inverse, loop_outer, sym2_eigenvalues
from svdckf.exceptions import InvalidInput, NotPositiveDefinite, NotPositiveSemiDefinite, SingularInnovationCovariance
from svdckf.linalg import (
    SvdFactors,
    apply_inverse_via_svd,
    apply_inverse_via_svd_masked,
    cholesky,
    cholesky_masked,
    condition_number,
    reduced_svd,
    reduced_svd_masked,
    svd_symmetric,
    svd_symmetric_masked,
    triangularize,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def wide_arrays(draw, max_n=5):
    n = draw(st.integers(1, max_n))
    big_n = draw(st.integers(n, 3 * n + 2))
    return draw(arrays(float, (n, big_n), elements=finite))


@st.composite
def spd_matrices(draw, max_n=5):
    n = draw(st.integers(1, max_n))
    a = draw(arrays(float, (n, n), elements=finite))
    return a @ a.T + 0.5 * np.eye(n)


def rel_err(a, b):
    scale = max(np.linalg.norm(b), np.finfo(float).tiny)
    return np.linalg.norm(a - b) / scale


# -- reduced SVD ------------------------------------------------------------

def test_reduced_svd_identity():
    f = reduced_svd(np.eye(2))
    np.testing.assert_allclose(f.d_sqrt, [1.0, 1.0])
    np.testing.assert_allclose(np.abs(f.q), np.eye(2), atol=1e-15)


def test_reduced_svd_rank_deficient():
    f = reduced_svd(np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(f.d_sqrt, [2.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(np.abs(f.q[:, 0]), [1.0, 0.0], atol=1e-15)


def test_reduced_svd_matches_loop_outer_product():
    t = np.random.default_rng(7).standard_normal((4, 9))
    f = reduced_svd(t)
    assert rel_err(f.reconstruct(), loop_outer(t)) < 1e-12


def test_reduced_svd_rejects_tall_and_nan():
    with pytest.raises(InvalidInput):
        reduced_svd(np.ones((3, 2)))
    with pytest.raises(InvalidInput):
        reduced_svd(np.array([[1.0, np.nan]]))


def test_reduced_svd_masks_bad_member_only():
    t = np.random.default_rng(1).standard_normal((3, 2, 4))
    t[1, 0, 0] = np.inf
    f, bad = reduced_svd_masked(t)
    assert bad.tolist() == [False, True, False]
    for i in (0, 2):
        assert rel_err(f.reconstruct()[i], t[i] @ t[i].T) < 1e-13


@given(wide_arrays())
def test_reduced_svd_properties(t):
    f = reduced_svd(t)
    n = t.shape[0]
    np.testing.assert_allclose(f.q.T @ f.q, np.eye(n), atol=1e-12)
    assert np.all(f.d_sqrt >= 0)
    assert np.all(np.diff(f.d_sqrt) <= 1e-12 * max(1.0, f.d_sqrt[0]))
    ref = t @ t.T
    assert np.linalg.norm(f.reconstruct() - ref) <= 1e-12 * max(np.linalg.norm(ref), 1e-300) + 1e-300


@given(wide_arrays())
def test_reduced_svd_batch_independent(t):
    other = np.random.default_rng(0).standard_normal(t.shape)
    batched = reduced_svd(np.stack([other, t]))
    single = reduced_svd(t)
    np.testing.assert_allclose(batched.d_sqrt[1], single.d_sqrt, rtol=1e-13, atol=1e-13)


# -- symmetric SVD ----------------------------------------------------------

def test_svd_symmetric_diagonal():
    f = svd_symmetric(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(f.d_sqrt, [2.0, 1.0])
    np.testing.assert_allclose(np.abs(f.q), np.eye(2))


def test_svd_symmetric_two_by_two_eigenvalues():
    lam1, lam2 = sym2_eigenvalues(2.0, 1.0, 2.0)
    assert (lam1, lam2) == (3.0, 1.0)
    f = svd_symmetric(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(f.d_sqrt, [math.sqrt(lam1), math.sqrt(lam2)], rtol=1e-14)


def test_svd_symmetric_zero_matrix():
    f = svd_symmetric(np.zeros((3, 3)))
    np.testing.assert_array_equal(f.d_sqrt, np.zeros(3))
    np.testing.assert_allclose(f.q.T @ f.q, np.eye(3), atol=1e-15)


def test_svd_symmetric_clamps_roundoff_but_rejects_indefinite():
    f = svd_symmetric(np.diag([1.0, -1e-14]))
    assert f.d_sqrt[-1] == 0.0
    with pytest.raises(NotPositiveSemiDefinite):
        svd_symmetric(np.diag([1.0, -1e-3]))
    _, bad = svd_symmetric_masked(np.stack([np.eye(2), np.diag([1.0, -1.0])]))
    assert bad.tolist() == [False, True]


@given(spd_matrices())
def test_svd_symmetric_reconstructs(p):
    f = svd_symmetric(p)
    assert rel_err(f.reconstruct(), p) < 1e-12
    assert np.all(np.diff(f.d_sqrt) <= 0)


# -- Cholesky ---------------------------------------------------------------

def test_cholesky_examples():
    np.testing.assert_array_equal(cholesky(np.eye(3)).l, np.eye(3))
    np.testing.assert_allclose(cholesky(np.array([[4.0, 2.0], [2.0, 5.0]])).l, [[2.0, 0.0], [1.0, 2.0]])


def test_cholesky_nearly_singular_fails():
    # the second pivot is (1 - 1e-16) - 1 * 1, which rounds to zero or below
    assert (1.0 - 1e-16) - 1.0 <= 0.0
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 1.0], [1.0, 1.0 - 1e-16]]))


def test_cholesky_masked_flags_per_member():
    p = np.stack([np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]), 2 * np.eye(2)])
    f, bad = cholesky_masked(p)
    assert bad.tolist() == [False, True, False]
    np.testing.assert_allclose(f.l[2], math.sqrt(2) * np.eye(2))


@given(spd_matrices())
def test_cholesky_properties(p):
    l = cholesky(p).l
    assert np.all(np.triu(l, 1) == 0)
    assert np.all(np.diag(l) > 0)
    assert rel_err(l @ l.T, p) < 1e-12


# -- triangularization ------------------------------------------------------

@given(wide_arrays())
def test_triangularize_properties(t):
    l = triangularize(t).l
    assert np.all(np.triu(l, 1) == 0)
    assert np.all(np.diag(l) >= 0)
    ref = t @ t.T
    assert np.linalg.norm(l @ l.T - ref) <= 1e-12 * np.linalg.norm(ref) + 1e-300


def test_triangularize_matches_loop_outer_product():
    t = np.random.default_rng(3).standard_normal((5, 12))
    assert rel_err(triangularize(t).reconstruct(), loop_outer(t)) < 1e-12


# -- inverse application ----------------------------------------------------

def test_apply_inverse_examples():
    rhs = np.array([[1.0, 2.0], [3.0, 4.0]])
    ident = SvdFactors(np.eye(2), np.ones(2))
    np.testing.assert_array_equal(apply_inverse_via_svd(ident, rhs), rhs)
    f = svd_symmetric(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(apply_inverse_via_svd(f, np.eye(2)), np.diag([0.25, 1.0]), atol=1e-16)


def test_apply_inverse_matches_gauss_jordan():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((3, 3))
    p = a @ a.T + np.eye(3)
    rhs = rng.standard_normal((2, 3))
    got = apply_inverse_via_svd(svd_symmetric(p), rhs)
    want = rhs @ gauss_inverse(p)
    assert rel_err(got, want) < 1e-10


def test_apply_inverse_singular():
    f = SvdFactors(np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(SingularInnovationCovariance):
        apply_inverse_via_svd(f, np.eye(2))
    _, bad = apply_inverse_via_svd_masked(f, np.eye(2))
    assert bool(bad)


@given(spd_matrices())
def test_apply_inverse_property(p):
    out = apply_inverse_via_svd(svd_symmetric(p), p)
    np.testing.assert_allclose(out, np.eye(p.shape[0]), atol=1e-8 * np.linalg.cond(p))


# -- condition number -------------------------------------------------------

def test_condition_number_examples():
    assert condition_number(SvdFactors(np.eye(2), np.ones(2))) == 1.0
    assert condition_number(SvdFactors(np.eye(2), np.array([2.0, 1.0]))) == 4.0
    c = condition_number(svd_symmetric(np.array([[2.0, 1.0], [1.0, 2.0]])))
    assert c == pytest.approx(3.0, rel=1e-14)
    assert condition_number(SvdFactors(np.eye(2), np.array([1.0, 0.0]))) == math.inf
