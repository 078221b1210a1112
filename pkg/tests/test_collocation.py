import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penode.collocation import (CollocationError, barycentric_weights, differentiation_matrix,
                                flgr_nodes, quadrature_weights, scheme)

SQ6 = np.sqrt(6.0)


def test_three_stage_nodes_and_weights():
    sch = scheme(3)
    np.testing.assert_allclose(sch.nodes, [(4 - SQ6) / 10, (4 + SQ6) / 10, 1.0], atol=1e-12)
    np.testing.assert_allclose(sch.weights, [(16 - SQ6) / 36, (16 + SQ6) / 36, 1 / 9], atol=1e-12)


def test_one_stage_is_implicit_euler():
    sch = scheme(1)
    np.testing.assert_allclose(sch.nodes, [1.0])
    np.testing.assert_allclose(sch.weights, [1.0])
    np.testing.assert_allclose(sch.diff_matrix, [[-1.0, 1.0]])


@pytest.mark.parametrize("m", range(1, 9))
def test_quadrature_exact_up_to_degree(m):
    sch = scheme(m)
    for k in range(2 * m - 1):
        assert abs(sch.weights @ sch.nodes ** k - 1.0 / (k + 1)) < 1e-12


@pytest.mark.parametrize("m", [2, 3, 5])
def test_quadrature_not_exact_beyond_degree(m):
    sch = scheme(m)
    k = 2 * m - 1
    assert abs(sch.weights @ sch.nodes ** k - 1.0 / (k + 1)) > 1e-8


@pytest.mark.parametrize("m", range(2, 9))
def test_nodes_are_jacobi_roots(m):
    # interior nodes are the roots of P_{m-1}^{(1,0)}(2t - 1); compare with scipy's Gauss-Jacobi
    from scipy.special import roots_jacobi
    ref = 0.5 * (np.sort(roots_jacobi(m - 1, 1.0, 0.0)[0]) + 1.0)
    np.testing.assert_allclose(flgr_nodes(m)[:-1], ref, atol=1e-13)


def test_large_stage_count_is_well_formed():
    sch = scheme(70)
    assert np.all(np.diff(sch.nodes) > 0) and sch.nodes[0] > 0 and sch.nodes[-1] == 1.0
    assert abs(sch.weights.sum() - 1.0) < 1e-12
    assert np.all(sch.weights > 0)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 8), coef=st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_differentiation_matrix_exact_for_polynomials(m, coef):
    sch = scheme(m)
    c = np.array(coef[:m + 1])                 # degree <= m
    p = np.polynomial.Polynomial(c)
    got = sch.diff_matrix @ p(sch.all_nodes)
    np.testing.assert_allclose(got, p.deriv()(sch.nodes), atol=1e-9 * (1 + np.abs(c).sum()))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 8), coef=st.lists(st.floats(-5, 5), min_size=15, max_size=15))
def test_quadrature_integrates_random_polynomials(m, coef):
    sch = scheme(m)
    p = np.polynomial.Polynomial(np.array(coef[:2 * m - 1]))
    exact = p.integ()(1.0) - p.integ()(0.0)
    assert abs(sch.weights @ p(sch.nodes) - exact) < 1e-11 * (1 + np.abs(coef).sum())


def test_rows_of_differentiation_matrix_sum_to_zero():
    for m in range(1, 9):
        np.testing.assert_allclose(scheme(m).diff_matrix.sum(axis=1), 0.0, atol=1e-10)


def test_weights_match_integrated_lagrange_basis():
    nodes = flgr_nodes(4)
    b = quadrature_weights(nodes)
    for j in range(4):
        y = np.zeros(4)
        y[j] = 1.0
        p = np.polynomial.Polynomial.fit(nodes, y, 3).convert()
        assert abs(p.integ()(1.0) - p.integ()(0.0) - b[j]) < 1e-12


def test_scheme_is_read_only_and_cached():
    a, b = scheme(4), scheme(4)
    assert a is b
    with pytest.raises(ValueError):
        a.weights[0] = 0.0
    assert a.order == 7


@pytest.mark.parametrize("bad", [0, -1, 2.5])
def test_invalid_stage_count(bad):
    with pytest.raises(CollocationError):
        flgr_nodes(bad)


def test_duplicate_nodes_rejected():
    with pytest.raises(CollocationError):
        barycentric_weights([0.0, 0.5, 0.5])
    with pytest.raises(CollocationError):
        differentiation_matrix([0.1, 0.5, 1.0])
