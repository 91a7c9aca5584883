import numpy as np
import pytest

from neurosem.quadrature import (
    Basis,
    basis_for_order,
    gll_points,
    lagrange_derivative_matrix,
    lagrange_interpolation_matrix,
    nodal_diff_matrix,
)
from oracles import gll_interior_nodes_bisection, integrate_poly_exact


def test_order_one_is_trapezoid_endpoints():
    nodes, weights = gll_points(1)
    assert np.array_equal(nodes, [-1.0, 1.0])
    assert np.allclose(weights, [1.0, 1.0], rtol=0, atol=1e-15)


def test_order_two_exact_values():
    nodes, weights = gll_points(2)
    assert np.allclose(nodes, [-1.0, 0.0, 1.0], atol=1e-15)
    assert np.allclose(weights, [1 / 3, 4 / 3, 1 / 3], atol=1e-14)


def test_order_four_interior_nodes_closed_form_and_bisection():
    nodes, _ = gll_points(4)
    r = np.sqrt(3.0 / 7.0)
    assert np.allclose(nodes[1:-1], [-r, 0.0, r], atol=1e-14)
    oracle = gll_interior_nodes_bisection(4)
    assert np.allclose(nodes[1:-1], oracle, atol=1e-12)


@pytest.mark.parametrize("n", [3, 5, 6, 8, 12])
def test_interior_nodes_match_bisection_oracle(n):
    nodes, _ = gll_points(n)
    oracle = gll_interior_nodes_bisection(n)
    assert np.allclose(nodes[1:-1], oracle, atol=1e-12)


@pytest.mark.parametrize("n", range(1, 13))
def test_weights_sum_to_two_and_are_positive(n):
    nodes, weights = gll_points(n)
    assert abs(weights.sum() - 2.0) <= 1e-13
    assert (weights > 0).all()
    assert nodes[0] == -1.0 and nodes[-1] == 1.0
    assert (np.diff(nodes) > 0).all()


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6, 9])
def test_quadrature_exact_to_degree_2n_minus_1(n):
    nodes, weights = gll_points(n)
    rng = np.random.default_rng(1234 + n)
    for _ in range(5):
        deg = int(rng.integers(0, 2 * n))  # any degree <= 2n-1
        coeffs = rng.uniform(-2, 2, deg + 1)
        vals = np.polynomial.polynomial.polyval(nodes, coeffs)
        assert abs(weights @ vals - integrate_poly_exact(coeffs)) <= 1e-12


def test_quadrature_inexact_beyond_degree_2n_minus_1():
    # sanity guard: the rule should NOT integrate x^(2n) exactly
    n = 3
    nodes, weights = gll_points(n)
    approx = weights @ nodes ** (2 * n)
    exact = 2.0 / (2 * n + 1)
    assert abs(approx - exact) > 1e-6


def test_diff_matrix_n1_trivial():
    D = nodal_diff_matrix(1)
    assert np.allclose(D, [[-0.5, 0.5], [-0.5, 0.5]], atol=1e-15)


def test_diff_matrix_differentiates_x_squared_at_n2():
    nodes, _ = gll_points(2)
    D = nodal_diff_matrix(2)
    assert np.allclose(D @ nodes**2, 2 * nodes, atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 4, 7, 10])
def test_diff_matrix_rows_sum_to_zero(n):
    # diagonal is the negative off-diagonal sum; the matvec re-sums in a
    # different order, so "zero" is exact only up to round-off
    D = nodal_diff_matrix(n)
    assert np.abs(D @ np.ones(n + 1)).max() <= 2e-13
    assert np.abs(D.sum(axis=1)).max() <= 2e-13


@pytest.mark.parametrize("n", [2, 4, 7])
def test_diff_matrix_exact_for_degree_n(n):
    nodes, _ = gll_points(n)
    D = nodal_diff_matrix(n)
    rng = np.random.default_rng(99 + n)
    coeffs = rng.uniform(-1, 1, n + 1)
    vals = np.polynomial.polynomial.polyval(nodes, coeffs)
    dcoeffs = np.polynomial.polynomial.polyder(coeffs)
    dvals = np.polynomial.polynomial.polyval(nodes, dcoeffs)
    assert np.allclose(D @ vals, dvals, atol=1e-11)


def test_interpolation_matrix_reproduces_polynomials_and_nodes():
    n = 6
    b = basis_for_order(n)
    x = np.array([-1.0, -0.3217, 0.0, 0.5, b.nodes[2], 1.0])
    V = lagrange_interpolation_matrix(b.nodes, x)
    coeffs = np.arange(n + 1, dtype=float) / 3.0
    vals = np.polynomial.polynomial.polyval(b.nodes, coeffs)
    expect = np.polynomial.polynomial.polyval(x, coeffs)
    assert np.allclose(V @ vals, expect, atol=1e-12)
    # exact-node rows are exact cardinals
    assert V[4, 2] == 1.0 and abs(V[4].sum() - 1.0) < 1e-15


def test_derivative_matrix_at_off_nodes():
    n = 5
    b = basis_for_order(n)
    x = np.linspace(-1, 1, 11)
    Vd = lagrange_derivative_matrix(b.nodes, x)
    coeffs = np.array([0.2, -1.0, 0.5, 2.0, -0.7, 0.1])
    vals = np.polynomial.polynomial.polyval(b.nodes, coeffs)
    dexpect = np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(coeffs))
    assert np.allclose(Vd @ vals, dexpect, atol=1e-11)


def test_order_zero_rejected():
    with pytest.raises(ValueError):
        gll_points(0)


def test_basis_cache_returns_same_object():
    assert basis_for_order(4) is basis_for_order(4)
    assert isinstance(basis_for_order(3), Basis)
