"""Gauss-Lobatto-Legendre quadrature and 1D nodal (Lagrange) bases on [-1, 1].

The n+1 GLL points are the endpoints +-1 together with the roots of P_n'(x),
where P_n is the Legendre polynomial of degree n.  Quadrature weights are

    w_i = 2 / (n (n+1) P_n(x_i)^2),

exact for polynomials of degree <= 2n-1.  Differentiation matrices and point
evaluation use the barycentric form of the Lagrange cardinals, which is stable
for the clustered GLL distributions and makes the row-sum-zero property of the
differentiation matrix exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "legendre_with_derivative",
    "gll_points",
    "barycentric_weights",
    "lagrange_interpolation_matrix",
    "lagrange_derivative_matrix",
    "nodal_diff_matrix",
    "Basis",
    "basis_for_order",
]


def legendre_with_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate P_n and P_n' by the three-term recurrence.

    Works on scalars or arrays.  The derivative uses
    (1 - x^2) P_n'(x) = n (P_{n-1}(x) - x P_n(x)), rearranged to avoid the
    singular endpoints by building P_n' with its own recurrence instead:
    P'_{k+1} = P'_{k-1} + (2k+1) P_k.
    """
    x = np.asarray(x, dtype=float)
    pkm1 = np.ones_like(x)
    dpkm1 = np.zeros_like(x)
    if n == 0:
        return pkm1, dpkm1
    pk = x.copy()
    dpk = np.ones_like(x)
    for k in range(1, n):
        pkp1 = ((2 * k + 1) * x * pk - k * pkm1) / (k + 1)
        dpkp1 = dpkm1 + (2 * k + 1) * pk
        pkm1, pk = pk, pkp1
        dpkm1, dpk = dpk, dpkp1
    return pk, dpk


def _legendre_second_derivative(n: int, x: np.ndarray) -> np.ndarray:
    # From the Legendre ODE: (1-x^2) P'' = 2x P' - n(n+1) P, valid away from +-1.
    p, dp = legendre_with_derivative(n, x)
    return (2.0 * x * dp - n * (n + 1) * p) / (1.0 - x * x)


def gll_points(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the (n+1)-point Gauss-Lobatto-Legendre rule.

    Interior nodes are found by Newton iteration on P_n'(x) seeded with the
    Chebyshev-Gauss-Lobatto points; convergence tolerance 1e-14 on the update.
    The node set is symmetrized exactly so that nodes[i] == -nodes[n-i]
    bitwise, which downstream code relies on for mirror-symmetry checks.
    """
    if n < 1:
        raise ValueError(f"GLL basis needs polynomial order >= 1, got n={n}")
    nodes = -np.cos(np.pi * np.arange(n + 1) / n)
    if n >= 2:
        x = nodes[1:-1].copy()
        for _ in range(100):
            _, dp = legendre_with_derivative(n, x)
            ddp = _legendre_second_derivative(n, x)
            dx = dp / ddp
            x -= dx
            if np.max(np.abs(dx)) <= 1e-14:
                break
        nodes[1:-1] = x
    nodes[0], nodes[-1] = -1.0, 1.0
    # exact symmetrization (pairs average to zero, midpoint pinned to 0)
    nodes = 0.5 * (nodes - nodes[::-1])
    if n % 2 == 0:
        nodes[n // 2] = 0.0
    p, _ = legendre_with_derivative(n, nodes)
    weights = 2.0 / (n * (n + 1) * p * p)
    return nodes, weights


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    """Barycentric weights w_j = 1 / prod_{k != j} (x_j - x_k)."""
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def lagrange_interpolation_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix V with V[i, j] = l_j(x_i) for the cardinals on `nodes`.

    Uses the barycentric formula; query points that coincide with a node
    (within 1e-14) get the exact cardinal row.
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = barycentric_weights(nodes)
    diff = x[:, None] - nodes[None, :]
    exact = np.abs(diff) < 1e-14
    safe = np.where(exact, 1.0, diff)
    terms = w[None, :] / safe
    V = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        V[hit] = 0.0
        rows, cols = np.nonzero(exact)
        V[rows, cols] = 1.0
    return V


def lagrange_derivative_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix Vd with Vd[i, j] = l_j'(x_i); exact for degree <= len(nodes)-1.

    Built from the differentiation matrix at the nodes composed with
    interpolation: l_j'(x) is itself a polynomial of degree n-1 <= n, so
    interpolating its nodal samples is exact.
    """
    nodes = np.asarray(nodes, dtype=float)
    D = nodal_diff_matrix_from_nodes(nodes)
    V = lagrange_interpolation_matrix(nodes, x)
    return V @ D


def nodal_diff_matrix_from_nodes(nodes: np.ndarray) -> np.ndarray:
    """Differentiation matrix D[i, j] = l_j'(x_i) on the given nodes.

    Off-diagonal entries from the barycentric weights, diagonal from the
    negative row sum so that D @ const == 0 exactly.
    """
    nodes = np.asarray(nodes, dtype=float)
    w = barycentric_weights(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def nodal_diff_matrix(n: int) -> np.ndarray:
    """Differentiation matrix on the order-n GLL nodes."""
    nodes, _ = gll_points(n)
    return nodal_diff_matrix_from_nodes(nodes)


@dataclass(frozen=True)
class Basis:
    """Order-n GLL nodal basis: nodes, weights and differentiation matrix."""

    order: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    diff_matrix: np.ndarray = field(repr=False)

    @property
    def npts(self) -> int:
        return self.order + 1

    def interpolation_to(self, x: np.ndarray) -> np.ndarray:
        return lagrange_interpolation_matrix(self.nodes, x)

    def derivative_to(self, x: np.ndarray) -> np.ndarray:
        return lagrange_derivative_matrix(self.nodes, x)


_BASIS_CACHE: dict[int, Basis] = {}


def basis_for_order(n: int) -> Basis:
    """Construct (and memoize) the order-n GLL basis."""
    b = _BASIS_CACHE.get(n)
    if b is None:
        nodes, weights = gll_points(n)
        b = Basis(n, nodes, weights, nodal_diff_matrix_from_nodes(nodes))
        _BASIS_CACHE[n] = b
    return b
