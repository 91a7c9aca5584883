"""Weak-form Helmholtz/Poisson solver: lam*<phi,u> + <grad phi, grad u> = loads.

The operator is matrix-free: element-local tensor contractions against the
GLL differentiation matrix, gathered/scattered through the global numbering
in fixed element order (bitwise-deterministic).  Solves use Jacobi-
preconditioned conjugate gradients, relative tolerance 1e-10 by default,
10,000-iteration cap.  A pure-Neumann Poisson solve (lam = 0, no Dirichlet
boundary) is singular up to constants; the nullspace is removed by projecting
the iterates to zero mean every iteration.

Boundary conditions:

* Dirichlet — strong imposition at boundary nodes (lifted out of the CG
  system).
* Neumann — natural flux load on the boundary integral.
* Robin — du/dn + R u = h: surface mass contribution R <phi, u>_edge in the
  operator plus the flux load <phi, h>_edge; R = 0 recovers Neumann exactly.
* HighOrderPressure — treated here as Neumann whose flux data the caller
  (the time stepper's rotational pressure boundary condition) supplies.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .field import Field, FunctionSpace

__all__ = [
    "BCKind", "BoundaryCondition", "EllipticSolveError", "HelmholtzSystem",
    "assemble", "solve", "mass_load", "weak_gradient_load", "edge_load",
    "dirichlet_data", "pcg",
]


class BCKind(Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    ROBIN = "robin"
    HIGH_ORDER_PRESSURE = "high-order-pressure"


@dataclass
class BoundaryCondition:
    """One condition on one composite for one solved variable.

    ``value`` may be a scalar, a callable of (x, y) or (x, y, t) arrays, or an
    array aligned with the composite's edge nodes (shape (ne, p+1) or flat).
    Robin conditions additionally carry ``robin_coefficient`` R >= 0 and read
    du/dn + R u = value.
    """

    composite: str
    kind: BCKind
    value: object = 0.0
    robin_coefficient: float = 0.0

    def __post_init__(self):
        if self.kind is BCKind.ROBIN and self.robin_coefficient < 0:
            raise ValueError("Robin coefficient must be >= 0")

    def resolve(self, coords: np.ndarray, t: float | None = None) -> np.ndarray:
        """Evaluate the value source at (..., 2) coordinates."""
        v = self.value
        if callable(v):
            x, y = coords[..., 0], coords[..., 1]
            if _wants_time(v):
                return np.broadcast_to(np.asarray(v(x, y, 0.0 if t is None else t),
                                                  dtype=float), x.shape).copy()
            return np.broadcast_to(np.asarray(v(x, y), dtype=float), x.shape).copy()
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 0:
            return np.full(coords.shape[:-1], float(arr))
        return arr.reshape(coords.shape[:-1])

    def is_static(self) -> bool:
        return not (callable(self.value) and _wants_time(self.value))


def _wants_time(fn) -> bool:
    try:
        params = [p for p in inspect.signature(fn).parameters.values()
                  if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
        return len(params) >= 3
    except (TypeError, ValueError):
        return False


class EllipticSolveError(RuntimeError):
    """Conjugate gradients failed to reach tolerance (indefinite system or bad bcs)."""


# ----------------------------------------------------------------------------
# operator
# ----------------------------------------------------------------------------

class HelmholtzSystem:
    """Matrix-free lam*M + K with optional Robin surface terms."""

    def __init__(self, space: FunctionSpace, lam: float,
                 robin: list[tuple[str, float]] | None = None):
        if lam < 0:
            raise ValueError("reaction coefficient must be >= 0")
        self.space = space
        self.lam = float(lam)
        self.robin = list(robin or [])
        g = space.geo
        self.G11 = g.W * (g.xi_x**2 + g.xi_y**2)
        self.G12 = g.W * (g.xi_x * g.eta_x + g.xi_y * g.eta_y)
        self.G22 = g.W * (g.eta_x**2 + g.eta_y**2)
        self._robin_blocks = []
        for label, R in self.robin:
            if R == 0.0:
                continue  # bitwise-identical to the plain Neumann operator
            blk = space.edge_blocks[label]
            E = blk.interp
            mats = R * np.einsum("qa,kq,qb->kab", E, blk.qweights, E)
            self._robin_blocks.append((blk.node_gids, mats))
        if not space.collocated:
            self._local_mats = self._dense_local_matrices()
        else:
            self._local_mats = None
        self.diagonal = self._assemble_diagonal()

    # -- dense local path (n = 1 promotion / explicit over-integration) ----

    def _dense_local_matrices(self) -> np.ndarray:
        space = self.space
        P, Dq = space.interp_q, space.deriv_q
        M0 = np.kron(P, P)          # value rows by flattened (i, j)
        Gx = np.kron(Dq, P)         # d/dxi rows
        Gy = np.kron(P, Dq)         # d/deta rows
        ne = space.mesh.num_elements
        g11 = self.G11.reshape(ne, -1)
        g12 = self.G12.reshape(ne, -1)
        g22 = self.G22.reshape(ne, -1)
        W = space.geo.W.reshape(ne, -1)
        A = (np.einsum("qa,eq,qb->eab", Gx, g11, Gx)
             + np.einsum("qa,eq,qb->eab", Gx, g12, Gy)
             + np.einsum("qa,eq,qb->eab", Gy, g12, Gx)
             + np.einsum("qa,eq,qb->eab", Gy, g22, Gy))
        if self.lam:
            A += self.lam * np.einsum("qa,eq,qb->eab", M0, W, M0)
        return A

    # -- application --------------------------------------------------------

    def apply(self, x: np.ndarray) -> np.ndarray:
        space = self.space
        loc = space.gather(x)
        if self._local_mats is not None:
            ne, m = loc.shape[0], loc.shape[1]
            r = np.einsum("eab,eb->ea", self._local_mats, loc.reshape(ne, -1))
            out = space.scatter_add(r.reshape(ne, m, m))
        else:
            D = space.basis.diff_matrix
            u_xi = np.einsum("ik,ekj->eij", D, loc)
            u_eta = np.einsum("jk,eik->eij", D, loc)
            f1 = self.G11 * u_xi + self.G12 * u_eta
            f2 = self.G12 * u_xi + self.G22 * u_eta
            r = np.einsum("ki,ekj->eij", D, f1) + np.einsum("kj,eik->eij", D, f2)
            if self.lam:
                r += self.lam * (space.geo.W * loc)
            out = space.scatter_add(r)
        for gids, mats in self._robin_blocks:
            np.add.at(out, gids, np.einsum("kab,kb->ka", mats, x[gids]))
        return out

    def _assemble_diagonal(self) -> np.ndarray:
        space = self.space
        if self._local_mats is not None:
            dloc = np.einsum("eaa->ea", self._local_mats)
            m = space.order + 1
            d = space.scatter_add(dloc.reshape(-1, m, m))
        else:
            D2 = space.basis.diff_matrix ** 2
            Ddiag = np.diag(space.basis.diff_matrix)
            dloc = (np.einsum("ki,ekj->eij", D2, self.G11)
                    + np.einsum("kj,eik->eij", D2, self.G22)
                    + 2.0 * Ddiag[:, None] * Ddiag[None, :] * self.G12)
            if self.lam:
                dloc = dloc + self.lam * space.geo.W
            d = space.scatter_add(dloc)
        for gids, mats in self._robin_blocks:
            np.add.at(d, gids, np.einsum("kaa->ka", mats))
        return d


def assemble(space: FunctionSpace, lam: float,
             robin: list[tuple[str, float]] | None = None) -> HelmholtzSystem:
    """Assemble the matrix-free Helmholtz operator lam*<phi,u> + <grad phi,grad u>."""
    return HelmholtzSystem(space, lam, robin)


# ----------------------------------------------------------------------------
# load builders
# ----------------------------------------------------------------------------

def mass_load(space: FunctionSpace, f) -> np.ndarray:
    """<phi, f> for nodal data f (global vector or element-local array)."""
    loc = space.gather(np.asarray(f, dtype=float)) if np.ndim(f) == 1 else np.asarray(f)
    if space.collocated:
        return space.scatter_add(space.geo.W * loc)
    P = space.interp_q
    fq = np.einsum("qa,rb,eab->eqr", P, P, loc)
    return space.scatter_add(np.einsum("qa,rb,eqr->eab", P, P, space.geo.W * fq))


def weak_gradient_load(space: FunctionSpace, F1, F2) -> np.ndarray:
    """<grad phi, F> for an element-local vector field F at the solution nodes."""
    if not space.collocated:
        raise NotImplementedError("weak gradient load requires the collocated path")
    g = space.geo
    a1 = g.W * (g.xi_x * F1 + g.xi_y * F2)
    a2 = g.W * (g.eta_x * F1 + g.eta_y * F2)
    D = space.basis.diff_matrix
    r = np.einsum("ki,ekj->eij", D, a1) + np.einsum("kj,eik->eij", D, a2)
    return space.scatter_add(r)


def edge_load(space: FunctionSpace, label: str, values, out: np.ndarray | None = None
              ) -> np.ndarray:
    """<phi, h>_edge for data h given at the composite's quadrature nodes.

    ``values`` has shape (ne, q+1) (or broadcasts to it).
    """
    blk = space.edge_blocks[label]
    vals = np.broadcast_to(np.asarray(values, dtype=float), blk.qweights.shape)
    contrib = np.einsum("kq,qa->ka", vals * blk.qweights, blk.interp)
    if out is None:
        out = np.zeros(space.num_nodes)
    np.add.at(out, blk.node_gids, contrib)
    return out


def dirichlet_data(space: FunctionSpace, bcs: list[BoundaryCondition],
                   t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(mask, values) of strongly imposed nodes from the Dirichlet conditions.

    Conditions are applied in list order; at corners shared by two Dirichlet
    composites the later condition wins.
    """
    mask = np.zeros(space.num_nodes, dtype=bool)
    values = np.zeros(space.num_nodes)
    for bc in bcs:
        if bc.kind is not BCKind.DIRICHLET:
            continue
        blk = space.edge_blocks[bc.composite]
        vals = bc.resolve(blk.node_coords, t)
        mask[blk.node_gids] = True
        values[blk.node_gids] = vals
    return mask, values


# ----------------------------------------------------------------------------
# preconditioned conjugate gradients
# ----------------------------------------------------------------------------

def pcg(system: HelmholtzSystem, b: np.ndarray,
        dirichlet: tuple[np.ndarray, np.ndarray] | None = None,
        tol: float = 1e-10, maxiter: int = 10000,
        x0: np.ndarray | None = None) -> tuple[np.ndarray, int, float]:
    """Solve system*x = b with Jacobi-PCG.

    Returns (x, iterations, relative residual).  Dirichlet dofs are lifted:
    the returned x carries the prescribed values.  Pure-Neumann Poisson
    systems (lam = 0, empty Dirichlet set, no Robin) are solved in the
    zero-mean quotient space.
    """
    n = system.space.num_nodes
    if dirichlet is None:
        fixed = np.zeros(n, dtype=bool)
        xd = np.zeros(n)
    else:
        fixed, xd = dirichlet
        xd = np.where(fixed, xd, 0.0)
    free = ~fixed

    pin = (system.lam == 0.0 and not fixed.any() and not system._robin_blocks)

    b_eff = b.copy()
    if fixed.any():
        b_eff -= system.apply(xd)
    b_eff[fixed] = 0.0
    if pin:
        b_eff -= b_eff.mean()

    bnorm = float(np.linalg.norm(b_eff))
    if bnorm == 0.0:
        return xd.copy(), 0, 0.0

    diag = np.where(free, system.diagonal, 1.0)

    x = np.zeros(n) if x0 is None else np.where(free, x0, 0.0)
    if pin and x0 is not None:
        x -= x.mean()
    r = b_eff - system.apply(x)
    r[fixed] = 0.0
    if pin:
        r -= r.mean()
    z = r / diag
    if pin:
        z -= z.mean()
    p = z.copy()
    rz = float(r @ z)
    relres = float(np.linalg.norm(r)) / bnorm
    it = 0
    while relres > tol:
        if it >= maxiter:
            raise EllipticSolveError(
                f"conjugate gradients stalled at relative residual {relres:.3e} "
                f"after {maxiter} iterations (indefinite system or bad bcs?)")
        Ap = system.apply(p)
        Ap[fixed] = 0.0
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if pin:
            x -= x.mean()
            r -= r.mean()
        z = r / diag
        if pin:
            z -= z.mean()
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        relres = float(np.linalg.norm(r)) / bnorm
        it += 1
    return x + xd, it, relres


# ----------------------------------------------------------------------------
# high-level solve
# ----------------------------------------------------------------------------

def solve(system: HelmholtzSystem, rhs, bcs: list[BoundaryCondition] | None = None,
          tol: float = 1e-10, maxiter: int = 10000,
          x0: np.ndarray | None = None, t: float | None = None,
          info: dict | None = None) -> Field:
    """Solve lam*u - lap(u) = rhs weakly with the given boundary conditions.

    ``rhs`` may be a Field, a nodal vector, or a callable f(x, y).  Every
    boundary composite of the mesh must carry exactly one condition (periodic
    composites excepted).
    """
    space = system.space
    bcs = list(bcs or [])
    covered = {bc.composite for bc in bcs}
    needed = set(space.mesh.composites) - space.periodic_labels
    missing = needed - covered
    if missing:
        raise EllipticSolveError(f"missing boundary condition for composite(s) "
                                 f"{sorted(missing)}")
    unknown = covered - set(space.mesh.composites)
    if unknown:
        raise EllipticSolveError(f"boundary condition references unknown composite(s) "
                                 f"{sorted(unknown)}")
    robin_declared = [(bc.composite, bc.robin_coefficient)
                      for bc in bcs if bc.kind is BCKind.ROBIN]
    if sorted(robin_declared) != sorted(system.robin):
        raise EllipticSolveError(
            "Robin composites/coefficients of the bcs do not match the assembled "
            f"system (system {sorted(system.robin)}, bcs {sorted(robin_declared)})")

    if isinstance(rhs, Field):
        f = rhs.values[:, 0]
    elif callable(rhs):
        xy = space.node_coords
        f = np.asarray(rhs(xy[:, 0], xy[:, 1]), dtype=float)
    else:
        f = np.asarray(rhs, dtype=float)
    b = mass_load(space, f)

    for bc in bcs:
        if bc.kind in (BCKind.NEUMANN, BCKind.ROBIN, BCKind.HIGH_ORDER_PRESSURE):
            blk = space.edge_blocks[bc.composite]
            h = bc.resolve(blk.qcoords, t)
            edge_load(space, bc.composite, h, out=b)

    mask, vals = dirichlet_data(space, bcs, t)
    x, iters, relres = pcg(system, b, (mask, vals), tol=tol, maxiter=maxiter, x0=x0)
    if info is not None:
        info["iterations"] = iters
        info["relative_residual"] = relres
    return Field(space, x)
