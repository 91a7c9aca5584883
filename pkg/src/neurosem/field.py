"""Continuous-Galerkin function spaces and nodal fields on quad meshes.

A :class:`FunctionSpace` pairs a mesh with an order-n GLL tensor basis and
builds the shared-node global numbering: vertex nodes are shared by all
incident elements, edge nodes by the two adjacent elements (matched along the
undirected edge so numbering is single-valued), interior nodes are private.
It also precomputes the bilinear geometry factors at the quadrature grid and
per-composite boundary edge data (nodes, unit outward normals, arc-length
quadrature weights).

A :class:`Field` is a global coefficient vector on such a space (1 component
for scalars, 2 for velocity) with point evaluation by bilinear-map inversion
plus tensor-product Lagrange interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import EDGE_VERTS, QuadMesh
from .quadrature import basis_for_order, lagrange_interpolation_matrix

__all__ = ["FunctionSpace", "Field", "EdgeBlock", "PointLocationError"]


class PointLocationError(ValueError):
    """A query point could not be located inside any mesh element."""


def _bilinear_shape(xi, eta):
    """Bilinear shape functions and their reference derivatives.

    Returns (N, N_xi, N_eta), each (4, ...) stacked over the corner index in
    counterclockwise order.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    N = 0.25 * np.stack([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    N_xi = 0.25 * np.stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    N_eta = 0.25 * np.stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return N, N_xi, N_eta


# local (i, j) index paths along each local edge, in counterclockwise traversal
def _edge_ij(s: int, m: int):
    r = np.arange(m)
    if s == 0:
        return r, np.zeros(m, dtype=int)
    if s == 1:
        return np.full(m, m - 1, dtype=int), r
    if s == 2:
        return r[::-1], np.full(m, m - 1, dtype=int)
    return np.zeros(m, dtype=int), r[::-1]


@dataclass
class EdgeBlock:
    """Precomputed data for one boundary composite."""

    label: str
    elements: np.ndarray        # (ne,)
    edges: np.ndarray           # (ne,) local edge ids
    node_gids: np.ndarray       # (ne, p+1) global node ids along each edge (ccw)
    node_coords: np.ndarray     # (ne, p+1, 2)
    node_ij: tuple[np.ndarray, np.ndarray]   # local (i, j) index paths, each (ne, p+1)
    normals: np.ndarray         # (ne, p+1, 2) unit outward normals at nodes
    qweights: np.ndarray        # (ne, q+1) 1D quadrature weight x arc jacobian
    qcoords: np.ndarray         # (ne, q+1, 2)
    qnormals: np.ndarray        # (ne, q+1, 2)
    interp: np.ndarray          # (q+1, p+1) edge interpolation, identity if collocated

    @property
    def unique_gids(self) -> np.ndarray:
        return np.unique(self.node_gids)


class _Geometry:
    """Bilinear geometry factors of all elements at one tensor grid."""

    def __init__(self, mesh: QuadMesh, nodes1d: np.ndarray, weights1d: np.ndarray):
        m = len(nodes1d)
        xi = np.repeat(nodes1d, m).reshape(m, m)       # [i, j] -> nodes[i]
        eta = np.tile(nodes1d, m).reshape(m, m)        # [i, j] -> nodes[j]
        N, N_xi, N_eta = _bilinear_shape(xi, eta)
        cx = mesh.vertices[mesh.elements][:, :, 0]     # (Ne, 4)
        cy = mesh.vertices[mesh.elements][:, :, 1]
        self.x = np.einsum("ek,kij->eij", cx, N)
        self.y = np.einsum("ek,kij->eij", cy, N)
        x_xi = np.einsum("ek,kij->eij", cx, N_xi)
        x_eta = np.einsum("ek,kij->eij", cx, N_eta)
        y_xi = np.einsum("ek,kij->eij", cy, N_xi)
        y_eta = np.einsum("ek,kij->eij", cy, N_eta)
        self.detJ = x_xi * y_eta - x_eta * y_xi
        if self.detJ.min() <= 0.0:
            raise ValueError("element with non-positive Jacobian at quadrature points")
        self.xi_x = y_eta / self.detJ
        self.xi_y = -x_eta / self.detJ
        self.eta_x = -y_xi / self.detJ
        self.eta_y = x_xi / self.detJ
        self.W = weights1d[:, None] * weights1d[None, :] * self.detJ  # (Ne, m, m)


class FunctionSpace:
    """Order-n continuous-Galerkin GLL space on a quad mesh.

    Parameters
    ----------
    mesh : QuadMesh
    order : polynomial order n >= 1 per direction.
    quad_order : quadrature basis order; defaults to max(order, 2).  Equal to
        ``order`` gives the classic collocated spectral-element fast path
        (diagonal mass); order 1 is promoted to a 3-point rule so that the
        bilinear stiffness is exactly integrated.
    periodic : optional list of composite-label pairs to identify (e.g.
        ``[("left", "right")]``); paired composites stop being boundaries.
    """

    def __init__(self, mesh: QuadMesh, order: int,
                 quad_order: int | None = None,
                 periodic: list[tuple[str, str]] | None = None):
        self.mesh = mesh
        self.order = int(order)
        self.basis = basis_for_order(self.order)
        q = quad_order if quad_order is not None else max(self.order, 2)
        if q < self.order:
            raise ValueError("quadrature order below basis order")
        self.qbasis = basis_for_order(q)
        self.collocated = (q == self.order)

        self._build_numbering()
        self.periodic_labels: set[str] = set()
        if periodic:
            for pair in periodic:
                self._merge_periodic(*pair)

        self.geo = _Geometry(mesh, self.qbasis.nodes, self.qbasis.weights)
        if self.collocated:
            self.geo_nodes = self.geo
        else:
            self.geo_nodes = _Geometry(mesh, self.basis.nodes, self.basis.weights)
        # interpolation / derivative operators from solution nodes to the
        # quadrature grid (identity / diff matrix in the collocated case)
        self.interp_q = self.basis.interpolation_to(self.qbasis.nodes)
        self.deriv_q = self.basis.derivative_to(self.qbasis.nodes)

        self.node_coords = self._node_coordinates()
        self.multiplicity = np.zeros(self.num_nodes)
        np.add.at(self.multiplicity, self.gmap, 1.0)

        self.edge_blocks: dict[str, EdgeBlock] = {
            label: self._build_edge_block(label) for label in mesh.composites
        }
        self._centroids = mesh.centroids()
        self._mass = None

    # ------------------------------------------------------------------
    # numbering
    # ------------------------------------------------------------------

    def _build_numbering(self):
        mesh, p = self.mesh, self.order
        ne = mesh.num_elements
        gmap = -np.ones((ne, p + 1, p + 1), dtype=np.int64)

        # vertices first: global id = vertex id
        corner_ij = ((0, 0), (p, 0), (p, p), (0, p))
        for e in range(ne):
            for k, (i, j) in enumerate(corner_ij):
                gmap[e, i, j] = mesh.elements[e, k]
        next_id = mesh.num_vertices

        # edge interiors: one block per undirected edge, ordered from the
        # smaller to the larger vertex id so both sides agree
        if p >= 2:
            edge_ids: dict[tuple[int, int], np.ndarray] = {}
            for e in range(ne):
                for s in range(4):
                    a, b = mesh.edge_vertex_ids(e, s)
                    key = (min(a, b), max(a, b))
                    block = edge_ids.get(key)
                    if block is None:
                        block = np.arange(next_id, next_id + p - 1)
                        edge_ids[key] = block
                        next_id += p - 1
                    ii, jj = _edge_ij(s, p + 1)
                    ids = block if a < b else block[::-1]
                    gmap[e, ii[1:-1], jj[1:-1]] = ids

            # element interiors
            for e in range(ne):
                count = (p - 1) ** 2
                gmap[e, 1:p, 1:p] = np.arange(next_id, next_id + count).reshape(p - 1, p - 1)
                next_id += count

        assert (gmap >= 0).all()
        self.gmap = gmap
        self.num_nodes = next_id

    def _node_coordinates(self) -> np.ndarray:
        nodes1d = self.basis.nodes
        m = len(nodes1d)
        xi = np.repeat(nodes1d, m).reshape(m, m)
        eta = np.tile(nodes1d, m).reshape(m, m)
        N, _, _ = _bilinear_shape(xi, eta)
        cx = self.mesh.vertices[self.mesh.elements][:, :, 0]
        cy = self.mesh.vertices[self.mesh.elements][:, :, 1]
        ex = np.einsum("ek,kij->eij", cx, N)
        ey = np.einsum("ek,kij->eij", cy, N)
        coords = np.zeros((self.num_nodes, 2))
        coords[self.gmap, 0] = ex
        coords[self.gmap, 1] = ey
        return coords

    def _merge_periodic(self, label_a: str, label_b: str):
        """Identify global nodes of composite B with those of A (translated)."""
        ga = self._composite_node_gids(label_a)
        gb = self._composite_node_gids(label_b)
        if len(ga) != len(gb):
            raise ValueError(f"periodic composites {label_a!r}/{label_b!r} size mismatch")
        coords = self._node_coordinates()
        ca, cb = coords[ga], coords[gb]
        shift = cb.mean(axis=0) - ca.mean(axis=0)
        # match each B node to the A node at (B - shift)
        target = cb - shift
        order_a = np.lexsort((ca[:, 0], ca[:, 1]))
        order_b = np.lexsort((target[:, 0], target[:, 1]))
        if not np.allclose(ca[order_a], target[order_b], atol=1e-9):
            raise ValueError(f"periodic composites {label_a!r}/{label_b!r} do not match "
                             "under translation")
        remap = np.arange(self.num_nodes)
        remap[gb[order_b]] = ga[order_a]
        # compress ids
        self.gmap = remap[self.gmap]
        uniq, inv = np.unique(self.gmap, return_inverse=True)
        self.gmap = inv.reshape(self.gmap.shape).astype(np.int64)
        self.num_nodes = len(uniq)
        self.periodic_labels.update((label_a, label_b))

    def _composite_node_gids(self, label: str) -> np.ndarray:
        p = self.order
        gids = []
        for e, s in self.mesh.composites[label]:
            ii, jj = _edge_ij(s, p + 1)
            gids.append(self.gmap[e, ii, jj])
        return np.unique(np.concatenate(gids))

    # ------------------------------------------------------------------
    # boundary structures
    # ------------------------------------------------------------------

    def _build_edge_block(self, label: str) -> EdgeBlock:
        p, q = self.order, self.qbasis.order
        pairs = self.mesh.composites[label]
        ne = len(pairs)
        elements = np.array([e for e, _ in pairs], dtype=np.int64)
        edges = np.array([s for _, s in pairs], dtype=np.int64)
        node_gids = np.zeros((ne, p + 1), dtype=np.int64)
        node_coords = np.zeros((ne, p + 1, 2))
        normals = np.zeros((ne, p + 1, 2))
        qweights = np.zeros((ne, q + 1))
        qcoords = np.zeros((ne, q + 1, 2))
        qnormals = np.zeros((ne, q + 1, 2))
        iis = np.zeros((ne, p + 1), dtype=np.int64)
        jjs = np.zeros((ne, p + 1), dtype=np.int64)

        for k, (e, s) in enumerate(pairs):
            ii, jj = _edge_ij(s, p + 1)
            iis[k], jjs[k] = ii, jj
            node_gids[k] = self.gmap[e, ii, jj]
            a, b = EDGE_VERTS[s]
            ca = self.mesh.vertices[self.mesh.elements[e, a]]
            cb = self.mesh.vertices[self.mesh.elements[e, b]]
            mid, half = 0.5 * (ca + cb), 0.5 * (cb - ca)
            node_coords[k] = mid + np.outer(self.basis.nodes, half)
            qcoords[k] = mid + np.outer(self.qbasis.nodes, half)
            # straight edges: constant tangent; outward normal of a ccw
            # element is the tangent rotated by -90 degrees
            tlen = np.hypot(*half)
            nvec = np.array([half[1], -half[0]]) / tlen
            normals[k] = nvec
            qnormals[k] = nvec
            qweights[k] = self.qbasis.weights * tlen

        interp = (np.eye(p + 1) if self.collocated
                  else lagrange_interpolation_matrix(self.basis.nodes, self.qbasis.nodes))
        return EdgeBlock(label, elements, edges, node_gids, node_coords,
                         (iis, jjs), normals, qweights, qcoords, qnormals, interp)

    # ------------------------------------------------------------------
    # gather / scatter
    # ------------------------------------------------------------------

    def gather(self, vec: np.ndarray) -> np.ndarray:
        """Global vector -> element-local (Ne, p+1, p+1[, ncomp]) array."""
        return vec[self.gmap]

    def scatter_add(self, local: np.ndarray) -> np.ndarray:
        """Element-local contributions summed into a global vector."""
        out = np.zeros((self.num_nodes,) + local.shape[3:])
        np.add.at(out, self.gmap, local)
        return out

    def average_to_nodes(self, local: np.ndarray) -> np.ndarray:
        """Multiplicity-weighted average of element-local values at shared nodes."""
        out = self.scatter_add(local)
        mult = self.multiplicity.reshape((-1,) + (1,) * (out.ndim - 1))
        return out / mult

    @property
    def mass_vector(self) -> np.ndarray:
        """Assembled diagonal (collocated) mass: integral of each cardinal."""
        if self._mass is None:
            if self.collocated:
                self._mass = self.scatter_add(self.geo.W)
            else:
                P = self.interp_q
                local = np.einsum("qa,eqr,rb->eab", P, self.geo.W,
                                  P @ np.ones((self.order + 1, self.order + 1)))
                # row sums of the consistent mass = integrals of cardinals
                self._mass = self.scatter_add(local)
        return self._mass

    def integrate(self, nodal: np.ndarray) -> float:
        """Integral over the mesh of a (global) nodal field."""
        if self.collocated:
            return float(np.einsum("eij,eij->", self.geo.W, self.gather(nodal)))
        P = self.interp_q
        at_q = np.einsum("qa,rb,eab->eqr", P, P, self.gather(nodal))
        return float(np.einsum("eqr,eqr->", self.geo.W, at_q))

    # element-local physical gradient at the *solution* nodes
    def element_gradient(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        loc = self.gather(vec)
        D = self.basis.diff_matrix
        u_xi = np.einsum("ik,ekj->eij", D, loc)
        u_eta = np.einsum("jk,eik->eij", D, loc)
        g = self.geo_nodes
        return (g.xi_x * u_xi + g.eta_x * u_eta,
                g.xi_y * u_xi + g.eta_y * u_eta)

    # ------------------------------------------------------------------
    # point location and evaluation
    # ------------------------------------------------------------------

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Find (element, reference coords) for each query point.

        Nearest-centroid candidates are tried first; the bilinear map is
        inverted by Newton iteration; containment tolerance 1e-10 in
        reference coordinates.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        npts = len(pts)
        d2 = ((pts[:, None, :] - self._centroids[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        elem = -np.ones(npts, dtype=np.int64)
        ref = np.zeros((npts, 2))
        corners = self.mesh.vertices[self.mesh.elements]    # (Ne, 4, 2)

        unresolved = np.arange(npts)
        for rank in range(self.mesh.num_elements):
            if unresolved.size == 0:
                break
            cand = order[unresolved, rank]
            c = corners[cand]                                # (m, 4, 2)
            target = pts[unresolved]
            xi = np.zeros((len(cand), 2))
            for _ in range(25):
                N, N_xi, N_eta = _bilinear_shape(xi[:, 0], xi[:, 1])
                pos = np.einsum("km,kmd->md", N, c.transpose(1, 0, 2))
                res = pos - target
                j11 = np.einsum("km,km->m", N_xi, c[:, :, 0].T)
                j12 = np.einsum("km,km->m", N_eta, c[:, :, 0].T)
                j21 = np.einsum("km,km->m", N_xi, c[:, :, 1].T)
                j22 = np.einsum("km,km->m", N_eta, c[:, :, 1].T)
                det = j11 * j22 - j12 * j21
                det = np.where(np.abs(det) < 1e-300, 1.0, det)
                dxi = (j22 * res[:, 0] - j12 * res[:, 1]) / det
                deta = (-j21 * res[:, 0] + j11 * res[:, 1]) / det
                xi[:, 0] -= dxi
                xi[:, 1] -= deta
                if max(np.abs(dxi).max(initial=0.0), np.abs(deta).max(initial=0.0)) < 1e-13:
                    break
            ok = np.abs(xi).max(axis=1) <= 1.0 + 1e-10
            hits = unresolved[ok]
            elem[hits] = cand[ok]
            ref[hits] = np.clip(xi[ok], -1.0, 1.0)
            unresolved = unresolved[~ok]
        if unresolved.size:
            p = pts[unresolved[0]]
            raise PointLocationError(
                f"{unresolved.size} point(s) outside the mesh, e.g. ({p[0]}, {p[1]})")
        return elem, ref

    def centroid_points(self) -> np.ndarray:
        return self._centroids.copy()


class Field:
    """Nodal coefficient vector on a FunctionSpace (1 or 2 components)."""

    def __init__(self, space: FunctionSpace, values: np.ndarray | None = None,
                 ncomp: int = 1):
        self.space = space
        if values is None:
            values = np.zeros((space.num_nodes, ncomp))
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape != (space.num_nodes, values.shape[1]):
            raise ValueError("coefficient count must equal number of global nodes")
        self.values = values

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    @property
    def mesh(self) -> QuadMesh:
        return self.space.mesh

    @property
    def order(self) -> int:
        return self.space.order

    @classmethod
    def from_callable(cls, space: FunctionSpace, fn, ncomp: int = 1) -> "Field":
        xy = space.node_coords
        vals = np.asarray(fn(xy[:, 0], xy[:, 1]), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        else:
            vals = vals.T if vals.shape[0] == ncomp else vals
        return cls(space, vals, ncomp)

    def copy(self) -> "Field":
        return Field(self.space, self.values.copy())

    def component(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def evaluate(self, points, gradient: bool = False):
        """Evaluate (and optionally differentiate) the field at physical points.

        Returns values with shape (N,) for scalar fields or (N, ncomp)
        otherwise; gradients have a trailing axis of length 2.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        space = self.space
        elem, ref = space.locate(pts)
        nodes = space.basis.nodes
        L1 = lagrange_interpolation_matrix(nodes, ref[:, 0])   # (N, p+1)
        L2 = lagrange_interpolation_matrix(nodes, ref[:, 1])
        U = self.values[space.gmap[elem]]                      # (N, p+1, p+1, c)
        vals = np.einsum("ni,nj,nijc->nc", L1, L2, U)
        if not gradient:
            return vals[:, 0] if self.ncomp == 1 else vals

        D = space.basis.diff_matrix
        dL1 = L1 @ D
        dL2 = L2 @ D
        du_dxi = np.einsum("ni,nj,nijc->nc", dL1, L2, U)
        du_deta = np.einsum("ni,nj,nijc->nc", L1, dL2, U)
        # bilinear Jacobian at the reference points
        c = space.mesh.vertices[space.mesh.elements[elem]]     # (N, 4, 2)
        _, N_xi, N_eta = _bilinear_shape(ref[:, 0], ref[:, 1])
        x_xi = np.einsum("kn,nk->n", N_xi, c[:, :, 0])
        x_eta = np.einsum("kn,nk->n", N_eta, c[:, :, 0])
        y_xi = np.einsum("kn,nk->n", N_xi, c[:, :, 1])
        y_eta = np.einsum("kn,nk->n", N_eta, c[:, :, 1])
        det = x_xi * y_eta - x_eta * y_xi
        du_dx = (y_eta[:, None] * du_dxi - y_xi[:, None] * du_deta) / det[:, None]
        du_dy = (-x_eta[:, None] * du_dxi + x_xi[:, None] * du_deta) / det[:, None]
        grads = np.stack([du_dx, du_dy], axis=-1)              # (N, c, 2)
        if self.ncomp == 1:
            return vals[:, 0], grads[:, 0, :]
        return vals, grads

    def edge_gradient(self, label: str):
        """One-sided physical gradient along a boundary composite.

        Returns (coords (ne, p+1, 2), gids (ne, p+1), grads (ne, p+1, ncomp, 2)),
        computed element-locally from each boundary element (no averaging;
        callers may combine duplicate corner nodes by gid).
        """
        space = self.space
        block = space.edge_blocks[label]
        grads = []
        for comp in range(self.ncomp):
            gx, gy = space.element_gradient(self.values[:, comp])
            iis, jjs = block.node_ij
            ex = gx[block.elements[:, None], iis, jjs]
            ey = gy[block.elements[:, None], iis, jjs]
            grads.append(np.stack([ex, ey], axis=-1))
        return block.node_coords, block.node_gids, np.stack(grads, axis=2)
