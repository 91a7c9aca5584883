"""Quadrilateral meshes: geometry, boundary composites, file format, generators.

Elements are straight-edged (bilinear) quads listed counterclockwise.  Local
edge k of an element connects local vertices k and (k+1) % 4:

        3 --- 2          edge 0: v0-v1 (bottom in the reference square)
        |     |          edge 1: v1-v2 (right)
        0 --- 1          edge 2: v2-v3 (top)
                         edge 3: v3-v0 (left)

Boundary edges are grouped into named *composites* ("bottom", "hole", ...)
on which boundary conditions are imposed.  The mesh file format is JSON with
three keys: ``vertices`` (list of [x, y]), ``elements`` (list of 4 vertex
indices), ``composites`` (label -> list of [element, edge]).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MeshError",
    "QuadMesh",
    "load_mesh",
    "save_mesh",
    "structured_rectangle",
    "cutout_square",
]

# local vertex pairs of the four edges
EDGE_VERTS = ((0, 1), (1, 2), (2, 3), (3, 0))


class MeshError(ValueError):
    """Invalid mesh geometry, topology or composite structure."""


@dataclass(frozen=True)
class QuadMesh:
    vertices: np.ndarray            # (num_vertices, 2) float
    elements: np.ndarray            # (num_elements, 4) int, counterclockwise
    composites: dict[str, tuple[tuple[int, int], ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "elements", np.asarray(self.elements, dtype=np.int64))
        comps = {str(k): tuple((int(e), int(s)) for e, s in v)
                 for k, v in self.composites.items()}
        object.__setattr__(self, "composites", comps)
        self._validate()

    # -- basic queries ------------------------------------------------------

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def element_corners(self, e: int) -> np.ndarray:
        """(4, 2) physical corner coordinates of element e."""
        return self.vertices[self.elements[e]]

    def edge_vertex_ids(self, e: int, s: int) -> tuple[int, int]:
        a, b = EDGE_VERTS[s]
        return int(self.elements[e, a]), int(self.elements[e, b])

    def edge_table(self) -> dict[tuple[int, int], list[tuple[int, int, bool]]]:
        """Map undirected edge (min vid, max vid) -> [(element, local edge, forward)].

        ``forward`` is True when the element traverses the edge from the
        smaller to the larger vertex id.
        """
        table: dict[tuple[int, int], list[tuple[int, int, bool]]] = {}
        for e in range(self.num_elements):
            for s in range(4):
                a, b = self.edge_vertex_ids(e, s)
                key = (min(a, b), max(a, b))
                table.setdefault(key, []).append((e, s, a < b))
        return table

    def boundary_edges(self) -> list[tuple[int, int]]:
        """All (element, local edge) pairs lying on the mesh boundary."""
        return [entries[0][:2] for entries in self.edge_table().values()
                if len(entries) == 1]

    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def extent(self) -> tuple[float, float, float, float]:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return float(x.min()), float(x.max()), float(y.min()), float(y.max())

    # -- validation ---------------------------------------------------------

    def _validate(self):
        errors = []
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an array of [x, y] pairs")
        if self.elements.ndim != 2 or self.elements.shape[1] != 4:
            raise MeshError("elements must be an array of 4 vertex indices")
        if self.elements.size and (self.elements.min() < 0
                                   or self.elements.max() >= self.num_vertices):
            raise MeshError("element vertex index out of range")

        # bilinear Jacobian is linear per reference coordinate, so strict
        # positivity at the four corners implies positivity everywhere
        corners = self.vertices[self.elements]          # (Ne, 4, 2)
        for e in range(self.num_elements):
            c = corners[e]
            for k in range(4):
                v1 = c[(k + 1) % 4] - c[k]
                v2 = c[(k + 3) % 4] - c[k]
                if v1[0] * v2[1] - v1[1] * v2[0] <= 0.0:
                    errors.append(
                        f"element {e} is not counterclockwise-convex at corner {k} "
                        "(bilinear Jacobian not strictly positive)")
                    break

        table = self.edge_table()
        for key, entries in table.items():
            if len(entries) > 2:
                errors.append(f"edge {key} shared by {len(entries)} elements")
            elif len(entries) == 2 and entries[0][2] == entries[1][2]:
                errors.append(
                    f"edge {key} traversed in the same direction by elements "
                    f"{entries[0][0]} and {entries[1][0]} (inconsistent orientation)")

        boundary = {tuple(be) for be in self.boundary_edges()}
        seen: dict[tuple[int, int], str] = {}
        for label, pairs in self.composites.items():
            for e, s in pairs:
                if not (0 <= e < self.num_elements and 0 <= s < 4):
                    errors.append(f"composite {label!r} entry ({e},{s}) out of range")
                    continue
                if (e, s) not in boundary:
                    errors.append(f"composite {label!r} entry ({e},{s}) is not a boundary edge")
                if (e, s) in seen:
                    errors.append(f"boundary edge ({e},{s}) in composites "
                                  f"{seen[(e, s)]!r} and {label!r}")
                seen[(e, s)] = label
        missing = boundary - set(seen)
        if missing:
            errors.append(f"{len(missing)} boundary edge(s) belong to no composite, "
                          f"e.g. {sorted(missing)[0]}")
        if errors:
            raise MeshError("; ".join(errors))


# ----------------------------------------------------------------------------
# File format
# ----------------------------------------------------------------------------

def save_mesh(mesh: QuadMesh, path) -> None:
    doc = {
        "vertices": mesh.vertices.tolist(),
        "elements": mesh.elements.tolist(),
        "composites": {k: [list(p) for p in v] for k, v in mesh.composites.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_mesh(path) -> QuadMesh:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return QuadMesh(np.array(doc["vertices"], dtype=float),
                        np.array(doc["elements"], dtype=np.int64),
                        {k: [tuple(p) for p in v] for k, v in doc["composites"].items()})
    except KeyError as exc:
        raise MeshError(f"mesh file {path} missing key {exc}") from exc


# ----------------------------------------------------------------------------
# Generators
# ----------------------------------------------------------------------------

def structured_rectangle(nx: int, ny: int, x0: float = 0.0, x1: float = 1.0,
                         y0: float = 0.0, y1: float = 1.0) -> QuadMesh:
    """nx-by-ny structured quad mesh of [x0,x1]x[y0,y1].

    Boundary composites are named bottom/right/top/left.
    """
    if nx < 1 or ny < 1:
        raise MeshError("structured mesh needs nx, ny >= 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    vid = lambda i, j: j * (nx + 1) + i
    verts = np.array([[x, y] for y in ys for x in xs])
    elems, comps = [], {"bottom": [], "right": [], "top": [], "left": []}
    for j in range(ny):
        for i in range(nx):
            e = len(elems)
            elems.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
            if j == 0:
                comps["bottom"].append((e, 0))
            if i == nx - 1:
                comps["right"].append((e, 1))
            if j == ny - 1:
                comps["top"].append((e, 2))
            if i == 0:
                comps["left"].append((e, 3))
    return QuadMesh(verts, np.array(elems), comps)


def cutout_square(n: int, hole: tuple[float, float] = (0.4, 0.6)) -> QuadMesh:
    """n-by-n unit-square mesh with the axis-aligned square [a,b]^2 removed.

    The hole boundary gets the composite label ``"hole"``; its edge normals
    (as computed by the discretization) point out of the retained region,
    i.e. *into* the hole.  The hole extents must line up with mesh lines:
    n*a and n*b must be integers with 0 < n*a < n*b < n.
    """
    a, b = hole
    ia, ib = n * a, n * b
    if abs(ia - round(ia)) > 1e-9 or abs(ib - round(ib)) > 1e-9:
        raise MeshError(
            f"hole extents {hole} do not align with the {n}x{n} mesh lines "
            f"(n*a={ia}, n*b={ib} must be integers)")
    ia, ib = int(round(ia)), int(round(ib))
    if not (0 < ia < ib < n):
        raise MeshError(f"hole {hole} must lie strictly inside the unit square")

    full = structured_rectangle(n, n)
    inside = lambda i, j: ia <= i < ib and ia <= j < ib
    keep = [j * n + i for j in range(n) for i in range(n) if not inside(i, j)]
    renum = {old: new for new, old in enumerate(keep)}
    elems = full.elements[keep]

    comps = {k: [(renum[e], s) for e, s in v] for k, v in full.composites.items()}
    hole_edges = []
    for j in range(n):
        for i in range(n):
            if inside(i, j):
                continue
            e_new = renum[j * n + i]
            if j == ia - 1 and ia <= i < ib:
                hole_edges.append((e_new, 2))   # element below the hole, top edge
            if j == ib and ia <= i < ib:
                hole_edges.append((e_new, 0))   # element above the hole, bottom edge
            if i == ia - 1 and ia <= j < ib:
                hole_edges.append((e_new, 1))   # element left of the hole, right edge
            if i == ib and ia <= j < ib:
                hole_edges.append((e_new, 3))   # element right of the hole, left edge
    comps["hole"] = hole_edges

    used = np.unique(elems)
    vmap = -np.ones(full.num_vertices, dtype=np.int64)
    vmap[used] = np.arange(len(used))
    return QuadMesh(full.vertices[used], vmap[elems], comps)
