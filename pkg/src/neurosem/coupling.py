"""Feeding trained surrogates back into the marching solver.

Three injection mechanisms:

* buoyancy body force built from a temperature surrogate, f = (0, Ri*T);
* prescribed advection velocity for the scalar transport step;
* boundary traces (value / normal derivative / Robin combination) sampled
  along an interior cut-out interface and turned into boundary conditions.

A "surrogate" is anything with ``outputs``, ``region``, ``time_span``,
``evaluate`` and ``gradient``; the two implementations here wrap a trained
network and an exact nodal field (the latter is the stand-in used by the
consistency checks).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field as dfield

import numpy as np

from .autodiff import Tape
from .elliptic import BCKind, BoundaryCondition
from .field import Field, FunctionSpace
from .networks import load_model
from .stepping import BCSet, BodyForceSource, VelocityBC

__all__ = [
    "VARIABLES",
    "OutOfRangeWarning",
    "SurrogateHandle",
    "FieldSurrogate",
    "body_force_from_surrogate",
    "advection_from_surrogate",
    "buoyancy_source",
    "advection_callable",
    "InterfaceTrace",
    "extract_interface",
    "cutout_bcset",
    "save_trace",
    "load_trace",
    "trace_values_from_csv",
]

VARIABLES = ("u", "v", "p", "T")


class OutOfRangeWarning(UserWarning):
    """A surrogate was evaluated outside its declared validity region."""


def _check_region(handle, pts: np.ndarray) -> None:
    (xlo, xhi), (ylo, yhi) = handle.region
    tol = 1e-12 * max(xhi - xlo, yhi - ylo, 1.0)
    x, y = pts[:, 0], pts[:, 1]
    bad = ((x < xlo - tol) | (x > xhi + tol) |
           (y < ylo - tol) | (y > yhi + tol))
    if np.any(bad):
        handle.out_of_range = True
        warnings.warn(
            f"{int(bad.sum())}/{len(pts)} evaluation points leave the "
            f"validity region x in [{xlo}, {xhi}], y in [{ylo}, {yhi}]",
            OutOfRangeWarning, stacklevel=3)


def _as_points(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points have shape {pts.shape}, need (N, 2)")
    return pts


@dataclass
class SurrogateHandle:
    """A deserialized model plus the contract it was trained under.

    ``outputs`` names the model's output columns (a subset of u, v, p, T);
    ``region`` is ((xlo, xhi), (ylo, yhi)); ``time_span`` is (t0, t1) for
    models with a time input and None otherwise.  Evaluating outside the
    region or span raises :class:`OutOfRangeWarning` and latches the
    ``out_of_range`` flag -- the caller decides whether to proceed.
    """

    model: object
    params: np.ndarray
    outputs: tuple
    region: tuple
    time_span: tuple | None = None
    out_of_range: bool = dfield(default=False, init=False)

    def __post_init__(self):
        self.outputs = tuple(self.outputs)
        unknown = [v for v in self.outputs if v not in VARIABLES]
        if unknown or not self.outputs:
            raise ValueError(f"surrogate outputs must be a nonempty subset of "
                             f"{VARIABLES}, got {self.outputs}")
        out_dim = getattr(self.model, "out_dim", len(self.outputs))
        if out_dim != len(self.outputs):
            raise ValueError(f"model has {out_dim} outputs but "
                             f"{len(self.outputs)} were declared")
        (xlo, xhi), (ylo, yhi) = self.region
        if not (xlo < xhi and ylo < yhi):
            raise ValueError("validity region extents must be increasing")
        if self.time_span is not None:
            t0, t1 = self.time_span
            if not t0 < t1:
                raise ValueError("time span must be increasing")
        self.params = np.asarray(self.params, dtype=float)

    @classmethod
    def from_file(cls, path, outputs=None, region=None, time_span=None):
        """Load a saved model; contract fields default to its manifest."""
        model, params, manifest = load_model(path)
        outputs = manifest.get("outputs") if outputs is None else outputs
        region = manifest.get("region") if region is None else region
        if time_span is None:
            time_span = manifest.get("time_span")
        if outputs is None or region is None:
            raise ValueError(f"{path}: manifest lacks outputs/region; pass "
                             "them explicitly")
        return cls(model, params, tuple(outputs),
                   tuple((float(a), float(b)) for a, b in region),
                   None if time_span is None else tuple(time_span))

    # -- evaluation ----------------------------------------------------------

    def _inputs(self, points, t) -> np.ndarray:
        pts = _as_points(points)
        _check_region(self, pts)
        if self.time_span is None:
            return pts
        if t is None:
            raise ValueError("this surrogate is time-dependent; pass t")
        t0, t1 = self.time_span
        tcol = np.broadcast_to(np.asarray(t, dtype=float), len(pts))
        if np.any(tcol < t0 - 1e-12) or np.any(tcol > t1 + 1e-12):
            self.out_of_range = True
            warnings.warn(f"evaluation time leaves the trained span "
                          f"[{t0}, {t1}]", OutOfRangeWarning, stacklevel=3)
        return np.column_stack([pts, tcol])

    def _columns(self, names) -> list:
        names = self.outputs if names is None else tuple(names)
        missing = [v for v in names if v not in self.outputs]
        if missing:
            raise ValueError(f"surrogate does not provide variable(s) "
                             f"{missing}; it outputs {self.outputs}")
        return [(v, self.outputs.index(v)) for v in names]

    def evaluate(self, points, t=None, names=None) -> dict:
        """Point values, one (N,) array per requested variable."""
        X = self._inputs(points, t)
        cols = self._columns(names)
        out = np.asarray(self.model.forward(self.params, X), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return {v: out[:, c] for v, c in cols}

    def gradient(self, points, t=None, names=None) -> tuple:
        """Values and spatial gradients: ({var: (N,)}, {var: (N, 2)})."""
        X = self._inputs(points, t)
        cols = self._columns(names)
        tape = Tape()
        bound = self.model.bind(tape, self.params)
        if hasattr(self.model, "jet_points"):
            node = self.model.jet_points(bound, X, 1, True)
        else:
            node = self.model.jet(bound, X, 1, True)
        coeff = {k: np.atleast_2d(np.asarray(a).T).T for k, a in
                 ((key, node.value[key]) for key in [(), (0,), (1,)])}
        vals = {v: coeff[()][:, c] for v, c in cols}
        grads = {v: np.column_stack([coeff[(0,)][:, c], coeff[(1,)][:, c]])
                 for v, c in cols}
        return vals, grads


class FieldSurrogate:
    """Exact nodal fields dressed up as a surrogate.

    Wraps solver output so the injection mechanisms can be exercised with
    a known-good field (the consistency stubs), or so one solve can feed
    another without a network in between.
    """

    def __init__(self, space: FunctionSpace, arrays: dict, region=None):
        self.outputs = tuple(arrays)
        unknown = [v for v in self.outputs if v not in VARIABLES]
        if unknown or not self.outputs:
            raise ValueError(f"surrogate outputs must be a nonempty subset of "
                             f"{VARIABLES}, got {self.outputs}")
        if region is None:
            x0, x1, y0, y1 = space.mesh.extent()
            region = ((x0, x1), (y0, y1))
        self.region = region
        self.time_span = None
        self.out_of_range = False
        self._field = Field(space,
                            np.column_stack([np.asarray(arrays[v], dtype=float)
                                             for v in self.outputs]),
                            ncomp=len(self.outputs))

    def _columns(self, names) -> list:
        names = self.outputs if names is None else tuple(names)
        missing = [v for v in names if v not in self.outputs]
        if missing:
            raise ValueError(f"surrogate does not provide variable(s) "
                             f"{missing}; it outputs {self.outputs}")
        return [(v, self.outputs.index(v)) for v in names]

    def evaluate(self, points, t=None, names=None) -> dict:
        pts = _as_points(points)
        _check_region(self, pts)
        vals = np.atleast_2d(self._field.evaluate(pts).T).T
        return {v: vals[:, c] for v, c in self._columns(names)}

    def gradient(self, points, t=None, names=None) -> tuple:
        pts = _as_points(points)
        _check_region(self, pts)
        vals, grads = self._field.evaluate(pts, gradient=True)
        vals = np.atleast_2d(vals.T).T
        if grads.ndim == 2:
            grads = grads[:, None, :]
        cols = self._columns(names)
        return ({v: vals[:, c] for v, c in cols},
                {v: grads[:, c, :] for v, c in cols})


# ---------------------------------------------------------------------------
# volumetric injection (body force, advection)
# ---------------------------------------------------------------------------

def body_force_from_surrogate(handle, points, t=None, ri: float = 1.0,
                              ) -> np.ndarray:
    """(N, 2) samples of f = (0, Ri * T) at the given points.

    Ri = 0 short-circuits to zero without touching the surrogate.
    """
    pts = _as_points(points)
    f = np.zeros((len(pts), 2))
    if ri != 0.0:
        f[:, 1] = ri * handle.evaluate(pts, t, names=("T",))["T"]
    return f


def advection_from_surrogate(handle, points, t=None) -> np.ndarray:
    """(N, 2) samples of the surrogate velocity (u, v)."""
    pts = _as_points(points)
    uv = handle.evaluate(pts, t, names=("u", "v"))
    return np.column_stack([uv["u"], uv["v"]])


def buoyancy_source(handle, richardson: float) -> BodyForceSource:
    """Body-force source for the momentum step; re-evaluated every step."""

    def fn(x, y, t):
        f = body_force_from_surrogate(handle, np.column_stack([x, y]), t,
                                      ri=richardson)
        return f[:, 0], f[:, 1]

    return BodyForceSource.surrogate(fn)


def advection_callable(handle):
    """Advection-velocity source for the transport step."""

    def fn(x, y, t):
        uv = advection_from_surrogate(handle, np.column_stack([x, y]), t)
        return uv[:, 0], uv[:, 1]

    return fn


# ---------------------------------------------------------------------------
# interface traces
# ---------------------------------------------------------------------------

_TRACE_KINDS = ("dirichlet", "neumann", "robin")


@dataclass
class InterfaceTrace:
    """Surrogate samples along boundary composites, ready to impose.

    ``points``/``normals`` follow the target space's edge blocks, shape
    (ne, p+1, 2); ``values`` and ``normal_derivs`` map composite -> variable
    -> (ne, p+1).  Normal derivatives are only filled for Neumann/Robin
    traces.  ``data`` combines them into the boundary datum of ``kind``.
    """

    kind: str
    robin_coefficient: float
    composites: tuple
    variables: tuple
    points: dict
    normals: dict
    gids: dict
    values: dict
    normal_derivs: dict

    @property
    def bc_kind(self) -> BCKind:
        return {"dirichlet": BCKind.DIRICHLET, "neumann": BCKind.NEUMANN,
                "robin": BCKind.ROBIN}[self.kind]

    def data(self, var: str) -> dict:
        """composite -> (ne, p+1) datum: value, du/dn, or du/dn + R*u."""
        if var not in self.variables:
            raise ValueError(f"trace carries {self.variables}, not {var!r}")
        if self.kind == "dirichlet":
            return {lab: self.values[lab][var] for lab in self.composites}
        R = self.robin_coefficient
        out = {}
        for lab in self.composites:
            dn = self.normal_derivs[lab][var]
            out[lab] = dn if R == 0.0 else dn + R * self.values[lab][var]
        return out

    def boundary_conditions(self, var: str) -> list:
        datum = self.data(var)
        return [BoundaryCondition(lab, self.bc_kind, datum[lab],
                                  robin_coefficient=self.robin_coefficient)
                for lab in self.composites]


def extract_interface(handle, space: FunctionSpace, composites, kind: str,
                      R: float = 0.0, variables=None, t=None,
                      ) -> InterfaceTrace:
    """Sample the surrogate at the composites' boundary nodes.

    Pure function of its inputs: repeated calls are bitwise identical.
    """
    kind = str(kind).lower()
    if kind not in _TRACE_KINDS:
        raise ValueError(f"trace kind must be one of {_TRACE_KINDS}")
    if R < 0:
        raise ValueError("Robin coefficient must be >= 0")
    variables = tuple(handle.outputs if variables is None else variables)
    missing = [v for v in variables if v not in handle.outputs]
    if missing:
        raise ValueError(f"surrogate does not provide variable(s) {missing}; "
                         f"it outputs {tuple(handle.outputs)}")
    composites = (composites,) if isinstance(composites, str) else tuple(composites)

    points, normals, gids, values, derivs = {}, {}, {}, {}, {}
    for lab in composites:
        blk = space.edge_blocks[lab]
        pts = blk.node_coords.reshape(-1, 2)
        shape = blk.node_coords.shape[:2]
        points[lab] = blk.node_coords.copy()
        normals[lab] = blk.normals.copy()
        gids[lab] = blk.node_gids.copy()
        if kind == "dirichlet":
            vals = handle.evaluate(pts, t, names=variables)
            values[lab] = {v: vals[v].reshape(shape) for v in variables}
        else:
            vals, grads = handle.gradient(pts, t, names=variables)
            values[lab] = {v: vals[v].reshape(shape) for v in variables}
            nvec = blk.normals.reshape(-1, 2)
            derivs[lab] = {
                v: (grads[v][:, 0] * nvec[:, 0]
                    + grads[v][:, 1] * nvec[:, 1]).reshape(shape)
                for v in variables}
    return InterfaceTrace(kind, float(R), composites, variables,
                          points, normals, gids, values, derivs)


def cutout_bcset(trace: InterfaceTrace, outer: BCSet | None = None) -> BCSet:
    """Append the trace to a boundary-condition set for a cut-out solve.

    Velocity and temperature get the trace's own kind; pressure (when the
    trace carries it) is always imposed as a Dirichlet value on the
    interface, while the outer walls keep the splitting scheme's high-order
    closure.
    """
    outer = outer or BCSet()
    if trace.kind == "robin" and ("u" in trace.variables
                                  or "v" in trace.variables):
        raise ValueError("Robin traces apply to the temperature only")
    out = BCSet(velocity=list(outer.velocity),
                temperature=list(outer.temperature),
                pressure=list(outer.pressure))
    if "u" in trace.variables or "v" in trace.variables:
        if not ("u" in trace.variables and "v" in trace.variables):
            raise ValueError("velocity traces need both u and v")
        du, dv = trace.data("u"), trace.data("v")
        out.velocity += [VelocityBC(lab, trace.bc_kind, (du[lab], dv[lab]))
                         for lab in trace.composites]
    if "T" in trace.variables:
        out.temperature += trace.boundary_conditions("T")
    if "p" in trace.variables:
        out.pressure += [BoundaryCondition(lab, BCKind.DIRICHLET,
                                           trace.values[lab]["p"])
                         for lab in trace.composites]
    return out


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

def _chain_edges(node_gids: np.ndarray, label: str):
    """Order a composite's edges head-to-tail along the boundary.

    Returns ([(edge index, skip_first_node)], closed), following shared
    endpoint ids; works for open runs (a cavity side) and closed loops
    (a cut-out perimeter).
    """
    heads = {int(g[0]): k for k, g in enumerate(node_gids)}
    tails = {int(g[-1]) for g in node_gids}
    starts = [k for k, g in enumerate(node_gids) if int(g[0]) not in tails]
    closed = not starts
    k = min(starts) if starts else 0
    order, seen = [], set()
    while k not in seen:
        seen.add(k)
        order.append((k, len(seen) > 1))
        k = heads.get(int(node_gids[k][-1]), -1)
        if k < 0:
            break
    if len(seen) != len(node_gids):
        raise ValueError(f"composite {label!r} is not a single chain")
    return order, closed


def save_trace(trace: InterfaceTrace, path) -> None:
    """CSV rows (composite, x, y, variable, value), arc-length ordered.

    The value column is the boundary datum of the trace's kind.  Every edge
    node is written, so a corner shared by two edges appears twice (its
    Neumann datum differs per edge because the normals do).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["composite", "x", "y", "variable", "value"])
        for lab in trace.composites:
            order, _ = _chain_edges(trace.gids[lab], lab)
            for var in trace.variables:
                datum = trace.data(var)[lab]
                for k, _skip in order:
                    for xy, val in zip(trace.points[lab][k], datum[k]):
                        w.writerow([lab, "%.17g" % xy[0], "%.17g" % xy[1],
                                    var, "%.17g" % val])


def load_trace(path) -> dict:
    """Parse a trace CSV: composite -> variable -> (points (M, 2), values)."""
    out = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header != ["composite", "x", "y", "variable", "value"]:
            raise ValueError(f"{path} is not a trace file")
        for lab, x, y, var, val in rows:
            pts, vals = out.setdefault(lab, {}).setdefault(var, ([], []))
            pts.append((float(x), float(y)))
            vals.append(float(val))
    return {lab: {var: (np.array(p), np.array(v))
                  for var, (p, v) in d.items()}
            for lab, d in out.items()}


def trace_values_from_csv(path, space: FunctionSpace, composite: str,
                          var: str) -> np.ndarray:
    """Rebuild the (ne, p+1) boundary datum for a composite from a CSV.

    The rows are walked in the same arc-length order the writer used on
    this space, so the result aligns with the composite's edge block and
    is usable directly as a boundary-condition value array.
    """
    table = load_trace(path)
    try:
        pts, vals = table[composite][var]
    except KeyError:
        raise ValueError(f"{path} has no rows for composite {composite!r}, "
                         f"variable {var!r}") from None
    blk = space.edge_blocks[composite]
    order, _ = _chain_edges(blk.node_gids, composite)
    p1 = blk.node_coords.shape[1]
    if len(vals) != len(order) * p1:
        raise ValueError(f"{path}: composite {composite!r} has {len(vals)} "
                         f"rows, this space needs {len(order) * p1}")
    out = np.empty(blk.node_coords.shape[:2])
    idx = 0
    for k, _skip in order:
        for i in range(p1):
            if abs(pts[idx, 0] - blk.node_coords[k, i, 0]) > 1e-9 or \
               abs(pts[idx, 1] - blk.node_coords[k, i, 1]) > 1e-9:
                raise ValueError(f"{path}: row {idx} of composite "
                                 f"{composite!r} does not lie on this mesh")
            out[k, i] = vals[idx]
            idx += 1
    return out
