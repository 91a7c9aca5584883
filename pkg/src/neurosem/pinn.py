"""Physics-informed training for the buoyancy-driven cavity.

Five data-assimilation modes share one machinery.  Each mode assembles a
list of *terms*; a term is a residual array r (built from network jets on a
fresh tape every iteration) plus a fixed weight w, contributing
w * mean(r**2) to the loss.  The modes:

  A         scattered (u, v) -> train T against the energy residual + walls
  B         scattered T -> train (u, v, p) against momentum/continuity + walls
  C         noisy (u, v) and T, missing Dirichlet walls -> train T with a
            data-misfit term and the remaining adiabatic conditions
  D         data only inside a cut-out window -> train (u, v, p) and T nets
            jointly on misfits + all three PDE residuals, no walls
  unsteady  (x, y, t) inputs; the energy residual gains dT/dt and the loss
            gains an initial-condition term

Optional extras: a gradient-enhanced term penalizing the spatial gradient of
the energy residual (third-order jets), and self-adaptive per-point weights
lambda multiplying residuals inside the square, trained by gradient ascent.

Separable models evaluate on tensor grids; residual arrays are then (N, M)
and all reductions work unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Node,
    Tape,
    add,
    column,
    grad,
    jet_coeff,
    mean,
    mul,
    scale,
    square,
    sub,
)
from .networks import AdamState, SeparableModel, adam_step

__all__ = [
    "Physics", "ScatteredData", "GridData", "BoundaryPatch", "LossSpec",
    "PinnProblem", "TrainResult", "TrainingDivergedError",
    "build_loss", "loss_and_grads", "train", "init_adaptive",
    "self_adaptive_step", "residual_continuity", "residual_momentum",
    "residual_energy", "gradient_enhanced_residuals",
    "cavity_thermal_boundary", "cavity_velocity_boundary",
]

SCENARIOS = ("A", "B", "C", "D", "unsteady")

# weights each scenario's loss may carry (everything defaults to 1)
_LEGAL_WEIGHTS = {
    "A": {"w_u", "w_b", "w_g"},
    "B": {"w_T", "w_f", "w_b"},
    "C": {"w_u", "w_T", "w_b"},
    "D": {"w_u", "w_T", "w_f1", "w_f2", "w_f3"},
    "unsteady": {"w_u", "w_b", "w_i"},
}


@dataclass(frozen=True)
class Physics:
    """Nondimensional groups; inverse coefficients collapse to 0 at inf."""

    re: float
    ri: float
    pe: float
    k: tuple[float, float] = (0.0, 1.0)

    @classmethod
    def from_rayleigh(cls, ra: float, pr: float = 0.71, ri: float = 1.0) -> "Physics":
        # Ra = Ri Re^2 Pr and Pe = Re Pr
        re = math.sqrt(ra / (ri * pr))
        return cls(re=re, ri=ri, pe=re * pr)

    @property
    def inv_re(self) -> float:
        return 0.0 if math.isinf(self.re) else 1.0 / self.re

    @property
    def inv_pe(self) -> float:
        return 0.0 if math.isinf(self.pe) else 1.0 / self.pe


@dataclass
class ScatteredData:
    """Point cloud with per-variable values; optional noise provenance."""

    points: np.ndarray
    values: dict[str, np.ndarray]
    noise: dict | None = None
    domain: tuple | None = None  # ((xlo, xhi), (ylo, yhi)[, (tlo, thi)])

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}
        n = self.points.shape[0]
        for name, v in self.values.items():
            if v.shape != (n,):
                raise ValueError(f"{name} values have shape {v.shape}, "
                                 f"points imply ({n},)")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point coordinates")
        if self.domain is not None:
            for d, (lo, hi) in enumerate(self.domain):
                col = self.points[:, d]
                if col.min() < lo or col.max() > hi:
                    raise ValueError(
                        f"points leave the declared domain along axis {d}: "
                        f"[{col.min()}, {col.max()}] vs [{lo}, {hi}]")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class GridData:
    """Tensor-grid counterpart of ScatteredData for separable models."""

    xs: np.ndarray
    ys: np.ndarray
    values: dict[str, np.ndarray]

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        shape = (self.xs.size, self.ys.size)
        self.values = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}
        for name, v in self.values.items():
            if v.shape != shape:
                raise ValueError(f"{name} grid values have shape {v.shape}, "
                                 f"axes imply {shape}")

    def __len__(self) -> int:
        return self.xs.size * self.ys.size


@dataclass
class BoundaryPatch:
    """One wall condition evaluated at sample points.

    kind "dirichlet": var(points) - values;
    kind "neumann":  normal . grad(var)(points) - values.
    ``points`` may be a (N, dim) array or an (xs, ys) pair for tensor grids.
    ``var`` is "T", "u" or "v"; ``normal`` an outward (nx, ny).
    """

    name: str
    kind: str
    var: str
    points: object
    values: object = 0.0
    normal: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "neumann" and self.normal is None:
            raise ValueError(f"patch {self.name!r}: neumann needs a normal")
        if self.var not in ("T", "u", "v"):
            raise ValueError(f"patch {self.name!r}: unknown variable {self.var!r}")


def _side_points(n: int) -> np.ndarray:
    """Equispaced interior points of [0, 1] (corners excluded)."""
    return np.linspace(0.0, 1.0, n + 2)[1:-1]


def cavity_thermal_boundary(n_per_side: int = 256, hot: float = 0.5,
                            cold: float = -0.5, dirichlet: bool = True,
                            grid: bool = False) -> list[BoundaryPatch]:
    """Heated-bottom cavity: Dirichlet floor/ceiling, adiabatic sides."""
    s = _side_points(n_per_side)
    zeros, ones = np.zeros_like(s), np.ones_like(s)
    patches = []
    if dirichlet:
        bottom = (s, np.array([0.0])) if grid else np.column_stack([s, zeros])
        top = (s, np.array([1.0])) if grid else np.column_stack([s, ones])
        patches += [
            BoundaryPatch("bottom", "dirichlet", "T", bottom, hot),
            BoundaryPatch("top", "dirichlet", "T", top, cold),
        ]
    left = (np.array([0.0]), s) if grid else np.column_stack([zeros, s])
    right = (np.array([1.0]), s) if grid else np.column_stack([ones, s])
    patches += [
        BoundaryPatch("left", "neumann", "T", left, 0.0, normal=(-1.0, 0.0)),
        BoundaryPatch("right", "neumann", "T", right, 0.0, normal=(1.0, 0.0)),
    ]
    return patches


def cavity_velocity_boundary(n_per_side: int = 256) -> list[BoundaryPatch]:
    """No-slip on all four walls, for the (u, v, p) network."""
    s = _side_points(n_per_side)
    zeros, ones = np.zeros_like(s), np.ones_like(s)
    walls = {
        "bottom": np.column_stack([s, zeros]),
        "top": np.column_stack([s, ones]),
        "left": np.column_stack([zeros, s]),
        "right": np.column_stack([ones, s]),
    }
    return [BoundaryPatch(f"{side}_{var}", "dirichlet", var, pts, 0.0)
            for side, pts in walls.items() for var in ("u", "v")]


@dataclass
class LossSpec:
    """Which loss the scenario builds and with what dials."""

    scenario: str
    weights: dict[str, float] = field(default_factory=dict)
    gradient_enhanced: bool = False
    n_gradient: int = 100
    self_adaptive: bool = False
    adaptive_rate: float = 1e-4

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; "
                             f"expected one of {SCENARIOS}")
        legal = _LEGAL_WEIGHTS[self.scenario]
        unknown = set(self.weights) - legal
        if unknown:
            raise ValueError(f"weights {sorted(unknown)} are not part of the "
                             f"scenario-{self.scenario} loss (legal: {sorted(legal)})")
        if "w_g" in self.weights and not self.gradient_enhanced:
            raise ValueError("w_g set but gradient_enhanced is off")
        if self.gradient_enhanced:
            if self.scenario != "A":
                raise ValueError("the gradient-enhanced term extends the "
                                 "scenario-A loss only")
            if "w_g" not in self.weights:
                raise ValueError("gradient_enhanced needs an explicit w_g")
        full = {w: 1.0 for w in legal if w != "w_g"}
        full.update(self.weights)
        self.weights = full
        bad = {k: v for k, v in self.weights.items() if not v > 0}
        if bad:
            raise ValueError(f"loss weights must be positive: {bad}")
        if self.adaptive_rate < 0:
            raise ValueError("adaptive_rate must be >= 0")


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class PinnProblem:
    spec: LossSpec
    models: dict[str, object]
    physics: Physics
    data: dict[str, object]
    boundary: list[BoundaryPatch] = field(default_factory=list)
    residual_points: np.ndarray | None = None
    gradient_points: object = None
    gradient_values: dict[str, np.ndarray] | None = None
    initial: tuple | None = None
    adaptive: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        sc = self.spec.scenario
        need_models = {"A": {"T"}, "B": {"flow"}, "C": {"T"},
                       "D": {"flow", "T"}, "unsteady": {"T"}}[sc]
        if set(self.models) != need_models:
            raise ValueError(f"scenario {sc} uses models {sorted(need_models)}, "
                             f"got {sorted(self.models)}")
        need_data = {"A": {"u"}, "B": {"T"}, "C": {"u", "T"},
                     "D": {"u", "T"}, "unsteady": {"u"}}[sc]
        missing = need_data - set(self.data)
        if missing:
            raise ValueError(f"scenario {sc} needs data sets {sorted(missing)}")
        flow = self.models.get("flow")
        if flow is not None and getattr(flow, "out_dim", 3) != 3:
            raise ValueError("the flow model must output (u, v, p)")
        tmod = self.models.get("T")
        if tmod is not None and getattr(tmod, "out_dim", 1) != 1:
            raise ValueError("the temperature model must output a scalar")
        if sc == "D" and self.residual_points is None:
            raise ValueError("scenario D needs residual points inside the cut-out")
        if sc == "unsteady":
            pts = self.data["u"].points
            if pts.shape[1] != 3:
                raise ValueError("unsteady data points need (x, y, t) columns")


# ---------------------------------------------------------------------------
# residual nodes
# ---------------------------------------------------------------------------

def _is_grid(model) -> bool:
    return isinstance(model, SeparableModel)


def _jet(model, bound, where, order: int, mixed: bool) -> Node:
    if _is_grid(model):
        if isinstance(where, tuple):
            return model.jet_grid(bound, where[0], where[1], order, mixed)
        return model.jet_points(bound, np.asarray(where, dtype=float),
                                order, mixed)
    return model.jet(bound, np.asarray(where, dtype=float), order, mixed)


def _scalar(coeff: Node, grid: bool) -> Node:
    """Single-output coefficient as (N,) (grid jets stay (N, M))."""
    if not grid and coeff.value.ndim == 2:
        return column(coeff, 0)
    return coeff


def _energy_node(tjet: Node, u: Node, v: Node, inv_pe: float, *,
                 grid: bool = False, unsteady: bool = False) -> Node:
    tx = _scalar(jet_coeff(tjet, (0,)), grid)
    ty = _scalar(jet_coeff(tjet, (1,)), grid)
    r = add(mul(u, tx), mul(v, ty))
    if unsteady:
        r = add(_scalar(jet_coeff(tjet, (2,)), grid), r)
    if inv_pe:
        lap = add(_scalar(jet_coeff(tjet, (0, 0)), grid),
                  _scalar(jet_coeff(tjet, (1, 1)), grid))
        r = sub(r, scale(lap, inv_pe))
    return r


def _continuity_node(fjet: Node) -> Node:
    return add(column(jet_coeff(fjet, (0,)), 0),
               column(jet_coeff(fjet, (1,)), 1))


def _momentum_nodes(fjet: Node, temperature: Node | None,
                    physics: Physics) -> tuple[Node, Node]:
    val = jet_coeff(fjet, ())
    u, v = column(val, 0), column(val, 1)
    gx, gy = jet_coeff(fjet, (0,)), jet_coeff(fjet, (1,))
    dxx, dyy = jet_coeff(fjet, (0, 0)), jet_coeff(fjet, (1, 1))

    rx = add(add(mul(u, column(gx, 0)), mul(v, column(gy, 0))), column(gx, 2))
    ry = add(add(mul(u, column(gx, 1)), mul(v, column(gy, 1))), column(gy, 2))
    if physics.inv_re:
        rx = sub(rx, scale(add(column(dxx, 0), column(dyy, 0)), physics.inv_re))
        ry = sub(ry, scale(add(column(dxx, 1), column(dyy, 1)), physics.inv_re))
    if temperature is not None and physics.ri:
        kx, ky = physics.k
        if kx:
            rx = sub(rx, scale(temperature, physics.ri * kx))
        if ky:
            ry = sub(ry, scale(temperature, physics.ri * ky))
    return rx, ry


def _grad_residual_nodes(tjet: Node, u: Node, v: Node, inv_pe: float, *,
                         grid: bool = False) -> tuple[Node, Node]:
    """x- and y-derivatives of the energy residual (advection data frozen)."""
    txx = _scalar(jet_coeff(tjet, (0, 0)), grid)
    txy = _scalar(jet_coeff(tjet, (0, 1)), grid)
    tyy = _scalar(jet_coeff(tjet, (1, 1)), grid)
    rgx = add(mul(u, txx), mul(v, txy))
    rgy = add(mul(u, txy), mul(v, tyy))
    if inv_pe:
        txxx = _scalar(jet_coeff(tjet, (0, 0, 0)), grid)
        txxy = _scalar(jet_coeff(tjet, (0, 0, 1)), grid)
        txyy = _scalar(jet_coeff(tjet, (0, 1, 1)), grid)
        tyyy = _scalar(jet_coeff(tjet, (1, 1, 1)), grid)
        rgx = sub(rgx, scale(add(txxx, txyy), inv_pe))
        rgy = sub(rgy, scale(add(txxy, tyyy), inv_pe))
    return rgx, rgy


def _patch_node(patch: BoundaryPatch, model, bound, tape: Tape) -> Node:
    grid = _is_grid(model) and isinstance(patch.points, tuple)
    order = 0 if patch.kind == "dirichlet" else 1
    jet = _jet(model, bound, patch.points, order, True)
    col = {"T": 0, "u": 0, "v": 1}[patch.var]
    if patch.kind == "dirichlet":
        val = jet_coeff(jet, ())
        val = _scalar(val, grid) if patch.var == "T" else column(val, col)
        return sub(val, tape.constant(patch.values))
    nx, ny = patch.normal
    dx = jet_coeff(jet, (0,))
    dy = jet_coeff(jet, (1,))
    if patch.var == "T":
        dx, dy = _scalar(dx, grid), _scalar(dy, grid)
    else:
        dx, dy = column(dx, col), column(dy, col)
    r = None
    if nx:
        r = scale(dx, nx)
    if ny:
        term = scale(dy, ny)
        r = term if r is None else add(r, term)
    return sub(r, tape.constant(patch.values))


# ---------------------------------------------------------------------------
# scenario term assembly
# ---------------------------------------------------------------------------

@dataclass
class _Term:
    name: str
    weight: float
    residual: Node


def _data_where(data):
    if isinstance(data, GridData):
        return (data.xs, data.ys)
    return data.points


def _advection_constants(tape, data, keys=("u", "v")):
    return tuple(tape.constant(data.values[k]) for k in keys)


def _gradient_site(problem):
    """Points (and u, v values) for the gradient-enhanced term."""
    if problem.gradient_points is not None:
        vals = problem.gradient_values
        if vals is None:
            raise ValueError("gradient_points need matching gradient_values")
        return problem.gradient_points, vals
    data = problem.data["u"]
    if isinstance(data, GridData):  # separable: reuse the full grid
        return (data.xs, data.ys), data.values
    n = min(problem.spec.n_gradient, len(data))
    return data.points[:n], {k: v[:n] for k, v in data.values.items()}


def _build_terms(problem: PinnProblem, tape: Tape, bound: dict) -> list[_Term]:
    spec, phys = problem.spec, problem.physics
    w = spec.weights
    sc = spec.scenario
    terms: list[_Term] = []

    if sc in ("A", "C", "unsteady"):
        model, mb = problem.models["T"], bound["T"]
        grid = _is_grid(model)
        data = problem.data["u"]
        where = _data_where(data)
        u, v = _advection_constants(tape, data)
        tjet = _jet(model, mb, where, 2, mixed=False)
        r = _energy_node(tjet, u, v, phys.inv_pe, grid=grid,
                         unsteady=(sc == "unsteady"))
        terms.append(_Term("residual", w["w_u"], r))

        if sc == "C":
            tdata = problem.data["T"]
            vjet = _jet(model, mb, _data_where(tdata), 0, True)
            misfit = sub(_scalar(jet_coeff(vjet, ()), grid),
                         tape.constant(tdata.values["T"]))
            terms.append(_Term("misfit_T", w["w_T"], misfit))

        for patch in problem.boundary:
            terms.append(_Term(f"bc_{patch.name}", w["w_b"],
                               _patch_node(patch, model, mb, tape)))

        if sc == "unsteady" and problem.initial is not None:
            pts0, vals0 = problem.initial
            ijet = _jet(model, mb, pts0, 0, True)
            r0 = sub(_scalar(jet_coeff(ijet, ()), grid), tape.constant(vals0))
            terms.append(_Term("initial", w["w_i"], r0))

        if spec.gradient_enhanced:
            gwhere, gvals = _gradient_site(problem)
            gu = tape.constant(gvals["u"])
            gv = tape.constant(gvals["v"])
            gjet = _jet(model, mb, gwhere, 3, mixed=True)
            rgx, rgy = _grad_residual_nodes(gjet, gu, gv, phys.inv_pe, grid=grid)
            terms.append(_Term("gradient_x", w["w_g"], rgx))
            terms.append(_Term("gradient_y", w["w_g"], rgy))
        return terms

    if sc == "B":
        model, mb = problem.models["flow"], bound["flow"]
        data = problem.data["T"]
        fjet = _jet(model, mb, data.points, 2, mixed=False)
        tconst = tape.constant(data.values["T"])
        rx, ry = _momentum_nodes(fjet, tconst, phys)
        terms.append(_Term("momentum_x", w["w_T"], rx))
        terms.append(_Term("momentum_y", w["w_T"], ry))
        if problem.residual_points is None:
            cjet = fjet  # residual points default to the data points
        else:
            cjet = _jet(model, mb, problem.residual_points, 1, True)
        terms.append(_Term("continuity", w["w_f"], _continuity_node(cjet)))
        for patch in problem.boundary:
            terms.append(_Term(f"bc_{patch.name}", w["w_b"],
                               _patch_node(patch, model, mb, tape)))
        return terms

    # scenario D: two nets, data misfits + all three residuals, no walls
    fmodel, fb = problem.models["flow"], bound["flow"]
    tmodel, tb = problem.models["T"], bound["T"]
    udata, tdata = problem.data["u"], problem.data["T"]

    ujet = _jet(fmodel, fb, udata.points, 0, True)
    uval = jet_coeff(ujet, ())
    terms.append(_Term("misfit_u", w["w_u"],
                       sub(column(uval, 0), tape.constant(udata.values["u"]))))
    terms.append(_Term("misfit_v", w["w_u"],
                       sub(column(uval, 1), tape.constant(udata.values["v"]))))

    tmis = _jet(tmodel, tb, tdata.points, 0, True)
    terms.append(_Term("misfit_T", w["w_T"],
                       sub(_scalar(jet_coeff(tmis, ()), False),
                           tape.constant(tdata.values["T"]))))

    res = problem.residual_points
    fjet = _jet(fmodel, fb, res, 2, mixed=False)
    tjet = _jet(tmodel, tb, res, 2, mixed=False)
    terms.append(_Term("continuity", w["w_f1"], _continuity_node(fjet)))
    rx, ry = _momentum_nodes(fjet, _scalar(jet_coeff(tjet, ()), False), phys)
    terms.append(_Term("momentum_x", w["w_f2"], rx))
    terms.append(_Term("momentum_y", w["w_f2"], ry))
    fval = jet_coeff(fjet, ())
    r = _energy_node(tjet, column(fval, 0), column(fval, 1), phys.inv_pe)
    terms.append(_Term("energy", w["w_f3"], r))
    return terms


# ---------------------------------------------------------------------------
# loss assembly, gradients, training
# ---------------------------------------------------------------------------

@dataclass
class LossBundle:
    loss: Node
    bound: dict
    lam_nodes: dict[str, Node]
    parts: dict[str, float]


def build_loss(problem: PinnProblem, thetas: dict[str, np.ndarray],
               tape: Tape | None = None) -> LossBundle:
    """Record the scenario loss on a tape; parts hold per-term values."""
    tape = tape or Tape()
    bound = {name: problem.models[name].bind(tape, thetas[name])
             for name in sorted(problem.models)}
    terms = _build_terms(problem, tape, bound)
    adaptive = problem.spec.self_adaptive
    lam_nodes: dict[str, Node] = {}
    loss, parts = None, {}
    for term in terms:
        r = term.residual
        weight = term.weight
        if adaptive:
            if term.name not in problem.adaptive:
                raise ValueError("self-adaptive weights missing; call "
                                 "init_adaptive(problem, seed) first")
            lam = tape.parameter(problem.adaptive[term.name])
            lam_nodes[term.name] = lam
            r = mul(lam, r)
            weight = 1.0  # the per-point weights replace the fixed one
        contrib = scale(mean(square(r)), weight)
        parts[term.name] = float(contrib.value)
        loss = contrib if loss is None else add(loss, contrib)
    return LossBundle(loss, bound, lam_nodes, parts)


def _flat_nodes(model, bound) -> list[Node]:
    if isinstance(model, SeparableModel):
        return [n for sub_ in bound for pair in sub_ for n in pair]
    return [n for pair in bound for n in pair]


def loss_and_grads(problem: PinnProblem, thetas: dict[str, np.ndarray]):
    """-> (loss value, per-model flat gradients, lambda gradients, parts)."""
    bundle = build_loss(problem, thetas)
    names = sorted(problem.models)
    nodes, slices = [], {}
    for name in names:
        group = _flat_nodes(problem.models[name], bundle.bound[name])
        slices[name] = (len(nodes), len(nodes) + len(group))
        nodes.extend(group)
    lam_names = sorted(bundle.lam_nodes)
    nodes.extend(bundle.lam_nodes[k] for k in lam_names)
    gs = grad(bundle.loss, nodes)
    grads = {}
    for name in names:
        a, b = slices[name]
        grads[name] = np.concatenate([g.ravel() for g in gs[a:b]])
    lam_grads = {k: gs[len(nodes) - len(lam_names) + i]
                 for i, k in enumerate(lam_names)}
    return float(bundle.loss.value), grads, lam_grads, bundle.parts


def init_adaptive(problem: PinnProblem, thetas: dict[str, np.ndarray],
                  seed: int) -> None:
    """Draw per-point weights lambda ~ U[0.01, 1] for every loss term.

    Gradient-term weights are additionally scaled by w_g, which plays the
    role of their initial magnitude in adaptive mode."""
    rng = np.random.default_rng(seed)
    tape = Tape()
    bound = {name: problem.models[name].bind(tape, thetas[name])
             for name in sorted(problem.models)}
    problem.adaptive = {}
    w_g = problem.spec.weights.get("w_g", 1.0)
    for term in _build_terms(problem, tape, bound):
        lam = rng.uniform(0.01, 1.0, size=np.shape(term.residual.value))
        if term.name.startswith("gradient"):
            lam *= w_g
        problem.adaptive[term.name] = lam


def self_adaptive_step(lams: dict[str, np.ndarray],
                       lam_grads: dict[str, np.ndarray],
                       rate: float) -> dict[str, np.ndarray]:
    """Gradient *ascent* on the per-point weights."""
    return {name: lams[name] + rate * lam_grads[name] for name in lams}


@dataclass
class TrainResult:
    thetas: dict[str, np.ndarray]
    history: list
    manifest: dict
    adaptive: dict[str, np.ndarray] | None = None


def train(problem: PinnProblem, thetas: dict[str, np.ndarray], *,
          iterations: int, schedule=((None, 1e-3),), seed: int = 0,
          log_every: int = 100) -> TrainResult:
    """Full-batch Adam on the scenario loss; loss history every ``log_every``.

    A non-finite loss aborts with a snapshot of the last state."""
    spec = problem.spec
    thetas = {k: np.asarray(v, dtype=float).copy() for k, v in thetas.items()}
    if spec.self_adaptive and not problem.adaptive:
        init_adaptive(problem, thetas, seed)
    names = sorted(thetas)
    sizes = [thetas[k].size for k in names]
    packed = np.concatenate([thetas[k] for k in names]) if names else np.zeros(0)
    state = AdamState.fresh(packed.size, schedule=schedule)
    history: list[list] = []

    def unpack(vec):
        out, ofs = {}, 0
        for name, n in zip(names, sizes):
            out[name] = vec[ofs: ofs + n]
            ofs += n
        return out

    loss_value = parts = None
    for it in range(1, iterations + 1):
        thetas = unpack(packed)
        loss_value, grads, lam_grads, parts = loss_and_grads(problem, thetas)
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(
                f"loss became non-finite at iteration {it}",
                snapshot={"iteration": it, "loss": loss_value, "parts": parts,
                          "history": history})
        if it == 1 or it % log_every == 0 or it == iterations:
            history.append([it, loss_value])
        g = np.concatenate([grads[k] for k in names])
        packed, state = adam_step(state, packed, g)
        if spec.self_adaptive:
            problem.adaptive = self_adaptive_step(
                problem.adaptive, lam_grads, spec.adaptive_rate)

    thetas = {k: v.copy() for k, v in unpack(packed).items()}
    if iterations == 0:
        loss_value, _, _, parts = loss_and_grads(problem, thetas)
    manifest = {
        "scenario": spec.scenario,
        "iterations": iterations,
        "schedule": [[t, r] for t, r in state.schedule],
        "seed": seed,
        "weights": dict(spec.weights),
        "self_adaptive": spec.self_adaptive,
        "gradient_enhanced": spec.gradient_enhanced,
        "points": {name: int(len(d)) for name, d in problem.data.items()},
        "final_loss": loss_value,
        "final_parts": parts,
        "loss_history": history,
    }
    return TrainResult(thetas=thetas, history=history, manifest=manifest,
                       adaptive=dict(problem.adaptive) or None)


# ---------------------------------------------------------------------------
# plain-array residual evaluation (diagnostics / downstream coupling)
# ---------------------------------------------------------------------------

def _plain_jet(model, theta, points, order, mixed):
    tape = Tape()
    bound = model.bind(tape, theta)
    return _jet(model, bound, points, order, mixed)


def residual_continuity(model, theta, points) -> np.ndarray:
    """du/dx + dv/dy of a (u, v, p) model at (N, 2) points."""
    fjet = _plain_jet(model, theta, points, 1, True)
    return np.asarray(_continuity_node(fjet).value)


def residual_momentum(model, theta, points, *, temperature, re, ri,
                      k=(0.0, 1.0)) -> np.ndarray:
    """Steady momentum residual (N, 2); temperature is data or None."""
    tape = Tape()
    bound = model.bind(tape, theta)
    fjet = _jet(model, bound, points, 2, mixed=False)
    phys = Physics(re=re, ri=ri, pe=math.inf, k=tuple(k))
    tnode = None if temperature is None else tape.constant(
        np.asarray(temperature, dtype=float))
    rx, ry = _momentum_nodes(fjet, tnode, phys)
    return np.column_stack([np.asarray(rx.value), np.asarray(ry.value)])


def residual_energy(model, theta, points, *, velocity, pe,
                    unsteady: bool = False) -> np.ndarray:
    """u . grad T - (1/Pe) lap T (+ dT/dt when unsteady) at (N, dim) points."""
    tape = Tape()
    bound = model.bind(tape, theta)
    grid = _is_grid(model) and isinstance(points, tuple)
    tjet = _jet(model, bound, points, 2, mixed=False)
    vel = np.asarray(velocity, dtype=float)
    u, v = tape.constant(vel[..., 0]), tape.constant(vel[..., 1])
    inv_pe = 0.0 if math.isinf(pe) else 1.0 / pe
    r = _energy_node(tjet, u, v, inv_pe, grid=grid, unsteady=unsteady)
    return np.asarray(r.value)


def gradient_enhanced_residuals(model, theta, points, *, velocity,
                                pe) -> np.ndarray:
    """(N, 2) spatial gradient of the energy residual, advection frozen."""
    tape = Tape()
    bound = model.bind(tape, theta)
    grid = _is_grid(model) and isinstance(points, tuple)
    tjet = _jet(model, bound, points, 3, mixed=True)
    vel = np.asarray(velocity, dtype=float)
    u, v = tape.constant(vel[..., 0]), tape.constant(vel[..., 1])
    inv_pe = 0.0 if math.isinf(pe) else 1.0 / pe
    rgx, rgy = _grad_residual_nodes(tjet, u, v, inv_pe, grid=grid)
    return np.stack([np.asarray(rgx.value), np.asarray(rgy.value)], axis=-1)
