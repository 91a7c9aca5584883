"""Synthetic measurements, error metrics, and end-to-end assimilation runs.

Five scenarios run against an internal solver reference (the "oracle"):

  A         scattered velocity -> temperature net -> buoyancy force ->
            momentum march on the cavity
  B         scattered temperature -> flow net -> advecting field ->
            transport march
  C         noisy velocity + temperature with the hot/cold walls withheld ->
            trained and coupled like A
  D         data inside an interior window -> flow + temperature nets ->
            interface traces on a cut-out mesh -> coupled march on the rest
  unsteady  space-time samples of an analytic transported pulse; trained net
            re-enters a short unsteady march as a time-dependent force

Every run is a deterministic function of its ScenarioSpec (seeds included);
point sampling uses counter-based Philox streams so one data set's draws do
not shift another's.  Oracles are disk-cached by a hash of their generating
configuration and carried into reports as a checksum.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .coupling import (
    FieldSurrogate,
    SurrogateHandle,
    advection_callable,
    buoyancy_source,
    cutout_bcset,
    extract_interface,
    save_trace,
)
from .elliptic import BCKind, BoundaryCondition
from .field import Field, FunctionSpace
from .mesh import cutout_square, structured_rectangle
from .networks import MlpModel, SeparableModel, save_model
from .pinn import (
    LossSpec,
    Physics,
    PinnProblem,
    ScatteredData,
    TrainingDivergedError,
    cavity_thermal_boundary,
    cavity_velocity_boundary,
    train,
)
from .stepping import (
    BCSet,
    BodyForceSource,
    DivergenceError,
    FlowState,
    TimeStepper,
    VelocityBC,
    drive_to_steady,
    save_checkpoint,
    load_checkpoint,
)

__all__ = [
    "rng_for", "sample_measurements",
    "evaluation_grid", "relative_l2_error", "line_profile",
    "NusseltProfile", "nusselt_profile",
    "ScenarioSpec", "preset", "PRESETS",
    "OracleError", "CavityOracle", "steady_cavity_oracle", "cavity_bcs",
    "cache_directory",
    "RunReport", "run_scenario", "run_training",
]


# ---------------------------------------------------------------------------
# deterministic sampling
# ---------------------------------------------------------------------------

def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream); counter-based, order-free."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


def sample_measurements(source, n: int, seed: int, noise: float = 0.0, *,
                        variables=None, region=None, time_span=None,
                        stream: int = 0) -> ScatteredData:
    """n uniform points in ``region`` with per-variable values plus noise.

    ``source`` is a surrogate-protocol object (``evaluate(points, t, names)``)
    or, for space-time sampling, a dict of callables f(x, y, t).  Values pick
    up i.i.d. N(0, noise^2) perturbations drawn per variable in sorted order;
    noise 0 skips the draw entirely so values equal the source evaluations.
    """
    if n < 1:
        raise ValueError("need at least one sample point")
    if noise < 0:
        raise ValueError("noise scale must be nonnegative")
    if variables is None:
        if isinstance(source, dict):
            variables = tuple(sorted(source))
        else:
            variables = tuple(source.outputs)
    if region is None:
        if isinstance(source, dict) or getattr(source, "region", None) is None:
            raise ValueError("pass region= when the source does not carry one")
        region = source.region
    (xlo, xhi), (ylo, yhi) = region
    rng = rng_for(seed, stream)
    dim = 2 if time_span is None else 3
    unit = rng.random((n, dim))
    pts = np.empty_like(unit)
    pts[:, 0] = xlo + (xhi - xlo) * unit[:, 0]
    pts[:, 1] = ylo + (yhi - ylo) * unit[:, 1]
    domain = [(xlo, xhi), (ylo, yhi)]
    if time_span is not None:
        t0, t1 = time_span
        pts[:, 2] = t0 + (t1 - t0) * unit[:, 2]
        domain.append((t0, t1))

    if isinstance(source, dict):
        if time_span is None:
            raise ValueError("callable sources are for space-time sampling; "
                             "pass time_span")
        values = {v: np.asarray(source[v](pts[:, 0], pts[:, 1], pts[:, 2]),
                                dtype=float) + np.zeros(n)
                  for v in variables}
    elif time_span is not None:
        values = dict(source.evaluate(pts[:, :2], t=pts[:, 2],
                                      names=variables))
    else:
        values = dict(source.evaluate(pts, names=variables))

    if noise > 0.0:
        for v in sorted(variables):
            values[v] = values[v] + rng.normal(0.0, noise, n)
    return ScatteredData(points=pts, values=values,
                         noise={"scale": noise, "seed": int(seed),
                                "stream": int(stream)},
                         domain=tuple(domain))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def evaluation_grid(region=((0.0, 1.0), (0.0, 1.0)), n: int = 101,
                    hole=None) -> np.ndarray:
    """Uniform n-by-n point grid; points inside an open hole are dropped."""
    (xlo, xhi), (ylo, yhi) = region
    xs = np.linspace(xlo, xhi, n)
    ys = np.linspace(ylo, yhi, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    if hole is not None:
        pts = pts[~_in_hole(pts[:, 0], pts[:, 1], hole)]
    return pts


def _in_hole(x, y, hole, margin: float = 1e-9):
    a, b = hole
    return ((x > a + margin) & (x < b - margin)
            & (y > a + margin) & (y < b - margin))


def _values_at(obj, points: np.ndarray) -> np.ndarray:
    if isinstance(obj, Field):
        return np.asarray(obj.evaluate(points), dtype=float)
    if callable(obj):
        return np.asarray(obj(points[:, 0], points[:, 1]), dtype=float)
    vals = np.asarray(obj, dtype=float)
    if vals.shape[0] != len(points):
        raise ValueError(f"got {vals.shape[0]} values for {len(points)} points")
    return vals


def relative_l2_error(candidate, reference, points) -> float:
    """||candidate - reference||_2 / ||reference||_2 over the given points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = _values_at(candidate, pts)
    r = _values_at(reference, pts)
    if c.shape != r.shape:
        raise ValueError(f"candidate/reference shapes differ: {c.shape} vs {r.shape}")
    rnorm = float(np.linalg.norm(r.ravel()))
    if rnorm == 0.0:
        raise ValueError("reference field has zero norm on the evaluation points")
    return float(np.linalg.norm((c - r).ravel())) / rnorm


def line_profile(obj, *, x: float | None = None, y: float | None = None,
                 span=(0.0, 1.0), n: int = 201, hole=None):
    """Samples along a vertical (x=...) or horizontal (y=...) cut.

    Returns (coordinate along the cut, values); samples falling strictly
    inside an open hole are dropped.
    """
    if (x is None) == (y is None):
        raise ValueError("give exactly one of x= or y=")
    s = np.linspace(span[0], span[1], n)
    if x is not None:
        pts = np.column_stack([np.full(n, float(x)), s])
    else:
        pts = np.column_stack([s, np.full(n, float(y))])
    if hole is not None:
        keep = ~_in_hole(pts[:, 0], pts[:, 1], hole)
        pts, s = pts[keep], s[keep]
    return s, _values_at(obj, pts)


@dataclass
class NusseltProfile:
    """|Nu| along a wall: node abscissae, pointwise values, quadrature mean."""

    x: np.ndarray
    values: np.ndarray
    mean: float


def nusselt_profile(temperature: Field, delta_t: float = 1.0,
                    height: float = 1.0,
                    composite: str = "bottom") -> NusseltProfile:
    """Wall heat flux ratio Nu(x) = (dT/dy at the wall) / (delta_t/height).

    Reported as a magnitude (the cold-top sign convention makes the raw value
    negative).  One-sided element gradients at shared corners are averaged by
    global node id; the mean is the arc-quadrature average of |Nu|.
    """
    if delta_t == 0.0:
        raise ValueError("delta_t must be nonzero")
    space = temperature.space
    if composite not in space.edge_blocks:
        raise ValueError(f"mesh has no composite {composite!r}; "
                         f"known: {sorted(space.edge_blocks)}")
    coords, gids, grads = temperature.edge_gradient(composite)
    nu = np.abs(grads[:, :, 0, 1] / (delta_t / height))   # (ne, p+1)

    blk = space.edge_blocks[composite]
    nu_q = np.einsum("qp,ep->eq", blk.interp, nu)
    mean = float(np.sum(blk.qweights * nu_q) / np.sum(blk.qweights))

    flat_g = gids.ravel()
    uniq, inv = np.unique(flat_g, return_inverse=True)
    sums = np.zeros(uniq.size)
    counts = np.zeros(uniq.size)
    np.add.at(sums, inv, nu.ravel())
    np.add.at(counts, inv, 1.0)
    xs = np.zeros(uniq.size)
    xs[inv] = coords[..., 0].ravel()
    vals = sums / counts
    order = np.argsort(xs, kind="stable")
    return NusseltProfile(x=xs[order], values=vals[order], mean=mean)


# ---------------------------------------------------------------------------
# scenario specification
# ---------------------------------------------------------------------------

SCENARIOS = ("A", "B", "C", "D", "unsteady")
_TRACE_KINDS = ("dirichlet", "neumann", "robin")


@dataclass
class ScenarioSpec:
    """Everything a scenario run depends on; runs are pure functions of this.

    Nondimensional groups come either from (ra, pr) — the default route,
    Re = sqrt(Ra/Pr), Ri = 1, Pe = sqrt(Ra*Pr) — or explicitly as
    (re, ri, pe) with ra set to None.  ``surrogate`` selects the trained
    network ("trained") or an exact-field stand-in ("stub") that bypasses
    training and exercises only the coupling path.
    """

    scenario: str
    ra: float | None = 1e4
    pr: float | None = 0.71
    re: float | None = None
    ri: float | None = None
    pe: float | None = None
    elements: int = 16
    order: int = 4
    n_u: int = 0
    n_t: int = 0
    n_f: int = 0
    n_b: int = 256
    n_g: int = 0
    noise_u: float = 0.0
    noise_t: float = 0.0
    seed: int = 0
    hole: tuple = (0.4, 0.6)
    hole_elements: int = 10
    widths: tuple = (64, 64, 64, 64)
    iterations: int = 30000
    schedule: tuple | None = None
    dt: float = 1e-2
    steady_tol: float = 1e-6
    max_steps: int = 20000
    elliptic_tol: float = 1e-10
    trace_kind: str = "dirichlet"
    robin_r: float = 0.0
    surrogate: str = "trained"
    self_adaptive: bool = False
    gradient_enhanced: bool = False
    separable: bool = False
    time_span: tuple = (0.0, 1.0)
    label: str = ""

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; "
                             f"expected one of {SCENARIOS}")
        if self.re is not None:
            if self.ri is None or self.pe is None:
                raise ValueError("explicit nondimensional route needs re, ri "
                                 "and pe together")
            if self.ra is not None:
                raise ValueError("give (ra, pr) or (re, ri, pe), not both")
        elif self.ra is None or self.pr is None:
            raise ValueError("give (ra, pr) or (re, ri, pe)")
        need = {"A": ("n_u",), "B": ("n_t",), "C": ("n_u", "n_t"),
                "D": ("n_u", "n_t", "n_f"), "unsteady": ("n_u",)}
        for name in need[self.scenario]:
            if getattr(self, name) < 1:
                raise ValueError(f"scenario {self.scenario} needs {name} >= 1")
        a, b = self.hole
        if not (0.0 < a < b < 1.0):
            raise ValueError(f"cut-out {self.hole} must lie strictly inside "
                             "the unit square")
        if self.noise_u < 0 or self.noise_t < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.elements < 1 or self.order < 1:
            raise ValueError("mesh needs elements >= 1 and order >= 1")
        if self.dt <= 0 or self.steady_tol < 0 or self.max_steps < 1:
            raise ValueError("bad marching parameters")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.trace_kind not in _TRACE_KINDS:
            raise ValueError(f"trace kind must be one of {_TRACE_KINDS}")
        if self.robin_r < 0:
            raise ValueError("Robin coefficient must be nonnegative")
        if self.surrogate not in ("trained", "stub"):
            raise ValueError("surrogate must be 'trained' or 'stub'")
        if self.gradient_enhanced and self.scenario != "A":
            raise ValueError("the gradient-enhanced term extends scenario A only")
        if self.separable and self.scenario not in ("A", "C"):
            raise ValueError("the separable architecture fits the scalar "
                             "temperature net (scenarios A and C)")
        self.widths = tuple(int(w) for w in self.widths)
        self.hole = (float(a), float(b))
        if self.schedule is not None:
            self.schedule = tuple((None if t is None else int(t), float(r))
                                  for t, r in self.schedule)

    def physics(self) -> Physics:
        if self.re is not None:
            return Physics(re=float(self.re), ri=float(self.ri),
                           pe=float(self.pe))
        return Physics.from_rayleigh(float(self.ra), float(self.pr))

    def training_schedule(self) -> tuple:
        if self.schedule is not None:
            return self.schedule
        half = max(1, self.iterations // 2)
        return ((half, 1e-3), (None, 1e-4))


# Paper Table 3 additive-noise pairings (u scale, T scale).
NOISE_LEVELS = {1: (0.01, 0.025), 2: (0.025, 0.01),
                3: (0.01, 0.05), 4: (0.05, 0.01)}


def _desk(scenario: str, **over) -> ScenarioSpec:
    base = dict(scenario=scenario, label=f"{scenario}-desk")
    base.update(over)
    return ScenarioSpec(**base)


def _paper(scenario: str, **over) -> ScenarioSpec:
    base = dict(scenario=scenario, widths=(100,) * 4, iterations=100000,
                schedule=((50000, 1e-3), (None, 1e-4)),
                label=f"{scenario}-paper")
    base.update(over)
    return ScenarioSpec(**base)


PRESETS = {
    "A-desk": lambda: _desk("A", n_u=4000),
    "B-desk": lambda: _desk("B", n_t=2000),
    "C-desk-1": lambda: _desk("C", n_u=1500, n_t=100, iterations=20000,
                              noise_u=0.01, noise_t=0.025, label="C-desk-1"),
    "C-desk-2": lambda: _desk("C", n_u=1500, n_t=100, iterations=20000,
                              noise_u=0.025, noise_t=0.01, label="C-desk-2"),
    "C-desk-3": lambda: _desk("C", n_u=1500, n_t=100, iterations=20000,
                              noise_u=0.01, noise_t=0.05, label="C-desk-3"),
    "C-desk-4": lambda: _desk("C", n_u=1500, n_t=100, iterations=20000,
                              noise_u=0.05, noise_t=0.01, label="C-desk-4"),
    "D-desk": lambda: _desk("D", n_u=50, n_t=50, n_f=1000, iterations=20000),
    "D-desk-stub": lambda: _desk("D", n_u=50, n_t=50, n_f=1000,
                                 surrogate="stub", iterations=0,
                                 label="D-desk-stub"),
    "unsteady-desk": lambda: _desk("unsteady", n_u=2000, iterations=3000,
                                   widths=(32, 32, 32), elements=8,
                                   order=3, dt=2e-2,
                                   schedule=((None, 1e-3),)),
    # Appendix-scale runs: provided, not exercised by the test suite.
    "A-paper-1e4": lambda: _paper("A", n_u=10000),
    "A-paper-1e5": lambda: _paper("A", ra=1e5, n_u=10000,
                                  label="A-paper-1e5"),
    "A-paper-1e6": lambda: _paper("A", ra=1e6, n_u=10000, iterations=300000,
                                  schedule=((100000, 1e-3), (200000, 1e-4),
                                            (None, 1e-5)),
                                  label="A-paper-1e6"),
    "B-paper": lambda: _paper("B", n_t=10000),
    "C-paper-1": lambda: _paper("C", n_u=1000, n_t=100,
                                noise_u=0.01, noise_t=0.025),
    "C-paper-2": lambda: _paper("C", n_u=1000, n_t=100,
                                noise_u=0.025, noise_t=0.01),
    "C-paper-3": lambda: _paper("C", n_u=1000, n_t=100,
                                noise_u=0.01, noise_t=0.05),
    "C-paper-4": lambda: _paper("C", n_u=1000, n_t=100,
                                noise_u=0.05, noise_t=0.01),
    "D-paper": lambda: _paper("D", n_u=50, n_t=50, n_f=1000,
                              iterations=600000,
                              schedule=((200000, 1e-3), (400000, 1e-4),
                                        (None, 1e-5))),
    "unsteady-paper": lambda: _paper("unsteady", n_u=5000,
                                     iterations=1000000,
                                     schedule=((250000, 1e-3),
                                               (500000, 5e-4),
                                               (750000, 1e-4),
                                               (None, 1e-5))),
}


def preset(name: str) -> ScenarioSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; "
                         f"known: {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# solver reference (oracle)
# ---------------------------------------------------------------------------

class OracleError(RuntimeError):
    """The reference solve failed to reach a steady state."""


def cache_directory() -> Path:
    return Path(os.environ.get("NEUROSEM_CACHE", ".cache"))


def cavity_bcs(hot: float = 0.5, cold: float = -0.5) -> BCSet:
    """No-slip walls; heated floor / cooled ceiling; adiabatic sides."""
    walls = ("bottom", "right", "top", "left")
    return BCSet(
        velocity=[VelocityBC(lab) for lab in walls],
        temperature=[
            BoundaryCondition("bottom", BCKind.DIRICHLET, hot),
            BoundaryCondition("top", BCKind.DIRICHLET, cold),
            BoundaryCondition("left", BCKind.NEUMANN, 0.0),
            BoundaryCondition("right", BCKind.NEUMANN, 0.0),
        ])


def conduction_profile(x, y):
    return 0.5 - y + 0.0 * x


def perturbed_conduction(x, y):
    """Conduction plus a wall-compatible kick that picks one roll direction."""
    return 0.5 - y + 0.1 * x * np.sin(np.pi * x) * np.sin(np.pi * y)


@dataclass
class CavityOracle:
    space: FunctionSpace
    state: FlowState
    checksum: str
    path: Path
    cached: bool
    steps: int
    residual: float

    def fields(self) -> dict:
        return {"u": self.state.velocity[0][:, 0],
                "v": self.state.velocity[0][:, 1],
                "p": self.state.pressure,
                "T": self.state.temperature[0]}

    def surrogate(self, variables=("u", "v", "p", "T")) -> FieldSurrogate:
        f = self.fields()
        return FieldSurrogate(self.space, {v: f[v] for v in variables})


def _config_digest(cfg: dict) -> str:
    js = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(js.encode()).hexdigest()[:16]


def _file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def steady_cavity_oracle(physics: Physics, *, elements: int = 16,
                         order: int = 4, dt: float = 1e-2,
                         steady_tol: float = 1e-6, max_steps: int = 20000,
                         elliptic_tol: float = 1e-10,
                         use_cache: bool = True) -> CavityOracle:
    """Steady Rayleigh-Benard cavity state at the given resolution.

    Marched from the perturbed conduction profile with the coupled stepper;
    the result is cached on disk keyed by the full generating configuration,
    and its file checksum rides along for provenance.
    """
    mesh = structured_rectangle(elements, elements)
    space = FunctionSpace(mesh, order)
    cfg = {"kind": "steady-cavity", "elements": elements, "order": order,
           "re": repr(physics.re), "ri": repr(physics.ri),
           "pe": repr(physics.pe), "dt": repr(dt),
           "steady_tol": repr(steady_tol), "max_steps": max_steps,
           "elliptic_tol": repr(elliptic_tol)}
    path = cache_directory() / f"oracle-cavity-{_config_digest(cfg)}.csv"
    if use_cache and path.exists():
        state = load_checkpoint(space, path)
        return CavityOracle(space, state, _file_checksum(path), path,
                            cached=True, steps=state.step,
                            residual=float("nan"))

    state = FlowState.from_rest(space, temperature=perturbed_conduction)
    stepper = TimeStepper(space, dt, order=2, viscosity=physics.inv_re,
                          inv_peclet=physics.inv_pe, richardson=physics.ri,
                          bcs=cavity_bcs(), elliptic_tol=elliptic_tol,
                          state=state)
    result = drive_to_steady(stepper, steady_tol, max_steps)
    if not result.converged:
        raise OracleError(
            f"cavity reference did not reach steady state in {max_steps} "
            f"steps (residual {result.residual:.3e} > {steady_tol:.1e})")
    if use_cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        save_checkpoint(result.state, tmp)
        os.replace(tmp, path)
        checksum = _file_checksum(path)
    else:
        checksum = ""
    return CavityOracle(space, result.state, checksum, path, cached=False,
                        steps=result.steps, residual=result.residual)


# ---------------------------------------------------------------------------
# run reports
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


@dataclass
class RunReport:
    """Outcome of one scenario run.

    ``canonical()`` is the seed-deterministic part (wall-clock excluded);
    two runs from the same spec must agree on it byte for byte.
    """

    scenario: str
    errors: dict
    nusselt: dict | None
    loss_history: list
    wall_times: dict
    provenance: dict
    profiles: dict | None = None
    failure_stage: str | None = None
    failure_message: str | None = None

    def canonical(self) -> dict:
        doc = {"scenario": self.scenario,
               "errors": _jsonable(self.errors),
               "nusselt": _jsonable(self.nusselt),
               "loss_history": _jsonable(self.loss_history),
               "provenance": _jsonable(self.provenance),
               "profiles": _jsonable(self.profiles),
               "failure_stage": self.failure_stage,
               "failure_message": self.failure_message}
        return doc

    def canonical_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, indent=1)

    def to_json(self) -> str:
        doc = self.canonical()
        doc["wall_times"] = _jsonable(self.wall_times)
        return json.dumps(doc, sort_keys=True, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


# ---------------------------------------------------------------------------
# scenario pipelines
# ---------------------------------------------------------------------------

_UNIT = ((0.0, 1.0), (0.0, 1.0))


def _noslip_bcs() -> BCSet:
    return BCSet(velocity=[VelocityBC(lab)
                           for lab in ("bottom", "right", "top", "left")])


def _march_momentum(spec: ScenarioSpec, space: FunctionSpace, phys: Physics,
                    force: BodyForceSource):
    state = FlowState.from_rest(space)
    stepper = TimeStepper(space, spec.dt, order=2, viscosity=phys.inv_re,
                          bcs=_noslip_bcs(), force=force,
                          elliptic_tol=spec.elliptic_tol, state=state)
    result = drive_to_steady(stepper, spec.steady_tol, spec.max_steps)
    if not result.converged:
        raise DivergenceError(
            f"momentum march stalled at residual {result.residual:.3e} "
            f"after {result.steps} steps")
    return result


def _march_transport(spec: ScenarioSpec, space: FunctionSpace, phys: Physics,
                     advection):
    state = FlowState.from_rest(space, temperature=conduction_profile,
                                with_flow=False)
    stepper = TimeStepper(space, spec.dt, order=2, inv_peclet=phys.inv_pe,
                          bcs=BCSet(temperature=cavity_bcs().temperature),
                          advection=advection,
                          elliptic_tol=spec.elliptic_tol, state=state)
    result = drive_to_steady(stepper, spec.steady_tol, spec.max_steps)
    if not result.converged:
        raise DivergenceError(
            f"transport march stalled at residual {result.residual:.3e} "
            f"after {result.steps} steps")
    return result


def _grid_errors(space: FunctionSpace, arrays: dict, oracle: CavityOracle,
                 grid: np.ndarray) -> dict:
    ref = oracle.fields()
    out = {}
    for var, vals in arrays.items():
        cand = Field(space, vals)
        reff = Field(oracle.space, ref[var])
        out[var] = relative_l2_error(cand, reff, grid)
    return out


def _nusselt_block(inferred: Field | None, oracle: CavityOracle) -> dict:
    oracle_T = Field(oracle.space, oracle.fields()["T"])
    nu_o = nusselt_profile(oracle_T)
    block = {"x_oracle": nu_o.x, "nu_oracle": nu_o.values,
             "mean_oracle": nu_o.mean}
    if inferred is not None:
        nu_i = nusselt_profile(inferred)
        block.update({"x": nu_i.x, "nu": nu_i.values, "mean": nu_i.mean})
    return block


def _model_manifest(spec: ScenarioSpec, outputs, region,
                    time_span=None) -> dict:
    doc = {"outputs": list(outputs), "region": [list(r) for r in region],
           "scenario": spec.scenario, "seed": spec.seed}
    if time_span is not None:
        doc["time_span"] = list(time_span)
    return doc


def _cavity_data(spec: ScenarioSpec, oracle: CavityOracle) -> dict:
    data = {"u": sample_measurements(oracle.surrogate(("u", "v")), spec.n_u,
                                     spec.seed, noise=spec.noise_u,
                                     stream=0)}
    if spec.scenario == "C":
        data["T"] = sample_measurements(oracle.surrogate(("T",)), spec.n_t,
                                        spec.seed, noise=spec.noise_t,
                                        stream=1)
    return data


def _window_data(spec: ScenarioSpec, oracle: CavityOracle) -> tuple:
    a, b = spec.hole
    window = ((a, b), (a, b))
    udata = sample_measurements(oracle.surrogate(("u", "v")), spec.n_u,
                                spec.seed, noise=spec.noise_u,
                                region=window, stream=0)
    tdata = sample_measurements(oracle.surrogate(("T",)), spec.n_t,
                                spec.seed, noise=spec.noise_t,
                                region=window, stream=1)
    rpts = rng_for(spec.seed, 2).random((spec.n_f, 2)) * (b - a) + a
    return udata, tdata, rpts


def _pulse_data(spec: ScenarioSpec, ref: dict, region) -> tuple:
    data = {"u": sample_measurements(
        {"u": ref["u"], "v": ref["v"]}, spec.n_u, spec.seed,
        region=region, time_span=spec.time_span, stream=0)}
    xs = np.linspace(region[0][0], region[0][1], 41)
    ys = np.linspace(region[1][0], region[1][1], 21)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts0 = np.column_stack([X.ravel(), Y.ravel(),
                            np.full(X.size, spec.time_span[0])])
    vals0 = ref["T"](pts0[:, 0], pts0[:, 1], pts0[:, 2])
    return data, (pts0, vals0)


def _train_temperature_net(spec: ScenarioSpec, phys: Physics, data: dict,
                           boundary) -> tuple:
    if spec.separable:
        model = SeparableModel()
    else:
        model = MlpModel((2, *spec.widths, 1))
    extra = {}
    if spec.gradient_enhanced:
        extra = dict(gradient_enhanced=True, n_gradient=spec.n_g or 100,
                     weights={"w_g": 1e-4})
    problem = PinnProblem(
        spec=LossSpec(spec.scenario, self_adaptive=spec.self_adaptive,
                      **extra),
        models={"T": model}, physics=phys, data=data, boundary=boundary)
    result = train(problem, {"T": model.init(spec.seed)},
                   iterations=spec.iterations,
                   schedule=spec.training_schedule(), seed=spec.seed)
    handle = SurrogateHandle(model, result.thetas["T"], ("T",), _UNIT)
    return handle, result


def _train_flow_net(spec: ScenarioSpec, phys: Physics, data: dict) -> tuple:
    model = MlpModel((2, *spec.widths, 3))
    problem = PinnProblem(
        spec=LossSpec("B", self_adaptive=spec.self_adaptive),
        models={"flow": model}, physics=phys, data=data,
        boundary=cavity_velocity_boundary(spec.n_b))
    result = train(problem, {"flow": model.init(spec.seed)},
                   iterations=spec.iterations,
                   schedule=spec.training_schedule(), seed=spec.seed)
    handle = SurrogateHandle(model, result.thetas["flow"],
                             ("u", "v", "p"), _UNIT)
    return handle, result


def _train_window_nets(spec: ScenarioSpec, phys: Physics, udata, tdata,
                       rpts) -> tuple:
    a, b = spec.hole
    window = ((a, b), (a, b))
    fmodel = MlpModel((2, *spec.widths, 3))
    tmodel = MlpModel((2, *spec.widths, 1))
    problem = PinnProblem(
        spec=LossSpec("D", self_adaptive=spec.self_adaptive),
        models={"flow": fmodel, "T": tmodel}, physics=phys,
        data={"u": udata, "T": tdata}, residual_points=rpts)
    result = train(problem,
                   {"flow": fmodel.init(spec.seed),
                    "T": tmodel.init(spec.seed + 1)},
                   iterations=spec.iterations,
                   schedule=spec.training_schedule(), seed=spec.seed)
    handle_flow = SurrogateHandle(fmodel, result.thetas["flow"],
                                  ("u", "v", "p"), window)
    handle_T = SurrogateHandle(tmodel, result.thetas["T"], ("T",), window)
    return handle_flow, handle_T, result


def _train_pulse_net(spec: ScenarioSpec, phys: Physics, data: dict,
                     initial, region) -> tuple:
    model = MlpModel((3, *spec.widths, 1))
    problem = PinnProblem(
        spec=LossSpec("unsteady", self_adaptive=spec.self_adaptive),
        models={"T": model}, physics=phys, data=data, initial=initial)
    result = train(problem, {"T": model.init(spec.seed)},
                   iterations=spec.iterations,
                   schedule=spec.training_schedule(), seed=spec.seed)
    handle = SurrogateHandle(model, result.thetas["T"], ("T",), region,
                             time_span=spec.time_span)
    return handle, result


def _run_cavity_inference(spec: ScenarioSpec) -> RunReport:
    """Scenario A (and C, which adds noisy T data and drops hot/cold walls)."""
    phys = spec.physics()
    art, times = {}, {}
    stage = "oracle"
    errors, nusselt, history, profiles = {}, None, [], None
    provenance = {"spec": _jsonable(asdict(spec)), "seed": spec.seed}
    failure = None
    try:
        t0 = time.perf_counter()
        oracle = steady_cavity_oracle(
            phys, elements=spec.elements, order=spec.order, dt=spec.dt,
            steady_tol=spec.steady_tol, max_steps=spec.max_steps,
            elliptic_tol=spec.elliptic_tol)
        provenance["oracle_checksum"] = oracle.checksum
        provenance["oracle_steps"] = oracle.steps
        times["oracle"] = time.perf_counter() - t0

        stage = "sample"
        t0 = time.perf_counter()
        data = _cavity_data(spec, oracle)
        times["sample"] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        if spec.surrogate == "stub":
            handle = oracle.surrogate(("T",))
            result = None
        else:
            boundary = cavity_thermal_boundary(
                spec.n_b, dirichlet=(spec.scenario == "A"))
            handle, result = _train_temperature_net(spec, phys, data, boundary)
            history = result.history
            provenance["final_loss"] = result.manifest["final_loss"]
        times["train"] = time.perf_counter() - t0

        stage = "couple"
        force = buoyancy_source(handle, phys.ri)

        stage = "march"
        t0 = time.perf_counter()
        steady = _march_momentum(spec, oracle.space, phys, force)
        provenance["march_steps"] = steady.steps
        times["march"] = time.perf_counter() - t0

        stage = "metrics"
        t0 = time.perf_counter()
        grid = evaluation_grid()
        vel = steady.state.velocity[0]
        errors = _grid_errors(oracle.space,
                              {"u": vel[:, 0], "v": vel[:, 1]}, oracle, grid)
        T_nodes = handle.evaluate(oracle.space.node_coords, names=("T",))["T"]
        errors["T_inferred"] = relative_l2_error(
            Field(oracle.space, T_nodes),
            Field(oracle.space, oracle.fields()["T"]), grid)
        nusselt = _nusselt_block(Field(oracle.space, T_nodes), oracle)
        times["metrics"] = time.perf_counter() - t0
        art["state"] = steady.state
        art["handle"] = handle
        art["train_result"] = result
        art["space"] = oracle.space
    except (TrainingDivergedError, DivergenceError, OracleError) as exc:
        failure = (stage, f"{type(exc).__name__}: {exc}")
    return _finish_report(spec, errors, nusselt, history, times, provenance,
                          profiles, failure, art)


def _run_transport_inference(spec: ScenarioSpec) -> RunReport:
    """Scenario B: flow net from temperature data, then a transport march."""
    phys = spec.physics()
    art, times = {}, {}
    stage = "oracle"
    errors, nusselt, history, profiles = {}, None, [], None
    provenance = {"spec": _jsonable(asdict(spec)), "seed": spec.seed}
    failure = None
    try:
        t0 = time.perf_counter()
        oracle = steady_cavity_oracle(
            phys, elements=spec.elements, order=spec.order, dt=spec.dt,
            steady_tol=spec.steady_tol, max_steps=spec.max_steps,
            elliptic_tol=spec.elliptic_tol)
        provenance["oracle_checksum"] = oracle.checksum
        provenance["oracle_steps"] = oracle.steps
        times["oracle"] = time.perf_counter() - t0

        stage = "sample"
        t0 = time.perf_counter()
        data = {"T": sample_measurements(oracle.surrogate(("T",)), spec.n_t,
                                         spec.seed, noise=spec.noise_t,
                                         stream=1)}
        times["sample"] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        result = None
        if spec.surrogate == "stub":
            handle = oracle.surrogate(("u", "v"))
        else:
            handle, result = _train_flow_net(spec, phys, data)
            history = result.history
            provenance["final_loss"] = result.manifest["final_loss"]
        times["train"] = time.perf_counter() - t0

        stage = "couple"
        advect = advection_callable(handle)

        stage = "march"
        t0 = time.perf_counter()
        steady = _march_transport(spec, oracle.space, phys, advect)
        provenance["march_steps"] = steady.steps
        times["march"] = time.perf_counter() - t0

        stage = "metrics"
        t0 = time.perf_counter()
        grid = evaluation_grid()
        T_sol = steady.state.temperature[0]
        errors = _grid_errors(oracle.space, {"T": T_sol}, oracle, grid)
        nusselt = _nusselt_block(Field(oracle.space, T_sol), oracle)
        times["metrics"] = time.perf_counter() - t0
        art["state"] = steady.state
        art["handle"] = handle
        art["train_result"] = result
        art["space"] = oracle.space
    except (TrainingDivergedError, DivergenceError, OracleError) as exc:
        failure = (stage, f"{type(exc).__name__}: {exc}")
    return _finish_report(spec, errors, nusselt, history, times, provenance,
                          profiles, failure, art)


def _profile_block(cut_state: FlowState, cut_space: FunctionSpace,
                   oracle: CavityOracle, hole) -> tuple[dict, dict]:
    """P1/P2 temperature+velocity profiles of the cut-out solve vs oracle."""
    ref = oracle.fields()
    profiles, errors = {}, {}
    vel = cut_state.velocity[0]
    arrays = {"T": cut_state.temperature[0], "u": vel[:, 0], "v": vel[:, 1]}
    for name, kw in (("P1", {"x": 0.5}), ("P2", {"y": 0.5})):
        block = {}
        for var, vals in arrays.items():
            s, cand = line_profile(Field(cut_space, vals), hole=hole, **kw)
            _, refv = line_profile(Field(oracle.space, ref[var]),
                                   hole=hole, **kw)
            block["s"] = s
            block[var] = cand
            block[f"{var}_ref"] = refv
            rnorm = float(np.linalg.norm(refv))
            dnorm = float(np.linalg.norm(cand - refv))
            errors[f"{var}_{name}"] = dnorm / rnorm if rnorm > 0 else dnorm
        profiles[name] = block
    return profiles, errors


def _run_cutout(spec: ScenarioSpec) -> RunReport:
    """Scenario D: nets live on the window; the solver keeps the rest."""
    phys = spec.physics()
    art, times = {}, {}
    stage = "oracle"
    errors, nusselt, history, profiles = {}, None, [], None
    provenance = {"spec": _jsonable(asdict(spec)), "seed": spec.seed}
    failure = None
    try:
        t0 = time.perf_counter()
        oracle = steady_cavity_oracle(
            phys, elements=spec.elements, order=spec.order, dt=spec.dt,
            steady_tol=spec.steady_tol, max_steps=spec.max_steps,
            elliptic_tol=spec.elliptic_tol)
        provenance["oracle_checksum"] = oracle.checksum
        provenance["oracle_steps"] = oracle.steps
        cut_mesh = cutout_square(spec.hole_elements, spec.hole)
        cut_space = FunctionSpace(cut_mesh, spec.order)
        times["oracle"] = time.perf_counter() - t0

        stage = "sample"
        t0 = time.perf_counter()
        udata, tdata, rpts = _window_data(spec, oracle)
        times["sample"] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        result = None
        if spec.surrogate == "stub":
            handle_flow = oracle.surrogate(("u", "v", "p"))
            handle_T = oracle.surrogate(("T",))
        else:
            handle_flow, handle_T, result = _train_window_nets(
                spec, phys, udata, tdata, rpts)
            history = result.history
            provenance["final_loss"] = result.manifest["final_loss"]
        times["train"] = time.perf_counter() - t0

        stage = "couple"
        t0 = time.perf_counter()
        trace_flow = extract_interface(handle_flow, cut_space, "hole",
                                       "dirichlet", variables=("u", "v", "p"))
        trace_T = extract_interface(handle_T, cut_space, "hole",
                                    spec.trace_kind, R=spec.robin_r,
                                    variables=("T",))
        bcs = cutout_bcset(trace_flow, cavity_bcs())
        bcs = cutout_bcset(trace_T, bcs)
        times["couple"] = time.perf_counter() - t0

        stage = "march"
        t0 = time.perf_counter()
        state = FlowState.from_rest(cut_space, temperature=conduction_profile)
        stepper = TimeStepper(cut_space, spec.dt, order=2,
                              viscosity=phys.inv_re, inv_peclet=phys.inv_pe,
                              richardson=phys.ri, bcs=bcs,
                              elliptic_tol=spec.elliptic_tol, state=state)
        steady = drive_to_steady(stepper, spec.steady_tol, spec.max_steps)
        if not steady.converged:
            raise DivergenceError(
                f"cut-out march stalled at residual {steady.residual:.3e} "
                f"after {steady.steps} steps")
        provenance["march_steps"] = steady.steps
        times["march"] = time.perf_counter() - t0

        stage = "metrics"
        t0 = time.perf_counter()
        profiles, errors = _profile_block(steady.state, cut_space, oracle,
                                          spec.hole)
        grid = evaluation_grid(hole=spec.hole)
        vel = steady.state.velocity[0]
        grid_err = {}
        ref = oracle.fields()
        for var, vals in (("u", vel[:, 0]), ("v", vel[:, 1]),
                          ("T", steady.state.temperature[0])):
            grid_err[var] = relative_l2_error(Field(cut_space, vals),
                                              Field(oracle.space, ref[var]),
                                              grid)
        errors.update(grid_err)
        nusselt = _nusselt_block(
            Field(cut_space, steady.state.temperature[0]), oracle)
        times["metrics"] = time.perf_counter() - t0
        art["state"] = steady.state
        art["space"] = cut_space
        art["traces"] = (trace_flow, trace_T)
        art["train_result"] = result
    except (TrainingDivergedError, DivergenceError, OracleError) as exc:
        failure = (stage, f"{type(exc).__name__}: {exc}")
    return _finish_report(spec, errors, nusselt, history, times, provenance,
                          profiles, failure, art)


# -- unsteady desk scenario: analytic transported pulse ----------------------

def _pulse_reference(spec: ScenarioSpec, phys: Physics) -> dict:
    """Closed-form advected-diffusing Gaussian under a uniform u(t)."""
    kappa = phys.inv_pe
    if kappa <= 0:
        raise OracleError("unsteady reference needs a finite Peclet number")
    u0, amp, omega = 0.5, 0.2, math.pi
    x0, yc, t_off = 0.5, 0.5, 0.5

    def xc(t):
        return x0 + u0 * t + (amp / omega) * (1.0 - np.cos(omega * t))

    def T(x, y, t):
        s = 4.0 * kappa * (t + t_off)
        r2 = (x - xc(t)) ** 2 + (y - yc) ** 2
        return (t_off / (t + t_off)) * np.exp(-r2 / s)

    def u(x, y, t):
        return (u0 + amp * np.sin(omega * t)) + 0.0 * x

    def v(x, y, t):
        return 0.0 * x

    return {"T": T, "u": u, "v": v}


def _run_unsteady(spec: ScenarioSpec) -> RunReport:
    phys = spec.physics()
    art, times = {}, {}
    stage = "oracle"
    errors, nusselt, history, profiles = {}, None, [], None
    provenance = {"spec": _jsonable(asdict(spec)), "seed": spec.seed}
    failure = None
    region = ((0.0, 2.0), (0.0, 1.0))
    try:
        t0 = time.perf_counter()
        ref = _pulse_reference(spec, phys)
        provenance["oracle_checksum"] = _config_digest(
            {"kind": "pulse", "pe": repr(phys.pe)})
        times["oracle"] = time.perf_counter() - t0

        stage = "sample"
        t0 = time.perf_counter()
        data, initial = _pulse_data(spec, ref, region)
        times["sample"] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        handle, result = _train_pulse_net(spec, phys, data, initial, region)
        history = result.history
        provenance["final_loss"] = result.manifest["final_loss"]
        times["train"] = time.perf_counter() - t0

        stage = "couple"
        force = buoyancy_source(handle, phys.ri)

        stage = "march"
        t0 = time.perf_counter()
        mesh = structured_rectangle(spec.elements, max(1, spec.elements // 2),
                                    *region[0], *region[1])
        space = FunctionSpace(mesh, spec.order)
        state = FlowState.from_rest(space)
        stepper = TimeStepper(space, spec.dt, order=2, viscosity=phys.inv_re,
                              bcs=_noslip_bcs(), force=force,
                              elliptic_tol=spec.elliptic_tol, state=state)
        n_steps = min(10, int(round(
            (spec.time_span[1] - spec.time_span[0]) / spec.dt)))
        for _ in range(n_steps):
            state = stepper.advance()
        if not np.all(np.isfinite(state.velocity[0])):
            raise DivergenceError("unsteady march produced non-finite velocity")
        provenance["march_steps"] = n_steps
        times["march"] = time.perf_counter() - t0

        stage = "metrics"
        t0 = time.perf_counter()
        grid = evaluation_grid(region, n=61)
        t_mid = 0.5 * (spec.time_span[0] + spec.time_span[1])
        for tag, t_at in (("T_mid", t_mid), ("T_final", spec.time_span[1])):
            cand = handle.evaluate(grid, t=t_at, names=("T",))["T"]
            exact = ref["T"](grid[:, 0], grid[:, 1], t_at)
            errors[tag] = relative_l2_error(cand, exact, grid)
        times["metrics"] = time.perf_counter() - t0
        art["state"] = state
        art["handle"] = handle
        art["train_result"] = result
        art["space"] = space
    except (TrainingDivergedError, DivergenceError, OracleError) as exc:
        failure = (stage, f"{type(exc).__name__}: {exc}")
    return _finish_report(spec, errors, nusselt, history, times, provenance,
                          profiles, failure, art)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

_RUNNERS = {"A": _run_cavity_inference, "C": _run_cavity_inference,
            "B": _run_transport_inference, "D": _run_cutout,
            "unsteady": _run_unsteady}


def _finish_report(spec, errors, nusselt, history, times, provenance,
                   profiles, failure, art) -> RunReport:
    provenance.setdefault("label", spec.label or spec.scenario)
    report = RunReport(
        scenario=spec.scenario,
        errors={k: float(v) for k, v in errors.items()},
        nusselt=nusselt, loss_history=history, wall_times=dict(times),
        provenance=provenance, profiles=profiles,
        failure_stage=failure[0] if failure else None,
        failure_message=failure[1] if failure else None)
    report._artifacts = art
    return report


def run_scenario(spec: ScenarioSpec, out_dir=None,
                 plot_data: bool = False) -> RunReport:
    """Execute one scenario end to end; never raises for pipeline failures.

    Training or solver divergence lands in ``failure_stage`` /
    ``failure_message`` with whatever metrics were computed before the fault.
    With ``out_dir`` the report, marched state, trained models, and traces
    are written there; ``plot_data`` additionally dumps one CSV per curve.
    """
    t0 = time.perf_counter()
    report = _RUNNERS[spec.scenario](spec)
    report.wall_times["total"] = time.perf_counter() - t0
    if out_dir is not None:
        _write_artifacts(spec, report, Path(out_dir), plot_data)
    return report


def _write_artifacts(spec: ScenarioSpec, report: RunReport, out: Path,
                     plot_data: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    art = getattr(report, "_artifacts", {})
    if art.get("state") is not None:
        save_checkpoint(art["state"], out / "state.csv")
    result = art.get("train_result")
    if result is not None and art.get("handle") is not None:
        handle = art["handle"]
        save_model(out / "model.json", handle.model, handle.params,
                   manifest=_model_manifest(spec, handle.outputs,
                                            handle.region, handle.time_span))
    if spec.scenario == "D" and result is not None:
        for name, theta in result.thetas.items():
            model = MlpModel((2, *spec.widths, 3 if name == "flow" else 1))
            outputs = ("u", "v", "p") if name == "flow" else ("T",)
            a, b = spec.hole
            save_model(out / f"model_{name}.json", model, theta,
                       manifest=_model_manifest(spec, outputs,
                                                ((a, b), (a, b))))
    for i, trace in enumerate(art.get("traces", ())):
        save_trace(trace, out / f"trace_{i}.csv")
    if plot_data:
        _write_plot_csvs(report, out)


def _write_plot_csvs(report: RunReport, out: Path) -> None:
    """One CSV per curve: x (or y, or iteration) against the quantity."""
    def dump(name, xs, ys):
        lines = ["coordinate,value"]
        lines += [f"{float(a)!r},{float(b)!r}" for a, b in zip(xs, ys)]
        (out / f"{name}.csv").write_text("\n".join(lines) + "\n")

    if report.nusselt:
        nu = report.nusselt
        if "x" in nu:
            dump("nusselt", nu["x"], nu["nu"])
        dump("nusselt_oracle", nu["x_oracle"], nu["nu_oracle"])
    for pname, block in (report.profiles or {}).items():
        s = block["s"]
        for var in ("u", "v", "T"):
            if var in block:
                dump(f"profile_{pname}_{var}", s, block[var])
                dump(f"profile_{pname}_{var}_ref", s, block[f"{var}_ref"])
    if report.loss_history:
        hist = np.asarray(report.loss_history, dtype=float)
        dump("loss_history", hist[:, 0], hist[:, 1])


def run_training(spec: ScenarioSpec, out_dir=None) -> dict:
    """Train a scenario's surrogate(s) without the downstream coupled solve.

    Same data streams and network setup as the full pipelines, so a model
    trained here and fed back through a surrogate boundary/source reproduces
    the in-pipeline result bit for bit.  With ``out_dir`` the models land
    there as ``model.json`` (or ``model_flow.json``/``model_T.json`` for the
    window scenario).
    """
    if spec.surrogate != "trained":
        raise ValueError("run_training needs surrogate='trained'; the stub "
                         "route has nothing to train")
    phys = spec.physics()
    t0 = time.perf_counter()
    saved = []

    def emit(name, handle):
        if out_dir is None:
            return
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        save_model(path, handle.model, handle.params,
                   manifest=_model_manifest(spec, handle.outputs,
                                            handle.region, handle.time_span))
        saved.append(str(path))

    if spec.scenario == "unsteady":
        ref = _pulse_reference(spec, phys)
        region = ((0.0, 2.0), (0.0, 1.0))
        data, initial = _pulse_data(spec, ref, region)
        handle, result = _train_pulse_net(spec, phys, data, initial, region)
        emit("model.json", handle)
    else:
        oracle = steady_cavity_oracle(
            phys, elements=spec.elements, order=spec.order, dt=spec.dt,
            steady_tol=spec.steady_tol, max_steps=spec.max_steps,
            elliptic_tol=spec.elliptic_tol)
        if spec.scenario in ("A", "C"):
            data = _cavity_data(spec, oracle)
            boundary = cavity_thermal_boundary(
                spec.n_b, dirichlet=(spec.scenario == "A"))
            handle, result = _train_temperature_net(spec, phys, data,
                                                    boundary)
            emit("model.json", handle)
        elif spec.scenario == "B":
            data = {"T": sample_measurements(
                oracle.surrogate(("T",)), spec.n_t, spec.seed,
                noise=spec.noise_t, stream=1)}
            handle, result = _train_flow_net(spec, phys, data)
            emit("model.json", handle)
        else:
            udata, tdata, rpts = _window_data(spec, oracle)
            hflow, hT, result = _train_window_nets(spec, phys, udata, tdata,
                                                   rpts)
            emit("model_flow.json", hflow)
            emit("model_T.json", hT)

    return {"scenario": spec.scenario, "label": spec.label or spec.scenario,
            "iterations": spec.iterations,
            "final_loss": result.manifest["final_loss"],
            "wall_time": time.perf_counter() - t0, "models": saved}
