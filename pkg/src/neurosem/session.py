"""Session files: one TOML document describing a solver run or training job.

Sections:

  [solver]        equation set, time step, duration, mesh, output cadence
  [parameters]    nondimensional groups -- (ra, pr) or (re|kinvis, ri,
                  pe|epsilon), never both routes
  [functions]     surrogate bindings that enter the equations as closures
  [boundary.X]    per-composite conditions: literals, trace files, surrogates
  [training]      scenario, sample counts, seeds, optimizer schedule, variants

Parsing is strict: unknown keys and sections are rejected, every referenced
file must exist, and all violations are reported together rather than one at
a time.  ``parse_session`` and ``serialize_session`` are inverses on the
config level: parse(serialize(parse(text))) == parse(text).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .pinn import Physics

__all__ = [
    "SessionError",
    "SolverBlock", "ParameterBlock", "BoundaryEntry", "TrainingBlock",
    "SessionConfig",
    "parse_session", "load_session", "serialize_session",
    "to_scenario_spec",
]

EQUATION_SETS = ("navier-stokes", "advection-diffusion", "coupled")
_BOUNDARY_VARS = ("velocity", "temperature")


class SessionError(ValueError):
    """Invalid session document; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = [str(e) for e in errors]
        super().__init__("invalid session:\n  - " + "\n  - ".join(self.errors))


@dataclass(frozen=True)
class SolverBlock:
    equations: str
    dt: float
    final_time: float
    order: int
    mesh: str
    output_every: int = 0
    initial: str | None = None
    elliptic_tol: float = 1e-10


@dataclass(frozen=True)
class ParameterBlock:
    """Exactly one route: (ra, pr) or (re, ri, pe); aliases normalized away."""

    ra: float | None = None
    pr: float | None = None
    re: float | None = None
    ri: float | None = None
    pe: float | None = None

    def physics(self) -> Physics:
        if self.ra is not None:
            return Physics.from_rayleigh(self.ra, self.pr)
        return Physics(re=self.re, ri=self.ri, pe=self.pe)

    def derived(self) -> dict:
        ph = self.physics()
        return {"re": ph.re, "ri": ph.ri, "pe": ph.pe,
                "kinvis": ph.inv_re, "epsilon": ph.inv_pe}


@dataclass(frozen=True)
class BoundaryEntry:
    """One condition: a literal, a trace file, or a surrogate binding.

    kind      noslip | dirichlet | neumann | robin | trace | surrogate
    value     literal payload (tuple for velocity, float for temperature)
    path      trace CSV or model document for the file-backed kinds
    trace_kind, robin_r   how a surrogate binding is imposed
    """

    kind: str
    value: tuple | float | None = None
    path: str | None = None
    trace_kind: str = "dirichlet"
    robin_r: float = 0.0

    def render(self) -> str:
        if self.kind == "noslip":
            return "noslip"
        if self.kind in ("trace", "surrogate"):
            spec = f"{self.kind}:{self.path}"
            if self.kind == "surrogate" and self.trace_kind != "dirichlet":
                spec += f":{self.trace_kind}"
                if self.trace_kind == "robin":
                    spec += f":{self.robin_r!r}"
            return spec
        if isinstance(self.value, tuple):
            payload = ",".join(repr(float(v)) for v in self.value)
        else:
            payload = repr(float(self.value))
        if self.kind == "robin":
            payload = f"{self.robin_r!r};{payload}"
        return f"{self.kind}:{payload}"


@dataclass(frozen=True)
class TrainingBlock:
    scenario: str
    iterations: int
    seed: int = 0
    n_u: int = 0
    n_t: int = 0
    n_f: int = 0
    n_b: int = 256
    n_g: int = 0
    noise_u: float = 0.0
    noise_t: float = 0.0
    elements: int = 16
    order: int = 4
    widths: tuple = (64, 64, 64, 64)
    schedule: tuple | None = None
    hole: tuple = (0.4, 0.6)
    surrogate: str = "trained"
    trace_kind: str = "dirichlet"
    robin_r: float = 0.0
    separable: bool = False
    self_adaptive: bool = False
    gradient_enhanced: bool = False


@dataclass(frozen=True)
class SessionConfig:
    parameters: ParameterBlock
    solver: SolverBlock | None = None
    functions: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)
    training: TrainingBlock | None = None

    def __eq__(self, other):   # dicts of dataclasses compare fine by default,
        if not isinstance(other, SessionConfig):   # this keeps frozen= happy
            return NotImplemented
        return (self.parameters, self.solver, self.functions, self.boundary,
                self.training) == (other.parameters, other.solver,
                                   other.functions, other.boundary,
                                   other.training)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SOLVER_KEYS = {"equations", "dt", "final_time", "order", "mesh",
                "output_every", "initial", "elliptic_tol"}
_SOLVER_REQUIRED = {"equations", "dt", "final_time", "order", "mesh"}
_PARAM_KEYS = {"ra", "pr", "re", "ri", "pe", "kinvis", "epsilon"}
_FUNCTION_KEYS = {"body_force", "advection_velocity"}
_TRAINING_KEYS = {"scenario", "iterations", "seed", "n_u", "n_t", "n_f",
                  "n_b", "n_g", "noise_u", "noise_t", "elements", "order",
                  "widths", "schedule", "hole", "surrogate", "trace_kind",
                  "robin_r", "separable", "self_adaptive",
                  "gradient_enhanced"}
_TOP_KEYS = {"solver", "parameters", "functions", "boundary", "training"}


def _want_float(table, key, errors, where, default=None, positive=False):
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{where}.{key}: expected a number, got {v!r}")
        return default
    v = float(v)
    if positive and not v > 0:
        errors.append(f"{where}.{key}: must be positive, got {v!r}")
        return default
    return v


def _want_int(table, key, errors, where, default=None, minimum=None):
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, int):
        errors.append(f"{where}.{key}: expected an integer, got {v!r}")
        return default
    if minimum is not None and v < minimum:
        errors.append(f"{where}.{key}: must be >= {minimum}, got {v}")
        return default
    return v


def _want_bool(table, key, errors, where, default=False):
    if key not in table:
        return default
    v = table[key]
    if not isinstance(v, bool):
        errors.append(f"{where}.{key}: expected true/false, got {v!r}")
        return default
    return v


def _want_str(table, key, errors, where, default=None, choices=None):
    if key not in table:
        return default
    v = table[key]
    if not isinstance(v, str):
        errors.append(f"{where}.{key}: expected a string, got {v!r}")
        return default
    if choices and v not in choices:
        errors.append(f"{where}.{key}: {v!r} is not one of {sorted(choices)}")
        return default
    return v


def _check_keys(table, allowed, errors, where):
    for key in sorted(set(table) - set(allowed)):
        errors.append(f"{where}: unknown key {key!r}")


def _check_file(path, errors, where, base):
    if path is None:
        return None
    full = Path(base) / path
    if not full.exists():
        errors.append(f"{where}: file not found: {full}")
    return str(path)


def _parse_parameters(table, errors) -> ParameterBlock:
    _check_keys(table, _PARAM_KEYS, errors, "parameters")
    vals = {k: _want_float(table, k, errors, "parameters", positive=True)
            for k in _PARAM_KEYS}
    if vals["re"] is not None and vals["kinvis"] is not None:
        errors.append("parameters: give re or kinvis, not both")
    if vals["pe"] is not None and vals["epsilon"] is not None:
        errors.append("parameters: give pe or epsilon, not both")
    re = vals["re"] if vals["re"] is not None else (
        1.0 / vals["kinvis"] if vals["kinvis"] else None)
    pe = vals["pe"] if vals["pe"] is not None else (
        1.0 / vals["epsilon"] if vals["epsilon"] else None)
    ra_route = vals["ra"] is not None or vals["pr"] is not None
    ex_route = re is not None or vals["ri"] is not None or pe is not None
    if ra_route and ex_route:
        errors.append("parameters: give (ra, pr) or (re, ri, pe), not both")
    elif ra_route:
        if vals["ra"] is None or vals["pr"] is None:
            errors.append("parameters: the Rayleigh route needs both ra and pr")
        else:
            return ParameterBlock(ra=vals["ra"], pr=vals["pr"])
    elif ex_route:
        missing = [n for n, v in (("re (or kinvis)", re), ("ri", vals["ri"]),
                                  ("pe (or epsilon)", pe)) if v is None]
        if missing:
            errors.append("parameters: the explicit route needs "
                          + ", ".join(missing))
        else:
            return ParameterBlock(re=re, ri=vals["ri"], pe=pe)
    else:
        errors.append("parameters: give (ra, pr) or (re, ri, pe)")
    return ParameterBlock(ra=1.0, pr=1.0)   # placeholder; errors block use


def _parse_solver(table, errors, base) -> SolverBlock | None:
    _check_keys(table, _SOLVER_KEYS, errors, "solver")
    for key in sorted(_SOLVER_REQUIRED - set(table)):
        errors.append(f"solver: missing required key {key!r}")
    eq = _want_str(table, "equations", errors, "solver",
                   choices=EQUATION_SETS)
    dt = _want_float(table, "dt", errors, "solver", positive=True)
    final = _want_float(table, "final_time", errors, "solver", positive=True)
    order = _want_int(table, "order", errors, "solver", minimum=1)
    mesh = _want_str(table, "mesh", errors, "solver")
    out = _want_int(table, "output_every", errors, "solver", default=0,
                    minimum=0)
    initial = _want_str(table, "initial", errors, "solver")
    tol = _want_float(table, "elliptic_tol", errors, "solver",
                      default=1e-10, positive=True)
    if mesh is not None:
        _check_file(mesh, errors, "solver.mesh", base)
    if initial is not None:
        _check_file(initial, errors, "solver.initial", base)
    if eq is None or dt is None or final is None or order is None \
            or mesh is None:
        return None
    return SolverBlock(equations=eq, dt=dt, final_time=final, order=order,
                       mesh=mesh, output_every=out, initial=initial,
                       elliptic_tol=tol)


def _parse_functions(table, errors, base) -> dict:
    _check_keys(table, _FUNCTION_KEYS, errors, "functions")
    out = {}
    for key in sorted(set(table) & _FUNCTION_KEYS):
        path = _want_str(table, key, errors, "functions")
        if path is not None:
            _check_file(path, errors, f"functions.{key}", base)
            out[key] = path
    return out


def _parse_boundary_entry(var, spec, errors, where, base):
    if not isinstance(spec, str):
        errors.append(f"{where}: expected a condition string, got {spec!r}")
        return None
    head, _, rest = spec.partition(":")
    head = head.strip().lower()
    if head == "noslip":
        if var != "velocity":
            errors.append(f"{where}: noslip applies to velocity only")
            return None
        if rest:
            errors.append(f"{where}: noslip takes no payload")
            return None
        return BoundaryEntry("noslip", value=(0.0, 0.0))
    if head in ("trace", "surrogate"):
        parts = rest.split(":") if rest else []
        if not parts or not parts[0]:
            errors.append(f"{where}: {head} needs a file path")
            return None
        path = _check_file(parts[0], errors, where, base)
        tkind, robin_r = "dirichlet", 0.0
        if head == "surrogate" and len(parts) > 1:
            tkind = parts[1].strip().lower()
            if tkind not in ("dirichlet", "neumann", "robin"):
                errors.append(f"{where}: unknown imposition {tkind!r}")
                return None
            if tkind == "robin":
                if len(parts) < 3:
                    errors.append(f"{where}: robin imposition needs a "
                                  "coefficient (surrogate:PATH:robin:R)")
                    return None
                try:
                    robin_r = float(parts[2])
                except ValueError:
                    errors.append(f"{where}: bad robin coefficient "
                                  f"{parts[2]!r}")
                    return None
        elif head == "trace" and len(parts) > 1:
            errors.append(f"{where}: trace takes just a path")
            return None
        return BoundaryEntry(head, path=path, trace_kind=tkind,
                             robin_r=robin_r)
    if head in ("dirichlet", "neumann", "robin"):
        payload = rest
        robin_r = 0.0
        if head == "robin":
            rpart, sep, payload = rest.partition(";")
            if not sep:
                errors.append(f"{where}: robin syntax is robin:R;VALUE")
                return None
            try:
                robin_r = float(rpart)
            except ValueError:
                errors.append(f"{where}: bad robin coefficient {rpart!r}")
                return None
        try:
            nums = tuple(float(p) for p in payload.split(","))
        except ValueError:
            errors.append(f"{where}: bad literal payload {payload!r}")
            return None
        if var == "velocity":
            if head != "dirichlet":
                errors.append(f"{where}: velocity conditions are noslip, "
                              "dirichlet:U,V, or trace")
                return None
            if len(nums) != 2:
                errors.append(f"{where}: velocity dirichlet needs two "
                              "components (U,V)")
                return None
            return BoundaryEntry("dirichlet", value=nums)
        if len(nums) != 1:
            errors.append(f"{where}: temperature conditions take one value")
            return None
        return BoundaryEntry(head, value=nums[0], robin_r=robin_r)
    errors.append(f"{where}: unknown condition kind {head!r}")
    return None


def _parse_boundary(table, errors, base) -> dict:
    out = {}
    for comp in sorted(table):
        entry = table[comp]
        where = f"boundary.{comp}"
        if not isinstance(entry, dict):
            errors.append(f"{where}: expected a table of conditions")
            continue
        _check_keys(entry, _BOUNDARY_VARS, errors, where)
        conditions = {}
        for var in _BOUNDARY_VARS:
            if var in entry:
                parsed = _parse_boundary_entry(var, entry[var], errors,
                                               f"{where}.{var}", base)
                if parsed is not None:
                    conditions[var] = parsed
        if conditions:
            out[comp] = conditions
    return out


def _parse_training(table, errors, base) -> TrainingBlock | None:
    _check_keys(table, _TRAINING_KEYS, errors, "training")
    from .assimilation import SCENARIOS   # late: avoids cycle at import time
    scenario = _want_str(table, "scenario", errors, "training",
                         choices=SCENARIOS)
    iterations = _want_int(table, "iterations", errors, "training",
                           minimum=0)
    if scenario is None or iterations is None:
        if "scenario" not in table:
            errors.append("training: missing required key 'scenario'")
        if "iterations" not in table:
            errors.append("training: missing required key 'iterations'")
        return None
    kw = dict(scenario=scenario, iterations=iterations)
    kw["seed"] = _want_int(table, "seed", errors, "training", default=0,
                           minimum=0)
    for key, dflt in (("n_u", 0), ("n_t", 0), ("n_f", 0), ("n_b", 256),
                      ("n_g", 0), ("elements", 16), ("order", 4)):
        kw[key] = _want_int(table, key, errors, "training", default=dflt,
                            minimum=0 if key.startswith("n_") else 1)
    for key in ("noise_u", "noise_t"):
        v = _want_float(table, key, errors, "training", default=0.0)
        if v is not None and v < 0:
            errors.append(f"training.{key}: must be nonnegative")
            v = 0.0
        kw[key] = v
    kw["robin_r"] = _want_float(table, "robin_r", errors, "training",
                                default=0.0)
    kw["surrogate"] = _want_str(table, "surrogate", errors, "training",
                                default="trained",
                                choices=("trained", "stub"))
    kw["trace_kind"] = _want_str(table, "trace_kind", errors, "training",
                                 default="dirichlet",
                                 choices=("dirichlet", "neumann", "robin"))
    for key in ("separable", "self_adaptive", "gradient_enhanced"):
        kw[key] = _want_bool(table, key, errors, "training")

    widths = table.get("widths", [64, 64, 64, 64])
    if (not isinstance(widths, list) or not widths
            or any(isinstance(w, bool) or not isinstance(w, int) or w < 1
                   for w in widths)):
        errors.append("training.widths: expected a list of positive integers")
        widths = [64]
    kw["widths"] = tuple(widths)

    hole = table.get("hole", [0.4, 0.6])
    ok = (isinstance(hole, list) and len(hole) == 2
          and all(isinstance(h, (int, float)) and not isinstance(h, bool)
                  for h in hole))
    if ok and not 0.0 < float(hole[0]) < float(hole[1]) < 1.0:
        errors.append("training.hole: must satisfy 0 < a < b < 1")
        ok = False
    if not ok:
        if not isinstance(hole, list) or len(hole) != 2:
            errors.append("training.hole: expected [a, b]")
        hole = [0.4, 0.6]
    kw["hole"] = (float(hole[0]), float(hole[1]))

    schedule = table.get("schedule")
    if schedule is not None:
        parsed = []
        good = isinstance(schedule, list) and schedule
        if good:
            for pair in schedule:
                if (not isinstance(pair, list) or len(pair) != 2
                        or isinstance(pair[0], bool)
                        or not isinstance(pair[0], int) or pair[0] < 0
                        or not isinstance(pair[1], (int, float))
                        or not pair[1] > 0):
                    good = False
                    break
                parsed.append((pair[0] if pair[0] > 0 else None,
                               float(pair[1])))
        if not good:
            errors.append("training.schedule: expected [[steps, rate], ...] "
                          "with positive rates; steps 0 marks the open tail")
            schedule = None
        else:
            if any(s is None for s, _ in parsed[:-1]):
                errors.append("training.schedule: only the last entry may "
                              "leave steps open (0)")
            schedule = tuple(parsed)
    kw["schedule"] = schedule
    return TrainingBlock(**kw)


def parse_session(text: str, base=".") -> SessionConfig:
    """Strict parse of a session document; collects every violation.

    ``base`` anchors relative file references (a config's own directory
    when loaded from disk).
    """
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise SessionError([f"syntax: {exc}"]) from None

    errors: list[str] = []
    _check_keys(doc, _TOP_KEYS, errors, "top level")
    if "parameters" not in doc:
        errors.append("missing required section [parameters]")
        params = ParameterBlock(ra=1.0, pr=1.0)
    elif not isinstance(doc["parameters"], dict):
        errors.append("parameters: expected a section, got a value")
        params = ParameterBlock(ra=1.0, pr=1.0)
    else:
        params = _parse_parameters(doc["parameters"], errors)

    solver = None
    if "solver" in doc:
        if not isinstance(doc["solver"], dict):
            errors.append("solver: expected a section, got a value")
        else:
            solver = _parse_solver(doc["solver"], errors, base)

    functions = {}
    if "functions" in doc:
        if not isinstance(doc["functions"], dict):
            errors.append("functions: expected a section, got a value")
        else:
            functions = _parse_functions(doc["functions"], errors, base)

    boundary = {}
    if "boundary" in doc:
        if not isinstance(doc["boundary"], dict):
            errors.append("boundary: expected per-composite sections")
        else:
            boundary = _parse_boundary(doc["boundary"], errors, base)

    training = None
    if "training" in doc:
        if not isinstance(doc["training"], dict):
            errors.append("training: expected a section, got a value")
        else:
            training = _parse_training(doc["training"], errors, base)

    # cross-field rules; use the raw equations string so they still fire
    # when other solver keys are broken
    eq = None
    if isinstance(doc.get("solver"), dict):
        raw = doc["solver"].get("equations")
        eq = raw if raw in EQUATION_SETS else None
    if eq is not None:
        if "advection_velocity" in functions and eq != "advection-diffusion":
            errors.append("functions.advection_velocity: only the "
                          "advection-diffusion equation set takes an "
                          "external advecting field")
        if "body_force" in functions and eq == "advection-diffusion":
            errors.append("functions.body_force: the advection-diffusion "
                          "equation set has no momentum equation to force")
    elif functions and "solver" not in doc:
        errors.append("functions: bindings need a [solver] section to "
                      "attach to")
    if "solver" not in doc and "training" not in doc:
        errors.append("a session needs a [solver] or a [training] section")

    if errors:
        raise SessionError(errors)
    return SessionConfig(parameters=params, solver=solver,
                         functions=functions, boundary=boundary,
                         training=training)


def load_session(path) -> SessionConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SessionError([f"cannot read {path}: {exc}"]) from None
    return parse_session(text, base=path.parent)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError(f"cannot serialize non-finite number {v!r}")
        s = repr(v)
        return s if any(c in s for c in ".e") else s + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def serialize_session(config: SessionConfig) -> str:
    """Render back to TOML text; stable key order, repr-exact floats."""
    lines: list[str] = []

    def section(name, pairs):
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key, val in pairs:
            if val is not None:
                lines.append(f"{key} = {_toml_value(val)}")

    if config.solver is not None:
        s = config.solver
        section("solver", [
            ("equations", s.equations), ("dt", s.dt),
            ("final_time", s.final_time), ("order", s.order),
            ("mesh", s.mesh), ("output_every", s.output_every),
            ("initial", s.initial), ("elliptic_tol", s.elliptic_tol)])

    p = config.parameters
    if p.ra is not None:
        section("parameters", [("ra", p.ra), ("pr", p.pr)])
    else:
        section("parameters", [("re", p.re), ("ri", p.ri), ("pe", p.pe)])

    if config.functions:
        section("functions", sorted(config.functions.items()))

    for comp in sorted(config.boundary):
        conditions = config.boundary[comp]
        section(f"boundary.{comp}",
                [(var, conditions[var].render())
                 for var in _BOUNDARY_VARS if var in conditions])

    if config.training is not None:
        t = config.training
        schedule = None
        if t.schedule is not None:
            schedule = [[0 if s is None else s, r] for s, r in t.schedule]
        section("training", [
            ("scenario", t.scenario), ("iterations", t.iterations),
            ("seed", t.seed), ("n_u", t.n_u), ("n_t", t.n_t),
            ("n_f", t.n_f), ("n_b", t.n_b), ("n_g", t.n_g),
            ("noise_u", t.noise_u), ("noise_t", t.noise_t),
            ("elements", t.elements), ("order", t.order),
            ("widths", list(t.widths)), ("schedule", schedule),
            ("hole", list(t.hole)), ("surrogate", t.surrogate),
            ("trace_kind", t.trace_kind), ("robin_r", t.robin_r),
            ("separable", t.separable), ("self_adaptive", t.self_adaptive),
            ("gradient_enhanced", t.gradient_enhanced)])
    return "\n".join(lines) + "\n"


def to_scenario_spec(config: SessionConfig):
    """Build the assimilation-run description from a [training] session."""
    from .assimilation import ScenarioSpec
    t = config.training
    if t is None:
        raise SessionError(["scenario runs need a [training] section"])
    p = config.parameters
    kw = dict(scenario=t.scenario, elements=t.elements, order=t.order,
              n_u=t.n_u, n_t=t.n_t, n_f=t.n_f, n_b=t.n_b, n_g=t.n_g,
              noise_u=t.noise_u, noise_t=t.noise_t, seed=t.seed,
              hole=t.hole, widths=t.widths, iterations=t.iterations,
              schedule=t.schedule, surrogate=t.surrogate,
              trace_kind=t.trace_kind, robin_r=t.robin_r,
              separable=t.separable, self_adaptive=t.self_adaptive,
              gradient_enhanced=t.gradient_enhanced)
    if p.ra is not None:
        kw.update(ra=p.ra, pr=p.pr)
    else:
        kw.update(ra=None, pr=None, re=p.re, ri=p.ri, pe=p.pe)
    if config.solver is not None:
        kw.update(dt=config.solver.dt,
                  elliptic_tol=config.solver.elliptic_tol)
    try:
        return ScenarioSpec(**kw)
    except ValueError as exc:
        raise SessionError([f"training: {exc}"]) from None
