"""Fast built-in invariant checks, grouped into named suites.

Each check is a small self-contained property exercise (seconds, not
minutes) meant for installation sanity checks via ``neurosem verify``;
the full test suite remains the authority on correctness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["CheckResult", "run_suite", "suite_names"]


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    ok: bool
    detail: str


_SUITES: dict[str, list] = {}


def _check(suite, name):
    def deco(fn):
        _SUITES.setdefault(suite, []).append((name, fn))
        return fn
    return deco


def suite_names() -> tuple:
    return tuple(sorted(_SUITES)) + ("all",)


def run_suite(suite: str) -> list[CheckResult]:
    if suite == "all":
        names = sorted(_SUITES)
    elif suite in _SUITES:
        names = [suite]
    else:
        raise ValueError(f"unknown suite {suite!r}; known: "
                         f"{', '.join(suite_names())}")
    results = []
    for sname in names:
        for cname, fn in _SUITES[sname]:
            try:
                detail = fn() or "ok"
                results.append(CheckResult(sname, cname, True, detail))
            except Exception as exc:   # a failed invariant, whatever the form
                results.append(CheckResult(sname, cname, False,
                                           f"{type(exc).__name__}: {exc}"))
    return results


# ---------------------------------------------------------------------------
# quadrature / basis
# ---------------------------------------------------------------------------

@_check("quadrature", "gll_weights_integrate_polynomials")
def _gll_exactness():
    from .quadrature import gll_points
    worst = 0.0
    for n in (3, 5, 8):
        x, w = gll_points(n)
        for k in range(2 * n - 1):
            exact = (1.0 - (-1.0) ** (k + 1)) / (k + 1)
            worst = max(worst, abs(w @ x**k - exact))
    assert worst < 1e-13, f"quadrature defect {worst:.2e}"
    return f"max defect {worst:.2e} over degrees <= 2n-1"


@_check("quadrature", "differentiation_matrix_annihilates_constants")
def _diff_constants():
    from .quadrature import nodal_diff_matrix
    worst = max(np.abs(nodal_diff_matrix(n).sum(axis=1)).max()
                for n in (4, 8, 12))
    assert worst < 1e-12, f"row-sum defect {worst:.2e}"
    return f"max row sum {worst:.2e}"


@_check("quadrature", "interpolation_reproduces_nodal_values")
def _interp_identity():
    from .quadrature import gll_points, lagrange_interpolation_matrix
    x, _ = gll_points(6)
    I = lagrange_interpolation_matrix(x, x)
    defect = np.abs(I - np.eye(len(x))).max()
    assert defect < 1e-12
    return f"identity defect {defect:.2e}"


# ---------------------------------------------------------------------------
# elliptic solver
# ---------------------------------------------------------------------------

@_check("elliptic", "manufactured_poisson_high_order")
def _poisson():
    from .elliptic import BCKind, BoundaryCondition, assemble, solve
    from .field import FunctionSpace
    from .mesh import structured_rectangle
    space = FunctionSpace(structured_rectangle(4, 4), 8)
    sys = assemble(space, 0.0)
    rhs = lambda x, y: 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    bcs = [BoundaryCondition(c, BCKind.DIRICHLET, 0.0)
           for c in ("bottom", "right", "top", "left")]
    u = solve(sys, rhs, bcs, tol=1e-12)
    xy = space.node_coords
    err = np.abs(u.values[:, 0]
                 - np.sin(np.pi * xy[:, 0]) * np.sin(np.pi * xy[:, 1])).max()
    assert err < 1e-9, f"error {err:.2e}"
    return f"max nodal error {err:.2e} at order 8"


@_check("elliptic", "robin_zero_reproduces_neumann_bitwise")
def _robin_limit():
    from .elliptic import BCKind, BoundaryCondition, assemble, solve
    from .field import FunctionSpace
    from .mesh import structured_rectangle
    space = FunctionSpace(structured_rectangle(3, 3), 4)
    rhs = lambda x, y: np.cos(np.pi * x)
    walls = ("bottom", "right", "top", "left")

    def run(kind, **kw):
        bcs = [BoundaryCondition("bottom", BCKind.DIRICHLET, 0.0)]
        bcs += [BoundaryCondition(c, kind, 0.0, **kw)
                for c in walls if c != "bottom"]
        robin = [(c, kw.get("robin_coefficient", 0.0))
                 for c in walls if c != "bottom"] \
            if kind is BCKind.ROBIN else ()
        sys = assemble(space, 1.0, robin=robin)
        return solve(sys, rhs, bcs, tol=1e-12).values[:, 0]

    a = run(BCKind.NEUMANN)
    b = run(BCKind.ROBIN, robin_coefficient=0.0)
    assert np.array_equal(a, b), "R=0 Robin differs from Neumann"
    return "bitwise equal"


# ---------------------------------------------------------------------------
# timestepping
# ---------------------------------------------------------------------------

@_check("stepping", "checkpoint_round_trip_bitwise")
def _checkpoint():
    import tempfile
    from pathlib import Path
    from .field import FunctionSpace
    from .mesh import structured_rectangle
    from .stepping import FlowState, load_checkpoint, save_checkpoint
    space = FunctionSpace(structured_rectangle(3, 3), 3)
    rng = np.random.default_rng(0)
    state = FlowState.from_rest(space, temperature=rng.normal(
        size=space.num_nodes))
    state.velocity[0][:] = rng.normal(size=(space.num_nodes, 2))
    state.pressure[:] = rng.normal(size=space.num_nodes)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "state.csv"
        save_checkpoint(state, path)
        back = load_checkpoint(space, path)
    assert np.array_equal(back.velocity[0], state.velocity[0])
    assert np.array_equal(back.pressure, state.pressure)
    assert np.array_equal(back.temperature[0], state.temperature[0])
    return "u, v, p, T identical after save/load"


@_check("stepping", "coupled_step_deterministic")
def _coupled_step():
    from .field import FunctionSpace
    from .mesh import structured_rectangle
    from .pinn import Physics
    from .stepping import FlowState, TimeStepper
    from .assimilation import cavity_bcs, perturbed_conduction
    phys = Physics.from_rayleigh(1e4, 0.71)
    space = FunctionSpace(structured_rectangle(4, 4), 4)

    def advance(n):
        state = FlowState.from_rest(space, temperature=perturbed_conduction)
        stepper = TimeStepper(space, 1e-2, order=2, viscosity=phys.inv_re,
                              inv_peclet=phys.inv_pe, richardson=phys.ri,
                              bcs=cavity_bcs(), state=state)
        for _ in range(n):
            state = stepper.advance()
        return state
    a, b = advance(3), advance(3)
    assert np.array_equal(a.velocity[0], b.velocity[0])
    assert np.array_equal(a.temperature[0], b.temperature[0])
    assert np.all(np.isfinite(a.velocity[0]))
    return "three coupled steps bitwise repeatable"


# ---------------------------------------------------------------------------
# automatic differentiation
# ---------------------------------------------------------------------------

@_check("autodiff", "mlp_jets_match_finite_differences")
def _jets_vs_fd():
    from .autodiff import Tape
    from .networks import MlpModel
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(5):
        model = MlpModel((2, 8, 8, 1))
        theta = model.init(seed=trial)
        pts = rng.uniform(-0.8, 0.8, (6, 2))
        tape = Tape()
        bound = model.bind(tape, theta)
        jets = {k: v[..., 0] for k, v in
                model.jet(bound, pts, 2, True).value.items()}
        h1, h2 = 1e-6, 1e-4   # balance truncation against roundoff

        def f(p):
            return model.forward(theta, p)[:, 0]

        for key, fd in {
            (0,): (f(pts + [h1, 0]) - f(pts - [h1, 0])) / (2 * h1),
            (1,): (f(pts + [0, h1]) - f(pts - [0, h1])) / (2 * h1),
            (0, 0): (f(pts + [h2, 0]) - 2 * f(pts)
                     + f(pts - [h2, 0])) / h2**2,
            (1, 1): (f(pts + [0, h2]) - 2 * f(pts)
                     + f(pts - [0, h2])) / h2**2,
        }.items():
            got = jets[key]
            rel = np.abs(got - fd) / np.maximum(np.abs(fd), 1e-3)
            worst = max(worst, rel.max())
    assert worst < 1e-4, f"relative defect {worst:.2e}"
    return f"orders 1-2 within {worst:.2e} of finite differences"


@_check("autodiff", "parameter_gradient_matches_finite_differences")
def _param_grad_vs_fd():
    from .networks import MlpModel
    from .pinn import (LossSpec, Physics, PinnProblem, ScatteredData,
                       cavity_thermal_boundary, loss_and_grads)
    model = MlpModel((2, 6, 1))
    theta = model.init(seed=1)
    pts = np.random.default_rng(3).uniform(-0.5, 0.5, (5, 2))
    data = {"u": ScatteredData(points=pts,
                               values={"u": np.zeros(5), "v": np.zeros(5)})}
    prob = PinnProblem(spec=LossSpec("A"), models={"T": model},
                       physics=Physics.from_rayleigh(1e4, 0.71), data=data,
                       boundary=cavity_thermal_boundary(8))
    base, grads, _, _ = loss_and_grads(prob, {"T": theta})
    g = grads["T"]
    rng = np.random.default_rng(7)
    idx = rng.choice(theta.size, size=10, replace=False)
    h = 1e-6
    worst = 0.0
    for i in idx:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        lp, _, _, _ = loss_and_grads(prob, {"T": tp})
        lm, _, _, _ = loss_and_grads(prob, {"T": tm})
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(g[i] - fd) / max(abs(fd), 1e-6))
    assert worst < 1e-4, f"gradient defect {worst:.2e}"
    return f"10 sampled components within {worst:.2e}"


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@_check("networks", "model_save_load_bitwise")
def _model_io():
    import tempfile
    from pathlib import Path
    from .networks import MlpModel, load_model, save_model
    model = MlpModel((2, 16, 16, 1))
    theta = model.init(seed=9)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "m.json"
        save_model(path, model, theta, manifest={"note": "check"})
        back, theta2, manifest = load_model(path)
    assert np.array_equal(theta, theta2)
    assert back.widths == model.widths
    assert manifest["note"] == "check"
    return "parameters identical after save/load"


@_check("networks", "separable_grid_matches_pointwise")
def _separable_grid():
    from .networks import SeparableModel
    model = SeparableModel(rank=4, hidden=(8, 8))
    theta = model.init(seed=2)
    xs = np.linspace(0, 1, 7)
    ys = np.linspace(0, 1, 5)
    grid = model.grid_forward(theta, xs, ys)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pointwise = model.forward(theta, pts).reshape(7, 5)
    defect = np.abs(grid - pointwise).max()
    assert defect < 1e-12, f"defect {defect:.2e}"
    return f"max difference {defect:.2e}"


# ---------------------------------------------------------------------------
# training losses
# ---------------------------------------------------------------------------

@_check("pinn", "loss_and_gradients_deterministic")
def _loss_deterministic():
    from .networks import MlpModel
    from .pinn import (LossSpec, Physics, PinnProblem, ScatteredData,
                       cavity_thermal_boundary, loss_and_grads)
    rng = np.random.default_rng(11)
    pts = rng.uniform(0, 1, (40, 2))
    data = {"u": ScatteredData(points=pts,
                               values={"u": rng.normal(size=40),
                                       "v": rng.normal(size=40)})}
    model = MlpModel((2, 12, 12, 1))
    prob = PinnProblem(spec=LossSpec("A"), models={"T": model},
                       physics=Physics.from_rayleigh(1e4, 0.71), data=data,
                       boundary=cavity_thermal_boundary(16))
    theta = {"T": model.init(seed=0)}
    l1, g1, _, _ = loss_and_grads(prob, theta)
    l2, g2, _, _ = loss_and_grads(prob, theta)
    assert l1 == l2 and np.array_equal(g1["T"], g2["T"])
    return f"loss {l1:.6e} bitwise repeatable"


@_check("pinn", "self_adaptive_weights_never_decrease")
def _adaptive_monotone():
    from .networks import MlpModel
    from .pinn import (LossSpec, Physics, PinnProblem, ScatteredData,
                       cavity_thermal_boundary, train)
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 1, (30, 2))
    data = {"u": ScatteredData(points=pts,
                               values={"u": rng.normal(size=30),
                                       "v": rng.normal(size=30)})}
    model = MlpModel((2, 8, 8, 1))

    def lam_after(n):
        prob = PinnProblem(
            spec=LossSpec("A", self_adaptive=True, adaptive_rate=1e-3),
            models={"T": model},
            physics=Physics.from_rayleigh(1e4, 0.71), data=data,
            boundary=cavity_thermal_boundary(8))
        res = train(prob, {"T": model.init(seed=0)}, iterations=n, seed=0)
        return res.adaptive

    early, late = lam_after(2), lam_after(6)
    for key in early:
        assert np.all(late[key] >= early[key]), f"lambda dropped in {key}"
    return "per-point multipliers monotone over a shared trajectory prefix"


@_check("pinn", "gradient_enhanced_term_vanishes_for_quadratic")
def _gpinn_zero():
    from .autodiff import jet_keys
    from .pinn import gradient_enhanced_residuals

    class QuadraticStub:
        out_dim = 1
        n_params = 0

        def bind(self, tape, theta):
            return tape

        def jet(self, tape, X, order, mixed):
            X = np.asarray(X, dtype=float)
            x = X[:, 0]
            table = {(): x * x, (0,): 2 * x,
                     (0, 0): np.full_like(x, 2.0)}
            coeffs = {k: table[k] for k in jet_keys(2, order, mixed)
                      if k in table}
            return tape.record(coeffs, meta=(2, order, mixed))

    pts = np.random.default_rng(8).uniform(0, 1, (9, 2))
    g = gradient_enhanced_residuals(QuadraticStub(), None, pts,
                                    velocity=np.zeros((9, 2)), pe=1.0)
    defect = np.abs(g).max()
    assert defect < 1e-13, f"defect {defect:.2e}"
    return f"residual gradient max {defect:.2e}"


# ---------------------------------------------------------------------------
# solver coupling
# ---------------------------------------------------------------------------

@_check("coupling", "interface_trace_deterministic")
def _trace_deterministic():
    from .coupling import FieldSurrogate, extract_interface
    from .field import FunctionSpace
    from .mesh import cutout_square
    space = FunctionSpace(cutout_square(5), 4)
    xy = space.node_coords
    sur = FieldSurrogate(space, {"T": np.sin(xy[:, 0]) * xy[:, 1]})
    a = extract_interface(sur, space, "hole", "dirichlet")
    b = extract_interface(sur, space, "hole", "dirichlet")
    assert np.array_equal(a.values["hole"]["T"], b.values["hole"]["T"])
    return "repeated extraction bitwise identical"


@_check("coupling", "out_of_range_evaluation_warns")
def _range_warning():
    import warnings
    from .coupling import OutOfRangeWarning, SurrogateHandle
    from .networks import MlpModel
    model = MlpModel((2, 4, 1))
    handle = SurrogateHandle(model, model.init(seed=0), ("T",),
                             ((0.0, 1.0), (0.0, 1.0)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        handle.evaluate(np.array([[1.5, 0.5]]))
    assert any(issubclass(w.category, OutOfRangeWarning) for w in caught)
    return "extrapolation raises OutOfRangeWarning"


# ---------------------------------------------------------------------------
# assimilation plumbing
# ---------------------------------------------------------------------------

@_check("assimilation", "sampling_deterministic_and_unbiased")
def _sampling():
    from .assimilation import sample_measurements
    from .coupling import FieldSurrogate
    from .field import FunctionSpace
    from .mesh import structured_rectangle
    space = FunctionSpace(structured_rectangle(3, 3), 3)
    xy = space.node_coords
    sur = FieldSurrogate(space, {"T": xy[:, 0] + xy[:, 1]})
    a = sample_measurements(sur, 200, seed=1, noise=0.02)
    b = sample_measurements(sur, 200, seed=1, noise=0.02)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.values["T"], b.values["T"])
    resid = a.values["T"] - (a.points[:, 0] + a.points[:, 1])
    assert abs(resid.std() - 0.02) < 0.004
    return f"noise std {resid.std():.4f} (target 0.02)"


@_check("assimilation", "conduction_nusselt_is_unity")
def _nusselt_unity():
    from .assimilation import nusselt_profile
    from .field import Field, FunctionSpace
    from .mesh import structured_rectangle
    space = FunctionSpace(structured_rectangle(4, 4), 5)
    xy = space.node_coords
    nu = nusselt_profile(Field(space, 0.5 - xy[:, 1]))
    defect = max(abs(nu.mean - 1.0), np.abs(nu.values - 1.0).max())
    assert defect < 1e-10, f"defect {defect:.2e}"
    return f"|Nu| - 1 within {defect:.2e}"


@_check("assimilation", "report_canonical_form_stable")
def _report_stable():
    from .assimilation import RunReport
    kw = dict(scenario="A", errors={"u": 0.01}, nusselt=None,
              loss_history=[[1, 1.0]], provenance={"seed": 0})
    a = RunReport(wall_times={"train": 1.0}, **kw)
    b = RunReport(wall_times={"train": 2.0}, **kw)
    assert a.canonical_json() == b.canonical_json()
    json.loads(a.to_json())
    return "canonical form independent of wall-clock fields"


# ---------------------------------------------------------------------------
# session files
# ---------------------------------------------------------------------------

@_check("session", "parse_serialize_parse_identity")
def _session_identity():
    import tempfile
    from pathlib import Path
    from .session import parse_session, serialize_session
    with tempfile.TemporaryDirectory() as d:
        Path(d, "mesh.csv").write_text("#\n")
        text = """
[solver]
equations = "coupled"
dt = 0.01
final_time = 1.0
order = 4
mesh = "mesh.csv"

[parameters]
ra = 1e4
pr = 0.71

[boundary.bottom]
velocity = "noslip"
temperature = "dirichlet:0.5"
"""
        cfg = parse_session(text, base=d)
        again = parse_session(serialize_session(cfg), base=d)
    assert again == cfg
    return "config identical after render and reparse"


@_check("session", "derived_parameters_match_relations")
def _session_derived():
    from .session import ParameterBlock
    p = ParameterBlock(ra=1e4, pr=0.71).derived()
    assert abs(p["re"] ** 2 - 1e4 / 0.71) < 1e-9 * 1e4
    assert abs(p["pe"] ** 2 - 1e4 * 0.71) < 1e-9 * 1e4
    assert p["ri"] == 1.0
    assert abs(p["epsilon"] - 0.011867816581938534) < 1e-15
    return f"re={p['re']:.5f}, epsilon={p['epsilon']:.12g}"
