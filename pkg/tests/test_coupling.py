import math
import warnings

import numpy as np
import pytest

from neurosem.coupling import (
    FieldSurrogate,
    InterfaceTrace,
    OutOfRangeWarning,
    SurrogateHandle,
    advection_callable,
    advection_from_surrogate,
    body_force_from_surrogate,
    buoyancy_source,
    cutout_bcset,
    extract_interface,
    load_trace,
    save_trace,
    trace_values_from_csv,
)
from neurosem.elliptic import BCKind, BoundaryCondition, HelmholtzSystem, solve
from neurosem.field import Field, FunctionSpace
from neurosem.mesh import cutout_square, structured_rectangle
from neurosem.networks import MlpModel, SeparableModel, save_model
from neurosem.stepping import (
    BCSet,
    FlowState,
    TimeStepper,
    VelocityBC,
    advdiff_step,
    coupled_step,
)

from oracles import fd_partial


UNIT = ((0.0, 1.0), (0.0, 1.0))


class ClosedFormSurrogate:
    """Analytic fields with exact gradients, quacking like a handle."""

    def __init__(self, funcs, grads, outputs, region=UNIT):
        self.outputs = tuple(outputs)
        self.region = region
        self.time_span = None
        self.out_of_range = False
        self._funcs, self._grads = funcs, grads

    def evaluate(self, points, t=None, names=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        names = self.outputs if names is None else names
        return {v: np.asarray(self._funcs[v](pts[:, 0], pts[:, 1]), dtype=float)
                for v in names}

    def gradient(self, points, t=None, names=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        names = self.outputs if names is None else names
        vals = self.evaluate(pts, t, names)
        grads = {v: np.column_stack(self._grads[v](pts[:, 0], pts[:, 1]))
                 for v in names}
        return vals, grads


def linear_T_surrogate():
    return ClosedFormSurrogate({"T": lambda x, y: y},
                               {"T": lambda x, y: (np.zeros_like(x),
                                                   np.ones_like(x))}, ("T",))


def constant_flow_handle(u, v, region=UNIT):
    model = MlpModel((2, 2))
    theta = np.zeros(model.n_params)
    model.unpack(theta)[-1][1][:] = [u, v]
    return SurrogateHandle(model, theta, ("u", "v"), region)


# ---------------------------------------------------------------------------
# handles
# ---------------------------------------------------------------------------

def test_handle_evaluate_matches_forward_columns():
    model = MlpModel((2, 6, 3))
    theta = model.init(0)
    h = SurrogateHandle(model, theta, ("u", "v", "p"), UNIT)
    pts = np.random.default_rng(1).uniform(0, 1, (9, 2))
    out = model.forward(theta, pts)
    vals = h.evaluate(pts)
    for c, name in enumerate(("u", "v", "p")):
        assert np.array_equal(vals[name], out[:, c])
    only = h.evaluate(pts, names=("p",))
    assert set(only) == {"p"} and np.array_equal(only["p"], out[:, 2])
    with pytest.raises(ValueError, match="does not provide"):
        h.evaluate(pts, names=("T",))


def test_handle_validation():
    model = MlpModel((2, 4, 1))
    with pytest.raises(ValueError, match="subset"):
        SurrogateHandle(model, model.init(0), ("q",), UNIT)
    with pytest.raises(ValueError, match="declared"):
        SurrogateHandle(model, model.init(0), ("u", "v"), UNIT)
    with pytest.raises(ValueError, match="increasing"):
        SurrogateHandle(model, model.init(0), ("T",), ((1.0, 0.0), (0.0, 1.0)))


@pytest.mark.parametrize("make", [
    lambda: (MlpModel((2, 5, 1)), "mlp"),
    lambda: (SeparableModel(rank=2, hidden=(4,)), "separable"),
])
def test_handle_gradient_matches_fd(make):
    model, _ = make()
    theta = model.init(3)
    h = SurrogateHandle(model, theta, ("T",), UNIT)
    pts = np.random.default_rng(4).uniform(0.1, 0.9, (4, 2))
    vals, grads = h.gradient(pts)
    assert np.allclose(vals["T"], h.evaluate(pts)["T"], atol=1e-14)
    for n in range(len(pts)):
        for d in range(2):
            fd = fd_partial(lambda q: float(np.ravel(
                model.forward(theta, q[None]))[0]), pts[n], (d,), h=1e-6)
            assert abs(grads["T"][n, d] - fd) < 1e-6


def test_out_of_range_warns_and_latches():
    h = SurrogateHandle(MlpModel((2, 3, 1)), MlpModel((2, 3, 1)).init(0),
                        ("T",), ((0.0, 1.0), (0.0, 1.0)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        h.evaluate([[0.5, 0.5], [1.0, 0.0]])     # boundary points are inside
    assert h.out_of_range is False
    with pytest.warns(OutOfRangeWarning, match="leave the validity region"):
        h.evaluate([[0.5, 1.7]])
    assert h.out_of_range is True


def test_time_dependent_handle():
    model = MlpModel((3, 4, 1))
    theta = model.init(5)
    h = SurrogateHandle(model, theta, ("T",), UNIT, time_span=(0.0, 2.0))
    pts = np.random.default_rng(6).uniform(0, 1, (4, 2))
    with pytest.raises(ValueError, match="pass t"):
        h.evaluate(pts)
    got = h.evaluate(pts, t=1.5)["T"]
    want = model.forward(theta, np.column_stack([pts, np.full(4, 1.5)]))[:, 0]
    assert np.array_equal(got, want)
    with pytest.warns(OutOfRangeWarning, match="trained span"):
        h.evaluate(pts, t=3.0)
    assert h.out_of_range is True


def test_handle_from_file_reads_manifest(tmp_path):
    model = MlpModel((2, 4, 1))
    theta = model.init(7)
    path = tmp_path / "surrogate.json"
    save_model(path, model, theta,
               manifest={"outputs": ["T"], "region": [[0, 1], [0, 1]]})
    h = SurrogateHandle.from_file(path)
    assert h.outputs == ("T",) and h.region == ((0.0, 1.0), (0.0, 1.0))
    pts = np.random.default_rng(8).uniform(0, 1, (3, 2))
    assert np.array_equal(h.evaluate(pts)["T"],
                          model.forward(theta, pts)[:, 0])
    save_model(path, model, theta)  # bare manifest
    with pytest.raises(ValueError, match="manifest lacks"):
        SurrogateHandle.from_file(path)
    h2 = SurrogateHandle.from_file(path, outputs=("T",),
                                   region=((0, 2), (0, 2)))
    assert h2.region == ((0.0, 2.0), (0.0, 2.0))


def test_field_surrogate_interpolates_and_differentiates():
    space = FunctionSpace(structured_rectangle(4, 4), 4)
    xy = space.node_coords
    fs = FieldSurrogate(space, {"T": xy[:, 0] ** 2 + 2 * xy[:, 1],
                                "u": np.full(space.num_nodes, 3.0)})
    pts = np.random.default_rng(9).uniform(0.05, 0.95, (6, 2))
    vals, grads = fs.gradient(pts)
    assert np.allclose(vals["T"], pts[:, 0] ** 2 + 2 * pts[:, 1], atol=1e-11)
    assert np.allclose(vals["u"], 3.0, atol=1e-12)
    assert np.allclose(grads["T"][:, 0], 2 * pts[:, 0], atol=1e-9)
    assert np.allclose(grads["T"][:, 1], 2.0, atol=1e-9)
    with pytest.raises(ValueError, match="does not provide"):
        fs.evaluate(pts, names=("v",))


# ---------------------------------------------------------------------------
# body force / advection adapters
# ---------------------------------------------------------------------------

def test_body_force_trivial_and_short_circuit():
    space = FunctionSpace(structured_rectangle(2, 2), 3)
    ones = FieldSurrogate(space, {"T": np.ones(space.num_nodes)})
    pts = np.random.default_rng(10).uniform(0, 1, (8, 2))
    f = body_force_from_surrogate(ones, pts, ri=2.0)
    assert np.allclose(f[:, 0], 0.0, atol=0) and np.allclose(f[:, 1], 2.0,
                                                             atol=1e-12)
    # Ri = 0 never touches the surrogate: a velocity-only handle would raise
    flow_only = constant_flow_handle(1.0, 0.0)
    f0 = body_force_from_surrogate(flow_only, pts, ri=0.0)
    assert np.array_equal(f0, np.zeros((8, 2)))


def test_advection_samples_and_zero_surrogate_diffuses():
    pts = np.random.default_rng(11).uniform(0, 1, (5, 2))
    uv = advection_from_surrogate(constant_flow_handle(1.0, 0.0), pts)
    assert np.array_equal(uv, np.tile([1.0, 0.0], (5, 1)))

    space = FunctionSpace(structured_rectangle(3, 3), 4)
    bcs = BCSet(temperature=[BoundaryCondition(lab, BCKind.DIRICHLET, 0.0)
                             for lab in ("bottom", "top", "left", "right")])
    T0 = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    zero = advection_callable(constant_flow_handle(0.0, 0.0))
    plain = lambda x, y, t: (np.zeros_like(x), np.zeros_like(x))
    states = []
    for adv in (zero, plain):
        st = FlowState.from_rest(space, temperature=T0, with_flow=False)
        for _ in range(5):
            st = advdiff_step(st, 1e-2, 0.05, advection=adv, bcs=bcs)
        states.append(st.temperature[0])
    assert np.array_equal(states[0], states[1])
    # and it actually diffused
    assert np.max(np.abs(states[0])) < np.max(np.abs(
        Field.from_callable(space, T0).values))


def test_uniform_drift_adapter_is_transparent():
    mesh = structured_rectangle(6, 3, x1=2.0)
    space = FunctionSpace(mesh, order=4, periodic=[("left", "right")])
    pulse = lambda x, y: np.exp(-((x - 1.0) ** 2) / (2 * 0.08**2))
    bcs = BCSet(temperature=[BoundaryCondition("bottom", BCKind.NEUMANN, 0.0),
                             BoundaryCondition("top", BCKind.NEUMANN, 0.0)])
    wide = ((0.0, 2.0), (0.0, 1.0))
    runs = []
    for adv in (advection_callable(constant_flow_handle(1.0, 0.0, wide)),
                lambda x, y, t: (np.ones_like(x), np.zeros_like(x))):
        st = FlowState.from_rest(space, temperature=pulse, with_flow=False)
        for _ in range(20):
            st = advdiff_step(st, 1e-3, 1e-3, advection=adv, bcs=bcs)
        runs.append(st.temperature[0])
    assert np.array_equal(runs[0], runs[1])


def no_slip_walls():
    return [VelocityBC(lab) for lab in ("bottom", "top", "left", "right")]


def test_replayed_temperature_force_reproduces_coupled_velocity():
    """Momentum marched with a surrogate body force built from the coupled
    run's own temperatures must retrace the coupled velocities bitwise."""
    space = FunctionSpace(structured_rectangle(3, 3), 4)
    dt, nu, inv_pe, ri = 5e-3, 0.05, 0.05, 10.0
    tbcs = [BoundaryCondition("bottom", BCKind.DIRICHLET, 0.5),
            BoundaryCondition("top", BCKind.DIRICHLET, -0.5),
            BoundaryCondition("left", BCKind.NEUMANN, 0.0),
            BoundaryCondition("right", BCKind.NEUMANN, 0.0)]
    bcs = BCSet(velocity=no_slip_walls(), temperature=tbcs)
    T0 = lambda x, y: 0.5 - y + 0.05 * np.sin(np.pi * x) * np.sin(np.pi * y)

    state = FlowState.from_rest(space, temperature=T0)
    rec, coupled_u = {}, []
    for n in range(6):
        state = coupled_step(state, dt, nu, inv_pe, ri, bcs=bcs)
        rec[n + 1] = state.temperature[0].copy()
        coupled_u.append(state.velocity[0].copy())

    class Replay:
        outputs, region, time_span = ("T",), UNIT, None
        out_of_range = False

        def evaluate(self, pts, t=None, names=None):
            return {"T": rec[round(t / dt)]}

    stepper = TimeStepper(space, dt, viscosity=nu,
                          bcs=BCSet(velocity=no_slip_walls()),
                          force=buoyancy_source(Replay(), ri),
                          state=FlowState.from_rest(space))
    for n in range(6):
        st = stepper.advance()
        assert np.array_equal(st.velocity[0], coupled_u[n])


# ---------------------------------------------------------------------------
# interface traces
# ---------------------------------------------------------------------------

def test_trace_values_on_offset_rectangle():
    # retained domain sits above y = 0.4; its bottom edge faces (0, -1)
    space = FunctionSpace(structured_rectangle(5, 3, y0=0.4), 3)
    stub = linear_T_surrogate()
    tr = extract_interface(stub, space, "bottom", "dirichlet")
    assert np.allclose(tr.values["bottom"]["T"], 0.4, atol=1e-14)
    assert np.allclose(tr.normals["bottom"], [0.0, -1.0], atol=0)

    tr = extract_interface(stub, space, "bottom", "neumann")
    assert np.allclose(tr.data("T")["bottom"], -1.0, atol=1e-14)


def test_trace_on_cutout_hole_follows_normals():
    space = FunctionSpace(cutout_square(5), 4)
    tr = extract_interface(linear_T_surrogate(), space, "hole", "neumann")
    pts, nrm = tr.points["hole"], tr.normals["hole"]
    dn = tr.data("T")["hole"]
    bottom = np.isclose(pts[..., 1], 0.4) & np.isclose(nrm[..., 1], 1.0)
    top = np.isclose(pts[..., 1], 0.6) & np.isclose(nrm[..., 1], -1.0)
    sides = np.isclose(np.abs(nrm[..., 0]), 1.0)
    assert bottom.any() and top.any() and sides.any()
    assert np.allclose(dn[bottom], 1.0, atol=1e-13)
    assert np.allclose(dn[top], -1.0, atol=1e-13)
    assert np.allclose(dn[sides], 0.0, atol=1e-13)
    assert np.allclose(np.hypot(nrm[..., 0], nrm[..., 1]), 1.0, atol=1e-15)


def test_robin_zero_equals_neumann_bitwise():
    space = FunctionSpace(cutout_square(5), 3)
    model = MlpModel((2, 5, 1))
    h = SurrogateHandle(model, model.init(12), ("T",), UNIT)
    neu = extract_interface(h, space, "hole", "neumann")
    rob = extract_interface(h, space, "hole", "robin", R=0.0)
    assert np.array_equal(neu.data("T")["hole"], rob.data("T")["hole"])
    with pytest.raises(ValueError, match=">= 0"):
        extract_interface(h, space, "hole", "robin", R=-1.0)
    with pytest.raises(ValueError, match="must be one of"):
        extract_interface(h, space, "hole", "slip")
    with pytest.raises(ValueError, match="does not provide"):
        extract_interface(h, space, "hole", "dirichlet", variables=("u",))


def test_extract_interface_is_deterministic():
    space = FunctionSpace(cutout_square(5), 3)
    model = MlpModel((2, 6, 3))
    h = SurrogateHandle(model, model.init(13), ("u", "v", "p"), UNIT)
    a = extract_interface(h, space, "hole", "robin",
                          R=3.0, variables=("u", "v"))
    b = extract_interface(h, space, "hole", "robin",
                          R=3.0, variables=("u", "v"))
    for var in ("u", "v"):
        assert np.array_equal(a.values["hole"][var], b.values["hole"][var])
        assert np.array_equal(a.normal_derivs["hole"][var],
                              b.normal_derivs["hole"][var])


def exp_surrogate():
    e = lambda x, y: np.exp(x + y)
    return ClosedFormSurrogate({"T": e}, {"T": lambda x, y: (e(x, y), e(x, y))},
                               ("T",))


def test_robin_solve_approaches_dirichlet_as_R_grows():
    space = FunctionSpace(structured_rectangle(3, 3), 4)
    stub = exp_surrogate()
    f = lambda x, y: -2.0 * np.exp(x + y)
    fixed = [BoundaryCondition(lab, BCKind.DIRICHLET,
                               lambda x, y: np.exp(x + y))
             for lab in ("bottom", "top", "left")]

    u_dir = solve(HelmholtzSystem(space, 0.0), f,
                  fixed + [BoundaryCondition("right", BCKind.DIRICHLET,
                                             lambda x, y: np.exp(x + y))],
                  tol=1e-12)
    errs = []
    for R in (1.0, 10.0, 100.0, 1000.0):
        tr = extract_interface(stub, space, "right", "robin", R=R)
        sys_R = HelmholtzSystem(space, 0.0, robin=[("right", R)])
        u_R = solve(sys_R, f, fixed + tr.boundary_conditions("T"), tol=1e-12)
        errs.append(float(np.max(np.abs(u_R.values - u_dir.values))))
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-4

    # R = 0 falls back to the Neumann path bitwise
    tr0 = extract_interface(stub, space, "right", "robin", R=0.0)
    u_r0 = solve(HelmholtzSystem(space, 0.0, robin=[("right", 0.0)]), f,
                 fixed + tr0.boundary_conditions("T"))
    trn = extract_interface(stub, space, "right", "neumann")
    u_n = solve(HelmholtzSystem(space, 0.0), f,
                fixed + trn.boundary_conditions("T"))
    assert np.array_equal(u_r0.values, u_n.values)


def test_cutout_conduction_matches_full_domain_profile():
    space = FunctionSpace(cutout_square(5), 4)
    stub = ClosedFormSurrogate({"T": lambda x, y: 0.5 - y},
                               {"T": lambda x, y: (np.zeros_like(x),
                                                   -np.ones_like(x))}, ("T",))
    tr = extract_interface(stub, space, "hole", "dirichlet")
    bcs = [BoundaryCondition("bottom", BCKind.DIRICHLET, 0.5),
           BoundaryCondition("top", BCKind.DIRICHLET, -0.5),
           BoundaryCondition("left", BCKind.NEUMANN, 0.0),
           BoundaryCondition("right", BCKind.NEUMANN, 0.0)]
    T = solve(HelmholtzSystem(space, 0.0), lambda x, y: np.zeros_like(x),
              bcs + tr.boundary_conditions("T"))
    want = 0.5 - space.node_coords[:, 1]
    assert np.max(np.abs(T.values[:, 0] - want)) < 1e-8


def test_cutout_bcset_assembly():
    space = FunctionSpace(cutout_square(5), 3)
    model = MlpModel((2, 6, 4))
    h = SurrogateHandle(model, model.init(14), ("u", "v", "p", "T"), UNIT)
    tr = extract_interface(h, space, "hole", "dirichlet")
    outer = BCSet(velocity=no_slip_walls(),
                  temperature=[BoundaryCondition("bottom", BCKind.DIRICHLET,
                                                 0.5)])
    bcs = cutout_bcset(tr, outer)
    assert len(bcs.velocity) == 5 and bcs.velocity[-1].composite == "hole"
    assert bcs.velocity[-1].kind is BCKind.DIRICHLET
    assert np.array_equal(bcs.velocity[-1].value[0], tr.values["hole"]["u"])
    assert bcs.temperature[-1].composite == "hole"
    assert bcs.pressure[-1].kind is BCKind.DIRICHLET
    assert np.array_equal(bcs.pressure[-1].value, tr.values["hole"]["p"])
    assert len(outer.velocity) == 4  # input untouched

    rob = extract_interface(h, space, "hole", "robin", R=1.0)
    with pytest.raises(ValueError, match="temperature only"):
        cutout_bcset(rob)
    t_only = extract_interface(h, space, "hole", "robin", R=1.0,
                               variables=("T",))
    bcs2 = cutout_bcset(t_only)
    assert bcs2.temperature[0].kind is BCKind.ROBIN
    assert bcs2.temperature[0].robin_coefficient == 1.0
    u_only = extract_interface(h, space, "hole", "dirichlet",
                               variables=("u",))
    with pytest.raises(ValueError, match="both u and v"):
        cutout_bcset(u_only)


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind,R", [("dirichlet", 0.0), ("neumann", 0.0),
                                    ("robin", 2.5)])
def test_trace_csv_roundtrip_bitwise(tmp_path, kind, R):
    space = FunctionSpace(cutout_square(5), 4)
    model = MlpModel((2, 5, 1))
    h = SurrogateHandle(model, model.init(15), ("T",), UNIT)
    tr = extract_interface(h, space, "hole", kind, R=R)
    path = tmp_path / "trace.csv"
    save_trace(tr, path)
    back = trace_values_from_csv(path, space, "hole", "T")
    assert np.array_equal(back, tr.data("T")["hole"])


def test_trace_csv_is_arc_length_ordered(tmp_path):
    space = FunctionSpace(cutout_square(5), 3)
    h = linear_T_surrogate()
    tr = extract_interface(h, space, "hole", "dirichlet")
    path = tmp_path / "trace.csv"
    save_trace(tr, path)
    pts, _ = load_trace(path)["hole"]["T"]
    steps = np.hypot(*np.diff(pts, axis=0).T)
    assert np.all(steps >= 0.0)
    assert np.isclose(steps.sum(), 0.8, atol=1e-12)  # hole perimeter
    # consecutive rows never jump: spacing stays below one edge length
    assert steps.max() < 0.2


def test_trace_csv_errors(tmp_path):
    path = tmp_path / "bogus.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="not a trace file"):
        load_trace(path)

    space = FunctionSpace(cutout_square(5), 3)
    tr = extract_interface(linear_T_surrogate(), space, "hole", "dirichlet")
    good = tmp_path / "trace.csv"
    save_trace(tr, good)
    with pytest.raises(ValueError, match="no rows"):
        trace_values_from_csv(good, space, "hole", "u")
    other = FunctionSpace(cutout_square(5), 5)
    with pytest.raises(ValueError, match="rows"):
        trace_values_from_csv(good, other, "hole", "T")
