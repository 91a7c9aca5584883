import math

import numpy as np
import pytest

from neurosem.autodiff import jet_keys
from neurosem.networks import MlpModel, SeparableModel
from neurosem.pinn import (
    BoundaryPatch,
    GridData,
    LossSpec,
    Physics,
    PinnProblem,
    ScatteredData,
    TrainingDivergedError,
    build_loss,
    cavity_thermal_boundary,
    cavity_velocity_boundary,
    gradient_enhanced_residuals,
    init_adaptive,
    loss_and_grads,
    residual_continuity,
    residual_energy,
    residual_momentum,
    self_adaptive_step,
    train,
)

from oracles import fd_gradient, fd_partial


RA4 = Physics.from_rayleigh(1e4, pr=0.71)


class StubJetModel:
    """Closed-form jets for inserting exact fields into the residuals."""

    def __init__(self, coeff_fn, out_dim=1):
        self.coeff_fn = coeff_fn
        self.out_dim = out_dim
        self.n_params = 0

    def bind(self, tape, theta):
        return tape

    def jet(self, tape, X, order, mixed):
        X = np.asarray(X, dtype=float)
        coeffs = {}
        for key in jet_keys(X.shape[1], order, mixed):
            arr = self.coeff_fn(X, key)
            if arr is not None:
                coeffs[key] = np.asarray(arr, dtype=float)
        return tape.record(coeffs, meta=(X.shape[1], order, mixed))


def quadratic_T(X, key):
    x = X[:, 0]
    return {(): x * x, (0,): 2 * x, (0, 0): np.full_like(x, 2.0)}.get(key)


def cubic_T(X, key):
    x = X[:, 0]
    return {(): x**3, (0,): 3 * x * x, (0, 0): 6 * x,
            (0, 0, 0): np.full_like(x, 6.0)}.get(key)


def sine_T(X, key):
    x = X[:, 0]
    return {(): np.sin(x), (0,): np.cos(x), (0, 0): -np.sin(x),
            (0, 0, 0): -np.cos(x)}.get(key)


def potential_flow(X, key):
    """u = d(psi)/dy, v = -d(psi)/dx for harmonic psi = sin(x) sinh(y)."""
    x, y = X[:, 0], X[:, 1]
    u = np.sin(x) * np.cosh(y)
    v = -np.cos(x) * np.sinh(y)
    ux, uy = np.cos(x) * np.cosh(y), np.sin(x) * np.sinh(y)
    vx, vy = np.sin(x) * np.sinh(y), -np.cos(x) * np.cosh(y)
    p = -0.5 * (u * u + v * v)
    table = {
        (): (u, v, p),
        (0,): (ux, vx, -(u * ux + v * vx)),
        (1,): (uy, vy, -(u * uy + v * vy)),
        (0, 0): (-u, -v, np.zeros_like(x)),  # p second derivs unused
        (1, 1): (u, v, np.zeros_like(x)),
    }
    cols = table.get(key)
    return None if cols is None else np.column_stack(cols)


def taylor_green(X, key):
    x, y = X[:, 0], X[:, 1]
    u = np.sin(x) * np.cos(y)
    v = -np.cos(x) * np.sin(y)
    table = {
        (): (u, v, 0.25 * (np.cos(2 * x) + np.cos(2 * y))),
        (0,): (np.cos(x) * np.cos(y), np.sin(x) * np.sin(y),
               -0.5 * np.sin(2 * x)),
        (1,): (-np.sin(x) * np.sin(y), -np.cos(x) * np.cos(y),
               -0.5 * np.sin(2 * y)),
        (0, 0): (-u, -v, np.zeros_like(x)),
        (1, 1): (-u, -v, np.zeros_like(x)),
    }
    cols = table.get(key)
    return None if cols is None else np.column_stack(cols)


def linear_flow_model(wu, wv, wp):
    """Single affine layer producing u, v, p as fixed linear fields."""
    model = MlpModel((2, 3))
    theta = np.zeros(model.n_params)
    W, b = model.unpack(theta)[0]
    W[:, 0], W[:, 1], W[:, 2] = wu[:2], wv[:2], wp[:2]
    b[:] = [wu[2], wv[2], wp[2]]
    return model, theta


# ---------------------------------------------------------------------------
# residual operators
# ---------------------------------------------------------------------------

def test_continuity_trivial_fields():
    pts = np.random.default_rng(0).uniform(0, 1, (5, 2))
    model, theta = linear_flow_model((0, 1, 0), (1, 0, 0), (0, 0, 0))  # u=y, v=x
    assert np.allclose(residual_continuity(model, theta, pts), 0.0, atol=1e-15)
    model, theta = linear_flow_model((1, 0, 0), (0, 1, 0), (0, 0, 0))  # u=x, v=y
    assert np.allclose(residual_continuity(model, theta, pts), 2.0, atol=1e-14)


def test_continuity_matches_fd_divergence():
    model = MlpModel((2, 8, 3))
    theta = model.init(3)
    pts = np.random.default_rng(1).uniform(-0.5, 0.5, (4, 2))
    r = np.broadcast_to(residual_continuity(model, theta, pts), (4,))
    for n in range(4):
        div = (fd_partial(lambda q: model.forward(theta, q[None])[0, 0],
                          pts[n], (0,), h=1e-5)
               + fd_partial(lambda q: model.forward(theta, q[None])[0, 1],
                            pts[n], (1,), h=1e-5))
        assert abs(r[n] - div) < 1e-5 * max(1.0, abs(div))


def test_momentum_trivial_pressure_gradient():
    pts = np.random.default_rng(2).uniform(0, 1, (6, 2))
    model, theta = linear_flow_model((0, 0, 0), (0, 0, 0), (1, 0, 0))  # p = x
    r = residual_momentum(model, theta, pts, temperature=None, re=10.0, ri=0.0)
    assert np.allclose(r[:, 0], 1.0, atol=1e-14)
    assert np.allclose(r[:, 1], 0.0, atol=1e-14)

    r = residual_momentum(model, theta, pts, temperature=np.ones(6),
                          re=10.0, ri=1.0, k=(0, 1))
    assert np.allclose(r[:, 0], 1.0, atol=1e-14)
    assert np.allclose(r[:, 1], -1.0, atol=1e-14)


def test_momentum_manufactured_potential_flow():
    # irrotational + harmonic: convection balances the pressure gradient and
    # the viscous term vanishes, so the steady residual is identically zero
    pts = np.random.default_rng(3).uniform(-1, 1, (20, 2))
    stub = StubJetModel(potential_flow, out_dim=3)
    r = residual_momentum(stub, None, pts, temperature=None, re=1.0, ri=0.0)
    assert np.max(np.abs(r)) < 1e-6


def test_momentum_cellular_field_leaves_exact_viscous_defect():
    # the classic cellular vortex kills convection + pressure but is not
    # harmonic: the residual must be exactly the viscous part, (2/Re) u
    pts = np.random.default_rng(4).uniform(-1, 1, (20, 2))
    stub = StubJetModel(taylor_green, out_dim=3)
    re = 1.0
    r = residual_momentum(stub, None, pts, temperature=None, re=re, ri=0.0)
    x, y = pts[:, 0], pts[:, 1]
    u = np.sin(x) * np.cos(y)
    v = -np.cos(x) * np.sin(y)
    assert np.max(np.abs(r[:, 0] - (2.0 / re) * u)) < 1e-12
    assert np.max(np.abs(r[:, 1] - (2.0 / re) * v)) < 1e-12


def test_energy_trivial_fields():
    pts = np.random.default_rng(5).uniform(0, 1, (7, 2))
    vel = np.column_stack([np.ones(7), np.zeros(7)])

    model = MlpModel((2, 1))  # T = x
    theta = np.array([1.0, 0.0, 0.0])
    r = residual_energy(model, theta, pts, velocity=vel, pe=3.7)
    assert np.allclose(r, 1.0, atol=1e-14)

    stub = StubJetModel(quadratic_T)
    r = residual_energy(stub, None, pts, velocity=np.zeros((7, 2)), pe=2.0)
    assert np.allclose(r, -1.0, atol=1e-14)

    stub = StubJetModel(sine_T)
    origin = np.zeros((1, 2))
    r = residual_energy(stub, None, origin,
                        velocity=np.array([[1.0, 0.0]]), pe=1.0)
    assert r[0] == pytest.approx(1.0, abs=1e-14)


def test_gradient_enhanced_trivial_fields():
    pts = np.random.default_rng(6).uniform(0, 1, (5, 2))
    vel = np.zeros((5, 2))
    g = gradient_enhanced_residuals(StubJetModel(quadratic_T), None, pts,
                                    velocity=vel, pe=1.0)
    assert np.allclose(g, 0.0, atol=1e-15)

    g = gradient_enhanced_residuals(StubJetModel(cubic_T), None, pts,
                                    velocity=vel, pe=1.0)
    assert np.allclose(g[:, 0], -6.0, atol=1e-13)
    assert np.allclose(g[:, 1], 0.0, atol=1e-15)


# ---------------------------------------------------------------------------
# loss construction
# ---------------------------------------------------------------------------

def scenario_a_problem(n=6, seed=0, n_side=3, **spec_kw):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.05, 0.95, (n, 2))
    data = ScatteredData(pts, {"u": rng.standard_normal(n) * 0.1,
                               "v": rng.standard_normal(n) * 0.1})
    model = MlpModel((2, 5, 1))
    spec = LossSpec("A", **spec_kw)
    problem = PinnProblem(spec, {"T": model}, RA4, {"u": data},
                          boundary=cavity_thermal_boundary(n_side))
    return problem, {"T": model.init(seed + 1)}


def test_exact_zero_loss_and_nonnegativity():
    problem, thetas = scenario_a_problem()
    zero = {"T": np.zeros_like(thetas["T"])}
    # zero net, zero data, homogeneous walls -> every term identically zero
    problem.data["u"].values["u"][:] = 0.0
    problem.data["u"].values["v"][:] = 0.0
    problem.boundary = cavity_thermal_boundary(3, hot=0.0, cold=0.0)
    bundle = build_loss(problem, zero)
    assert bundle.loss.value == 0.0
    assert all(v == 0.0 for v in bundle.parts.values())

    bundle = build_loss(problem, thetas)  # random net: strictly positive
    assert bundle.loss.value > 0.0


def test_single_data_point_misfit_value():
    model = MlpModel((2, 4, 1))
    spec = LossSpec("C")
    udata = ScatteredData([[0.3, 0.4]], {"u": [0.0], "v": [0.0]})
    tdata = ScatteredData([[0.6, 0.7]], {"T": [0.1]})
    phys = Physics(re=1.0, ri=1.0, pe=math.inf)
    problem = PinnProblem(spec, {"T": model}, phys, {"u": udata, "T": tdata})
    bundle = build_loss(problem, {"T": np.zeros(model.n_params)})
    assert bundle.loss.value == pytest.approx(0.01, abs=1e-16)
    assert bundle.parts["misfit_T"] == pytest.approx(0.01, abs=1e-16)
    assert bundle.parts["residual"] == 0.0


def test_loss_parts_match_standalone_residuals():
    problem, thetas = scenario_a_problem(n=9, seed=7)
    bundle = build_loss(problem, thetas)
    data = problem.data["u"]
    vel = np.column_stack([data.values["u"], data.values["v"]])
    r = residual_energy(problem.models["T"], thetas["T"], data.points,
                        velocity=vel, pe=RA4.pe)
    assert bundle.parts["residual"] == pytest.approx(np.mean(r**2), rel=1e-15)


def _fd_check(problem, thetas, tol=1e-4):
    names = sorted(thetas)
    sizes = {k: thetas[k].size for k in names}

    def loss_of(flat):
        ths, ofs = {}, 0
        for k in names:
            ths[k] = flat[ofs: ofs + sizes[k]]
            ofs += sizes[k]
        return float(build_loss(problem, ths).loss.value)

    loss, grads, _, _ = loss_and_grads(problem, thetas)
    flat = np.concatenate([thetas[k] for k in names])
    g = np.concatenate([grads[k] for k in names])
    g_fd = fd_gradient(loss_of, flat, h=1e-6)
    ref = max(1.0, float(np.max(np.abs(g_fd))))
    assert np.max(np.abs(g - g_fd)) < tol * ref
    return loss


def test_scenario_a_gradient_matches_fd():
    problem, thetas = scenario_a_problem(n=6, seed=11)
    _fd_check(problem, thetas)


def test_scenario_a_gradient_enhanced_gradient_matches_fd():
    problem, thetas = scenario_a_problem(
        n=6, seed=13, gradient_enhanced=True, n_gradient=4,
        weights={"w_g": 1e-2})
    bundle = build_loss(problem, thetas)
    assert "gradient_x" in bundle.parts and "gradient_y" in bundle.parts
    _fd_check(problem, thetas)


def test_scenario_b_gradient_matches_fd():
    rng = np.random.default_rng(17)
    data = ScatteredData(rng.uniform(0.1, 0.9, (5, 2)),
                         {"T": rng.standard_normal(5) * 0.2})
    model = MlpModel((2, 5, 3))
    problem = PinnProblem(LossSpec("B"), {"flow": model}, RA4, {"T": data},
                          boundary=cavity_velocity_boundary(2))
    _fd_check(problem, {"flow": model.init(18)})


def test_scenario_c_gradient_matches_fd():
    rng = np.random.default_rng(19)
    udata = ScatteredData(rng.uniform(0.1, 0.9, (6, 2)),
                          {"u": rng.standard_normal(6) * 0.1,
                           "v": rng.standard_normal(6) * 0.1})
    tdata = ScatteredData(rng.uniform(0.1, 0.9, (4, 2)),
                          {"T": rng.standard_normal(4) * 0.2})
    model = MlpModel((2, 5, 1))
    problem = PinnProblem(
        LossSpec("C"), {"T": model}, RA4, {"u": udata, "T": tdata},
        boundary=cavity_thermal_boundary(3, dirichlet=False))
    _fd_check(problem, {"T": model.init(20)})


def scenario_d_problem(seed=21):
    rng = np.random.default_rng(seed)
    udata = ScatteredData(rng.uniform(0.4, 0.6, (5, 2)),
                          {"u": rng.standard_normal(5) * 0.1,
                           "v": rng.standard_normal(5) * 0.1},
                          domain=((0.4, 0.6), (0.4, 0.6)))
    tdata = ScatteredData(rng.uniform(0.4, 0.6, (4, 2)),
                          {"T": rng.standard_normal(4) * 0.2},
                          domain=((0.4, 0.6), (0.4, 0.6)))
    res = rng.uniform(0.4, 0.6, (7, 2))
    flow, tnet = MlpModel((2, 5, 3)), MlpModel((2, 4, 1))
    problem = PinnProblem(LossSpec("D"), {"flow": flow, "T": tnet}, RA4,
                          {"u": udata, "T": tdata}, residual_points=res)
    return problem, {"flow": flow.init(seed + 1), "T": tnet.init(seed + 2)}


def test_scenario_d_gradient_matches_fd():
    problem, thetas = scenario_d_problem()
    _fd_check(problem, thetas)


def test_scenario_d_residual_point_permutation_invariance():
    problem, thetas = scenario_d_problem(seed=23)
    l1 = build_loss(problem, thetas).loss.value
    perm = np.random.default_rng(0).permutation(len(problem.residual_points))
    problem.residual_points = problem.residual_points[perm]
    l2 = build_loss(problem, thetas).loss.value
    assert l2 == pytest.approx(l1, rel=1e-13)


def unsteady_problem(seed=29):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0.1, 0.9, (8, 2)),
                           rng.uniform(0, 1, 8)])
    data = ScatteredData(pts, {"u": rng.standard_normal(8) * 0.1,
                               "v": rng.standard_normal(8) * 0.1})
    s = np.linspace(0.2, 0.8, 3)
    t = np.array([0.0, 0.5, 1.0])
    S, Tt = np.meshgrid(s, t, indexing="ij")
    bottom = np.column_stack([S.ravel(), np.zeros(S.size), Tt.ravel()])
    left = np.column_stack([np.zeros(S.size), S.ravel(), Tt.ravel()])
    patches = [
        BoundaryPatch("bottom", "dirichlet", "T", bottom, 0.5),
        BoundaryPatch("left", "neumann", "T", left, 0.0, normal=(-1.0, 0.0)),
    ]
    pts0 = np.column_stack([rng.uniform(0, 1, (5, 2)), np.zeros(5)])
    initial = (pts0, 0.5 - pts0[:, 1])
    model = MlpModel((3, 5, 1))
    problem = PinnProblem(LossSpec("unsteady"), {"T": model},
                          Physics(re=100.0, ri=1.0, pe=71.0), {"u": data},
                          boundary=patches, initial=initial)
    return problem, {"T": model.init(seed + 1)}


def test_unsteady_gradient_matches_fd():
    problem, thetas = unsteady_problem()
    bundle = build_loss(problem, thetas)
    assert "initial" in bundle.parts
    _fd_check(problem, thetas)


def test_unsteady_residual_includes_time_derivative():
    # T = t stub (3-input linear layer): residual = dT/dt = 1 with u = 0
    model = MlpModel((3, 1))
    theta = np.array([0.0, 0.0, 1.0, 0.0])
    pts = np.random.default_rng(31).uniform(0, 1, (4, 3))
    r = residual_energy(model, theta, pts, velocity=np.zeros((4, 2)),
                        pe=71.0, unsteady=True)
    assert np.allclose(r, 1.0, atol=1e-14)


def test_weight_scaling_scales_loss_and_keeps_update_signs():
    problem, thetas = scenario_a_problem(n=6, seed=37)
    l1, g1, _, _ = loss_and_grads(problem, thetas)
    scaled = LossSpec("A", weights={"w_u": 2.0, "w_b": 2.0})
    problem2 = PinnProblem(scaled, problem.models, RA4, problem.data,
                           boundary=problem.boundary)
    l2, g2, _, _ = loss_and_grads(problem2, thetas)
    assert l2 == 2.0 * l1
    assert np.array_equal(np.sign(g2["T"]), np.sign(g1["T"]))


# ---------------------------------------------------------------------------
# separable path
# ---------------------------------------------------------------------------

def separable_problem(seed=41, gradient_enhanced=False):
    rng = np.random.default_rng(seed)
    xs = np.linspace(0.1, 0.9, 4)
    ys = np.linspace(0.1, 0.9, 3)
    data = GridData(xs, ys, {"u": rng.standard_normal((4, 3)) * 0.1,
                             "v": rng.standard_normal((4, 3)) * 0.1})
    model = SeparableModel(rank=2, hidden=(4,))
    kw = {}
    if gradient_enhanced:
        kw = {"gradient_enhanced": True, "weights": {"w_g": 1e-2}}
    problem = PinnProblem(LossSpec("A", **kw), {"T": model}, RA4, {"u": data},
                          boundary=cavity_thermal_boundary(3, grid=True))
    return problem, {"T": model.init(seed + 1)}


def test_separable_scenario_a_gradient_matches_fd():
    problem, thetas = separable_problem()
    _fd_check(problem, thetas)


def test_separable_gradient_enhanced_builds_and_matches_fd():
    problem, thetas = separable_problem(seed=43, gradient_enhanced=True)
    bundle = build_loss(problem, thetas)
    assert bundle.parts["gradient_x"] >= 0.0
    _fd_check(problem, thetas)


# ---------------------------------------------------------------------------
# self-adaptive weights
# ---------------------------------------------------------------------------

def test_init_adaptive_ranges_and_gradient_scaling():
    problem, thetas = scenario_a_problem(
        n=6, seed=47, self_adaptive=True, gradient_enhanced=True,
        n_gradient=4, weights={"w_g": 1e-4})
    init_adaptive(problem, thetas, seed=5)
    for name, lam in problem.adaptive.items():
        if name.startswith("gradient"):
            assert np.all(lam <= 1e-4) and np.all(lam >= 0.01 * 1e-4)
        else:
            assert np.all(lam >= 0.01) and np.all(lam <= 1.0)


def test_self_adaptive_ascent_never_decreases_active_points():
    problem, thetas = scenario_a_problem(n=6, seed=53, self_adaptive=True)
    init_adaptive(problem, thetas, seed=6)
    before = {k: v.copy() for k, v in problem.adaptive.items()}
    _, _, lam_grads, _ = loss_and_grads(problem, thetas)
    after = self_adaptive_step(problem.adaptive, lam_grads, rate=1e-3)
    for name in before:
        assert np.all(after[name] >= before[name])
        assert np.any(after[name] > before[name])
    unchanged = self_adaptive_step(problem.adaptive, lam_grads, rate=0.0)
    for name in before:
        assert np.array_equal(unchanged[name], before[name])


def test_zero_residual_point_leaves_lambda_unchanged():
    problem, thetas = scenario_a_problem(n=4, seed=59, self_adaptive=True)
    zero = {"T": np.zeros_like(thetas["T"])}
    problem.data["u"].values["u"][:] = 0.0
    problem.data["u"].values["v"][:] = 0.0
    problem.boundary = cavity_thermal_boundary(3, hot=0.0, cold=0.0)
    init_adaptive(problem, zero, seed=7)
    before = {k: v.copy() for k, v in problem.adaptive.items()}
    _, _, lam_grads, _ = loss_and_grads(problem, zero)
    after = self_adaptive_step(problem.adaptive, lam_grads, rate=1e-3)
    for name in before:
        assert np.array_equal(after[name], before[name])


def test_adaptive_gradient_matches_fd_with_frozen_lambdas():
    problem, thetas = scenario_a_problem(n=5, seed=61, self_adaptive=True)
    init_adaptive(problem, thetas, seed=8)
    _fd_check(problem, thetas)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def regression_problem(n=100, seed=67):
    """Pure data fit dressed as a loss: zero advection and 1/Pe = 0 switch
    the PDE residual off, leaving only the T misfit."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1, (n, 2))
    udata = ScatteredData(pts, {"u": np.zeros(n), "v": np.zeros(n)})
    tdata = ScatteredData(pts, {"T": pts[:, 0]})
    model = MlpModel((2, 12, 1))
    problem = PinnProblem(LossSpec("C"), {"T": model},
                          Physics(re=1.0, ri=0.0, pe=math.inf),
                          {"u": udata, "T": tdata})
    return problem, {"T": model.init(seed)}


def test_train_fits_linear_temperature():
    problem, thetas = regression_problem()
    result = train(problem, thetas, iterations=5000,
                   schedule=((2500, 1e-2), (None, 1e-3)))
    model = problem.models["T"]
    g = np.linspace(0.05, 0.95, 11)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pred = model.forward(result.thetas["T"], pts)[:, 0]
    assert np.max(np.abs(pred - pts[:, 0])) < 1e-2
    assert result.history[-1][1] < result.history[0][1]
    assert result.manifest["final_loss"] < 1e-5


def test_train_zero_iterations_is_identity():
    problem, thetas = regression_problem(n=10)
    result = train(problem, thetas, iterations=0)
    assert np.array_equal(result.thetas["T"], thetas["T"])
    assert result.history == []
    assert math.isfinite(result.manifest["final_loss"])


def test_train_is_bitwise_deterministic():
    runs = []
    for _ in range(2):
        problem, thetas = scenario_a_problem(n=6, seed=71)
        res = train(problem, thetas, iterations=50,
                    schedule=((None, 1e-3),), log_every=10)
        runs.append(res)
    assert np.array_equal(runs[0].thetas["T"], runs[1].thetas["T"])
    assert runs[0].history == runs[1].history


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning",
                            "ignore:invalid value:RuntimeWarning")
def test_train_aborts_on_nonfinite_loss():
    rng = np.random.default_rng(73)
    data = ScatteredData(rng.uniform(0.1, 0.9, (5, 2)),
                         {"T": rng.standard_normal(5)})
    model = MlpModel((2, 5, 3))
    problem = PinnProblem(LossSpec("B"), {"flow": model}, RA4, {"T": data})
    with pytest.raises(TrainingDivergedError) as err:
        train(problem, {"flow": model.init(74)}, iterations=10,
              schedule=((None, 1e160),))
    assert err.value.snapshot["iteration"] >= 2
    assert "parts" in err.value.snapshot


def test_train_self_adaptive_runs_and_logs():
    problem, thetas = scenario_a_problem(n=5, seed=79, self_adaptive=True)
    result = train(problem, thetas, iterations=20, schedule=((None, 1e-3),),
                   seed=9, log_every=5)
    assert result.adaptive is not None
    assert all(math.isfinite(l) for _, l in result.history)
    assert result.manifest["self_adaptive"] is True


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def test_loss_spec_validation():
    with pytest.raises(ValueError, match="unknown scenario"):
        LossSpec("E")
    with pytest.raises(ValueError, match="not part of the"):
        LossSpec("A", weights={"w_i": 1.0})
    with pytest.raises(ValueError, match="w_g set but"):
        LossSpec("A", weights={"w_g": 1e-4})
    with pytest.raises(ValueError, match="scenario-A"):
        LossSpec("B", gradient_enhanced=True)
    with pytest.raises(ValueError, match="explicit w_g"):
        LossSpec("A", gradient_enhanced=True)
    with pytest.raises(ValueError, match="positive"):
        LossSpec("A", weights={"w_u": 0.0})
    spec = LossSpec("A")
    assert spec.weights == {"w_u": 1.0, "w_b": 1.0}


def test_problem_validation():
    model = MlpModel((2, 4, 1))
    flow = MlpModel((2, 4, 3))
    data = ScatteredData([[0.5, 0.5]], {"u": [0.0], "v": [0.0]})
    with pytest.raises(ValueError, match="uses models"):
        PinnProblem(LossSpec("A"), {"flow": flow}, RA4, {"u": data})
    with pytest.raises(ValueError, match="needs data"):
        PinnProblem(LossSpec("A"), {"T": model}, RA4, {})
    with pytest.raises(ValueError, match="output a scalar"):
        PinnProblem(LossSpec("A"), {"T": flow}, RA4, {"u": data})
    with pytest.raises(ValueError, match="residual points"):
        tdata = ScatteredData([[0.5, 0.5]], {"T": [0.0]})
        PinnProblem(LossSpec("D"), {"flow": flow, "T": model}, RA4,
                    {"u": data, "T": tdata})
    with pytest.raises(ValueError, match="x, y, t"):
        PinnProblem(LossSpec("unsteady"), {"T": model}, RA4, {"u": data})


def test_scattered_data_validation():
    with pytest.raises(ValueError, match="values have shape"):
        ScatteredData([[0, 0], [1, 1]], {"u": [1.0]})
    with pytest.raises(ValueError, match="leave the declared domain"):
        ScatteredData([[0.2, 0.8]], {"u": [0.0]},
                      domain=((0.4, 0.6), (0.4, 0.6)))
    with pytest.raises(ValueError, match="grid values"):
        GridData([0, 1], [0, 0.5, 1], {"u": np.zeros((3, 2))})


def test_cavity_presets():
    patches = cavity_thermal_boundary(4)
    names = {p.name: p for p in patches}
    assert names["bottom"].values == 0.5 and names["top"].values == -0.5
    assert np.all(names["bottom"].points[:, 1] == 0.0)
    assert 0.0 not in names["bottom"].points[:, 0]  # corners excluded
    assert names["left"].normal == (-1.0, 0.0)
    assert len(cavity_velocity_boundary(4)) == 8
    nodir = cavity_thermal_boundary(4, dirichlet=False)
    assert {p.kind for p in nodir} == {"neumann"}


def test_physics_from_rayleigh():
    phys = Physics.from_rayleigh(1e4, pr=0.71)
    assert phys.re == pytest.approx(math.sqrt(1e4 / 0.71), rel=1e-15)
    assert phys.pe == pytest.approx(math.sqrt(1e4 * 0.71), rel=1e-15)
    assert phys.inv_pe == pytest.approx(0.011867816581938534, rel=1e-12)
    assert Physics(re=1.0, ri=0.0, pe=math.inf).inv_pe == 0.0
