import json
import math

import numpy as np
import pytest

from neurosem.autodiff import Tape, grad, jet_coeff, mean, square, add
from neurosem.networks import (
    AdamState,
    MlpModel,
    SeparableModel,
    adam_step,
    load_model,
    save_model,
    scheduled_rate,
)

from oracles import fd_gradient, fd_partial, fd_partial_richardson


# ---------------------------------------------------------------------------
# dense model
# ---------------------------------------------------------------------------

def test_parameter_count():
    model = MlpModel((2, 100, 100, 100, 100, 1))
    assert model.n_params == sum(
        (a + 1) * b for a, b in zip(model.widths[:-1], model.widths[1:]))
    assert model.n_params == 30701


def test_init_is_deterministic_with_zero_biases():
    model = MlpModel((2, 9, 4))
    t1, t2 = model.init(7), model.init(7)
    assert np.array_equal(t1, t2)
    assert not np.array_equal(t1, model.init(8))
    for _, b in model.unpack(t1):
        assert np.array_equal(b, np.zeros_like(b))
    for W, _ in model.unpack(t1):
        assert np.max(np.abs(W)) > 0


def test_warm_start_copies_donor_bitwise():
    model = MlpModel((2, 5, 1))
    donor = np.random.default_rng(0).standard_normal(model.n_params)
    theta = model.init(3, donor=donor)
    assert np.array_equal(theta, donor)
    theta[0] += 1.0
    assert theta[0] != donor[0]  # a copy, not a view
    with pytest.raises(ValueError, match="donor"):
        model.init(3, donor=donor[:-1])


def test_zero_parameters_give_zero_output():
    model = MlpModel((3, 6, 2))
    X = np.random.default_rng(1).standard_normal((4, 3))
    assert np.array_equal(model.forward(np.zeros(model.n_params), X),
                          np.zeros((4, 2)))


def test_single_hidden_neuron_hand_value():
    model = MlpModel((1, 1, 1))
    theta = np.array([2.0, 0.0, 3.0, 1.0])  # w1, b1, w2, b2
    out = model.forward(theta, np.array([[0.5]]))
    assert out[0, 0] == pytest.approx(3.0 * math.tanh(1.0) + 1.0, abs=1e-12)
    assert out[0, 0] == pytest.approx(3.28478, abs=1e-5)


def test_unpack_rejects_wrong_length():
    model = MlpModel((2, 3, 1))
    with pytest.raises(ValueError, match="parameter vector"):
        model.forward(np.zeros(model.n_params + 1), np.zeros((1, 2)))


def test_model_jet_matches_plain_forward_and_fd():
    model = MlpModel((3, 7, 5, 2))
    theta = model.init(11)
    X = np.random.default_rng(2).uniform(-0.6, 0.6, size=(4, 3))
    tape = Tape()
    u = model.jet(model.bind(tape, theta), X, order=2, mixed=False)
    assert np.allclose(u.value[()], model.forward(theta, X), atol=1e-14)
    for key in [(0,), (2,), (0, 0), (2, 2)]:
        coeff = u.value[key]
        for n in range(X.shape[0]):
            for c in range(2):
                fd = fd_partial(lambda q: model.forward(theta, q[None, :])[0, c],
                                X[n], key, h=1e-4)
                assert abs(coeff[n, c] - fd) < 1e-5 * max(1.0, abs(fd))


# ---------------------------------------------------------------------------
# separable model
# ---------------------------------------------------------------------------

def constant_separable(cf, cg):
    model = SeparableModel(rank=1, hidden=(2,))
    theta = np.zeros(model.n_params)
    for sub, c in zip(model.split(theta), (cf, cg)):
        model.subnet.unpack(sub)[-1][1][:] = c  # output bias only
    return model, theta


def test_separable_constant_subnets():
    model, theta = constant_separable(2.0, 3.0)
    X = np.random.default_rng(3).uniform(0, 1, size=(6, 2))
    assert np.allclose(model.forward(theta, X), 6.0, atol=1e-15)
    assert np.allclose(model.grid_forward(theta, X[:, 0], X[:, 1]), 6.0,
                       atol=1e-15)


def test_grid_matches_pointwise():
    model = SeparableModel(rank=4, hidden=(6, 6))
    theta = model.init(5)
    xs = np.linspace(0, 1, 7)
    ys = np.linspace(0, 1, 5)
    grid = model.grid_forward(theta, xs, ys)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    assert np.max(np.abs(grid.ravel() - model.forward(theta, pts))) < 1e-12


def test_grid_uses_one_forward_per_axis(monkeypatch):
    model = SeparableModel(rank=3, hidden=(4,))
    theta = model.init(9)
    batches = []
    plain = MlpModel.forward

    def spy(self, th, X):
        batches.append(X.shape[0])
        return plain(self, th, X)

    monkeypatch.setattr(MlpModel, "forward", spy)
    model.grid_forward(theta, np.linspace(0, 1, 13), np.linspace(0, 1, 8))
    assert sorted(batches) == [8, 13]


def test_separable_grid_jet_matches_fd():
    model = SeparableModel(rank=3, hidden=(5,))
    theta = model.init(17)
    xs = np.linspace(0.1, 0.9, 4)
    ys = np.linspace(0.2, 0.8, 3)
    tape = Tape()
    u = model.jet_grid(model.bind(tape, theta), xs, ys, order=3)
    assert np.allclose(u.value[()], model.grid_forward(theta, xs, ys),
                       atol=1e-14)

    def scalar(q):
        return model.forward(theta, q[None, :])[0]

    second = [(0,), (1,), (0, 0), (0, 1), (1, 1)]
    third = [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)]
    for key in second + third:
        coeff = u.value[key]
        for i in range(len(xs)):
            for j in range(len(ys)):
                q = np.array([xs[i], ys[j]])
                fd = (fd_partial_richardson(scalar, q, key, h=1e-3)
                      if len(key) == 3 else fd_partial(scalar, q, key, h=1e-4))
                tol = 1e-4 if len(key) == 3 else 1e-5
                assert abs(coeff[i, j] - fd) < tol * max(1.0, abs(fd)), key


def test_pointwise_jet_agrees_with_grid_diagonal():
    model = SeparableModel(rank=2, hidden=(4, 4))
    theta = model.init(23)
    xs = np.array([0.15, 0.5, 0.85])
    ys = np.array([0.3, 0.6, 0.9])
    tape = Tape()
    gridjet = model.jet_grid(model.bind(tape, theta), xs, ys, order=2)
    ptsjet = model.jet_points(model.bind(tape, theta),
                              np.column_stack([xs, ys]), order=2)
    for key, gv in gridjet.value.items():
        diag = np.diagonal(gv)
        pv = ptsjet.value[key]
        assert np.max(np.abs(diag - pv)) < 1e-13 * max(1.0, np.max(np.abs(diag)))


def test_separable_parameter_gradient_matches_fd():
    model = SeparableModel(rank=2, hidden=(4,))
    theta = model.init(29)
    xs = np.linspace(0.1, 0.9, 3)
    ys = np.linspace(0.2, 0.7, 3)

    def loss_value(th):
        tape = Tape()
        u = model.jet_grid(model.bind(tape, th), xs, ys, order=2)
        r = u.value[(0, 0)] + u.value[(1, 1)]
        return float(np.mean(r**2))

    tape = Tape()
    bound = model.bind(tape, theta)
    u = model.jet_grid(bound, xs, ys, order=2)
    loss = mean(square(add(jet_coeff(u, (0, 0)), jet_coeff(u, (1, 1)))))
    flat_nodes = [n for sub in bound for pair in sub for n in pair]
    g = np.concatenate([a.ravel() for a in grad(loss, flat_nodes)])
    g_fd = fd_gradient(loss_value, theta, h=1e-6)
    assert np.max(np.abs(g - g_fd)) < 1e-4 * max(1.0, np.max(np.abs(g_fd)))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_first_step_hand_value():
    state = AdamState.fresh(1, schedule=((None, 1e-3),))
    theta, state = adam_step(state, np.zeros(1), np.array([2.0]))
    expected = -1e-3 * 2.0 / (2.0 + 1e-8)  # bias corrections cancel at t=1
    assert theta[0] == pytest.approx(expected, rel=1e-12)
    assert theta[0] == pytest.approx(-1e-3, rel=1e-6)
    assert state.step == 1
    assert np.all(state.v >= 0)


def test_adam_zero_gradient_is_a_fixed_point():
    state = AdamState.fresh(3)
    theta0 = np.array([1.0, -2.0, 0.5])
    theta, state = adam_step(state, theta0, np.zeros(3))
    assert np.array_equal(theta, theta0)

    theta, state = adam_step(state, theta, np.array([1.0, -1.0, 2.0]))
    m1 = np.abs(state.m).copy()
    theta, state = adam_step(state, theta, np.zeros(3))
    assert np.all(np.abs(state.m) < m1)


def test_adam_update_opposes_gradient_sign():
    rng = np.random.default_rng(31)
    g = rng.standard_normal(40)
    g[::7] = 0.0
    state = AdamState.fresh(40)
    theta, _ = adam_step(state, np.zeros(40), g)
    nz = g != 0
    assert np.array_equal(np.sign(theta[nz]), -np.sign(g[nz]))
    assert np.array_equal(theta[~nz], np.zeros(np.sum(~nz)))


def test_schedule_boundary():
    sched = ((50000, 1e-3), (None, 1e-4))
    assert scheduled_rate(sched, 1) == 1e-3
    assert scheduled_rate(sched, 50000) == 1e-3
    assert scheduled_rate(sched, 50001) == 1e-4

    state = AdamState.fresh(1, schedule=((50000, 1e-3), (math.inf, 1e-4)))
    state.step = 49999
    assert state.rate == 1e-3
    state.step = 50000
    assert state.rate == 1e-4


def test_schedule_validation():
    with pytest.raises(ValueError, match="increase"):
        AdamState.fresh(1, schedule=((100, 1e-3), (50, 1e-4)))
    with pytest.raises(ValueError, match="exhausted"):
        scheduled_rate(((10, 1e-3),), 11)


def test_four_stage_schedule():
    sched = ((500000, 1e-3), (700000, 5e-4), (900000, 1e-4), (None, 1e-5))
    assert scheduled_rate(sched, 500001) == 5e-4
    assert scheduled_rate(sched, 700001) == 1e-4
    assert scheduled_rate(sched, 1000000) == 1e-5


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    model = MlpModel((2, 8, 3))
    theta = model.init(41)
    manifest = {"seed": 41, "schedule": [[50000, 1e-3], [None, 1e-4]],
                "loss_history": [1.0, 0.5, 0.25]}
    path = tmp_path / "model.json"
    save_model(path, model, theta, manifest)
    model2, theta2, manifest2 = load_model(path)
    assert model2 == model
    assert np.array_equal(theta2, theta)
    assert manifest2 == manifest


def test_save_load_separable(tmp_path):
    model = SeparableModel(rank=3, hidden=(6, 6))
    theta = model.init(43)
    path = tmp_path / "sep.json"
    save_model(path, model, theta)
    model2, theta2, manifest = load_model(path)
    assert model2 == model
    assert np.array_equal(theta2, theta)
    assert manifest == {}


def test_load_rejects_corrupt_documents(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(ValueError, match="not a model file"):
        load_model(path)

    model = MlpModel((2, 4, 1))
    save_model(path, model, model.init(0))
    doc = json.loads(path.read_text())
    doc["params"] = doc["params"][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="parameter count"):
        load_model(path)
