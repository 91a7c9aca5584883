"""Dense and separable tanh networks over the jet tape, plus Adam.

Parameters live in a single flat float64 vector so the optimizer, the
serializer and finite-difference checks all see one array.  Layout: for each
layer in order, the weight matrix (row-major, shape (fan_in, fan_out)) then
the bias.  ``unpack`` hands back reshaped views, so a forward pass never
copies parameters.

The separable model keeps one sub-network per coordinate and aggregates by
rank: out(x, y) = sum_k f_k(x) g_k(y).  On an N x M tensor grid this needs
only N + M sub-network evaluations; derivatives factor the same way
(d out/dx = sum_k f_k'(x) g_k(y)), which ``rank_combine_grid`` exploits for
jets of every order the tape supports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Node,
    Tape,
    affine_jet,
    input_affine_jet,
    jet_keys,
    tanh_jet,
)

__all__ = [
    "MlpModel", "SeparableModel", "AdamState", "adam_step", "scheduled_rate",
    "rank_combine", "rank_combine_grid", "save_model", "load_model",
]


@dataclass(frozen=True)
class MlpModel:
    """Fully connected tanh network; identity on the output layer."""

    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"bad layer widths {self.widths}")

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into the flat vector."""
        theta = np.asarray(theta)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector has {theta.shape}, model needs ({self.n_params},)")
        pairs, ofs = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            W = theta[ofs: ofs + a * b].reshape(a, b)
            ofs += a * b
            pairs.append((W, theta[ofs: ofs + b]))
            ofs += b
        return pairs

    def init(self, seed: int, donor: np.ndarray | None = None) -> np.ndarray:
        """Glorot-uniform weights, zero biases; or a bitwise donor copy."""
        if donor is not None:
            donor = np.asarray(donor, dtype=float)
            if donor.shape != (self.n_params,):
                raise ValueError(
                    f"warm-start donor has {donor.shape}, model needs ({self.n_params},)")
            return donor.copy()
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.n_params)
        for W, _ in self.unpack(theta):
            a, b = W.shape
            limit = math.sqrt(6.0 / (a + b))
            W[...] = rng.uniform(-limit, limit, size=(a, b))
        return theta

    def forward(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Plain evaluation, (N, in_dim) -> (N, out_dim)."""
        h = np.asarray(X, dtype=float)
        pairs = self.unpack(theta)
        for W, b in pairs[:-1]:
            h = np.tanh(h @ W + b)
        W, b = pairs[-1]
        return h @ W + b

    def bind(self, tape: Tape, theta: np.ndarray) -> list[tuple[Node, Node]]:
        """Record every (W, b) as parameter nodes on the tape."""
        return [(tape.parameter(W), tape.parameter(b))
                for W, b in self.unpack(theta)]

    def jet(self, bound, X: np.ndarray, order: int = 0,
            mixed: bool = True) -> Node:
        """Taped forward carrying input derivatives up to ``order``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"points have shape {X.shape}, need (N, {self.in_dim})")
        (W0, b0), rest = bound[0], bound[1:]
        u = input_affine_jet(X, W0, b0, order, mixed)
        for W, b in rest:
            u = tanh_jet(u)
            u = affine_jet(u, W, b)
        return u

    def pack(self, grads) -> np.ndarray:
        """Flatten per-layer (W, b) arrays back into vector layout."""
        return np.concatenate([a.ravel() for pair in grads for a in pair])


@dataclass(frozen=True)
class SeparableModel:
    """Two 1-D sub-networks joined by a rank sum: sum_k f_k(x) g_k(y)."""

    rank: int = 32
    hidden: tuple[int, ...] = (32, 32, 32, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def subnet(self) -> MlpModel:
        return MlpModel((1, *self.hidden, self.rank))

    @property
    def n_params(self) -> int:
        return 2 * self.subnet.n_params

    def split(self, theta: np.ndarray) -> list[np.ndarray]:
        theta = np.asarray(theta)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector has {theta.shape}, model needs ({self.n_params},)")
        half = self.subnet.n_params
        return [theta[:half], theta[half:]]

    def init(self, seed: int, donor: np.ndarray | None = None) -> np.ndarray:
        if donor is not None:
            donor = np.asarray(donor, dtype=float)
            if donor.shape != (self.n_params,):
                raise ValueError(
                    f"warm-start donor has {donor.shape}, model needs ({self.n_params},)")
            return donor.copy()
        sub = self.subnet
        return np.concatenate([sub.init(seed), sub.init(seed + 1)])

    def forward(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """(N, 2) points -> (N,) values, same rank sum as the grid path."""
        X = np.asarray(X, dtype=float)
        f, g = [self.subnet.forward(th, X[:, d: d + 1])
                for d, th in enumerate(self.split(theta))]
        return np.einsum("nr,nr->n", f, g)

    def grid_forward(self, theta: np.ndarray, xs: np.ndarray,
                     ys: np.ndarray) -> np.ndarray:
        """All N*M grid values from N + M sub-network forwards."""
        tx, ty = self.split(theta)
        f = self.subnet.forward(tx, np.asarray(xs, dtype=float)[:, None])
        g = self.subnet.forward(ty, np.asarray(ys, dtype=float)[:, None])
        return f @ g.T

    def bind(self, tape: Tape, theta: np.ndarray):
        return [self.subnet.bind(tape, th) for th in self.split(theta)]

    def jet_grid(self, bound, xs: np.ndarray, ys: np.ndarray,
                 order: int = 0, mixed: bool = True) -> Node:
        """Tensor-grid jet; coefficient arrays are (len(xs), len(ys))."""
        f = self.subnet.jet(bound[0], np.asarray(xs, dtype=float)[:, None],
                            order, mixed=True)
        g = self.subnet.jet(bound[1], np.asarray(ys, dtype=float)[:, None],
                            order, mixed=True)
        return rank_combine_grid(f, g, order, mixed)

    def jet_points(self, bound, X: np.ndarray, order: int = 0,
                   mixed: bool = True) -> Node:
        X = np.asarray(X, dtype=float)
        f = self.subnet.jet(bound[0], X[:, 0:1], order, mixed=True)
        g = self.subnet.jet(bound[1], X[:, 1:2], order, mixed=True)
        return rank_combine(f, g, order, mixed)

    def pack(self, grads) -> np.ndarray:
        return np.concatenate([self.subnet.pack(g) for g in grads])


def _split_key(key: tuple[int, ...]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    a = sum(1 for i in key if i == 0)
    return (0,) * a, (0,) * (len(key) - a)


def rank_combine_grid(f: Node, g: Node, order: int, mixed: bool = True) -> Node:
    """Join two 1-D jets (N, r) and (M, r) into a 2-D grid jet of (N, M) arrays.

    out[key] = F[fk] @ G[gk].T where key splits into fk x-factors and gk
    y-factors; the product rule is exact because each factor depends on one
    coordinate only.
    """
    tape = f.tape
    fc, gc = f.value, g.value
    coeffs, blocks = {}, {}
    for key in jet_keys(2, order, mixed):
        fk, gk = _split_key(key)
        if fk in fc and gk in gc:
            coeffs[key] = fc[fk] @ gc[gk].T
            blocks[key] = (fk, gk)

    def back_f(gbar):
        out = {}
        for key, adj in gbar.items():
            if key not in blocks:
                continue
            fk, gk = blocks[key]
            delta = adj @ gc[gk]
            out[fk] = out[fk] + delta if fk in out else delta
        return out

    def back_g(gbar):
        out = {}
        for key, adj in gbar.items():
            if key not in blocks:
                continue
            fk, gk = blocks[key]
            delta = adj.T @ fc[fk]
            out[gk] = out[gk] + delta if gk in out else delta
        return out

    return tape.record(coeffs, [(f, back_f), (g, back_g)],
                       meta=(2, order, mixed))


def rank_combine(f: Node, g: Node, order: int, mixed: bool = True) -> Node:
    """Pointwise variant of ``rank_combine_grid``: both jets share N points."""
    tape = f.tape
    fc, gc = f.value, g.value
    coeffs, blocks = {}, {}
    for key in jet_keys(2, order, mixed):
        fk, gk = _split_key(key)
        if fk in fc and gk in gc:
            coeffs[key] = np.einsum("nr,nr->n", fc[fk], gc[gk])
            blocks[key] = (fk, gk)

    def back_f(gbar):
        out = {}
        for key, adj in gbar.items():
            if key not in blocks:
                continue
            fk, gk = blocks[key]
            delta = adj[:, None] * gc[gk]
            out[fk] = out[fk] + delta if fk in out else delta
        return out

    def back_g(gbar):
        out = {}
        for key, adj in gbar.items():
            if key not in blocks:
                continue
            fk, gk = blocks[key]
            delta = adj[:, None] * fc[fk]
            out[gk] = out[gk] + delta if gk in out else delta
        return out

    return tape.record(coeffs, [(f, back_f), (g, back_g)],
                       meta=(2, order, mixed))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def scheduled_rate(schedule, step: int) -> float:
    """Rate for 1-based iteration ``step`` from ordered (threshold, rate) pairs.

    The rate of the first pair whose threshold is >= step applies; a None or
    inf threshold is the open-ended tail.
    """
    for threshold, rate in schedule:
        if threshold is None or step <= threshold:
            return float(rate)
    raise ValueError(f"schedule {schedule!r} exhausted at iteration {step}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: tuple = ((None, 1e-3),)

    @classmethod
    def fresh(cls, n: int, schedule=((None, 1e-3),), **kw) -> "AdamState":
        sched = tuple((None if t in (None, math.inf) else int(t), float(r))
                      for t, r in schedule)
        thresholds = [t for t, _ in sched if t is not None]
        if thresholds != sorted(thresholds) or len(set(thresholds)) != len(thresholds):
            raise ValueError(f"schedule thresholds must increase: {schedule!r}")
        return cls(m=np.zeros(n), v=np.zeros(n), schedule=sched, **kw)

    @property
    def rate(self) -> float:
        """Rate that the *next* step will use."""
        return scheduled_rate(self.schedule, self.step + 1)


def adam_step(state: AdamState, params: np.ndarray,
              gradient: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update at the scheduled rate."""
    g = np.asarray(gradient)
    if g.shape != params.shape:
        raise ValueError(f"gradient shape {g.shape} != params {params.shape}")
    t = state.step + 1
    rate = scheduled_rate(state.schedule, t)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1**t)
    vhat = state.v / (1.0 - state.beta2**t)
    state.step = t
    return params - rate * mhat / (np.sqrt(vhat) + state.eps), state


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _model_doc(model) -> dict:
    if isinstance(model, MlpModel):
        return {"kind": "mlp", "widths": list(model.widths)}
    if isinstance(model, SeparableModel):
        return {"kind": "separable", "rank": model.rank,
                "hidden": list(model.hidden)}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _model_from_doc(doc: dict):
    kind = doc.get("kind")
    if kind == "mlp":
        return MlpModel(tuple(doc["widths"]))
    if kind == "separable":
        return SeparableModel(rank=int(doc["rank"]), hidden=tuple(doc["hidden"]))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(path, model, theta: np.ndarray, manifest: dict | None = None) -> None:
    """JSON document: architecture + flat parameters + training manifest.

    Floats go through repr, so reloading is bitwise."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_params,):
        raise ValueError(
            f"parameter vector has {theta.shape}, model needs ({model.n_params},)")
    doc = {
        "format": "neurosem-model",
        "version": 1,
        "model": _model_doc(model),
        "manifest": manifest or {},
        "params": [float(x) for x in theta],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path):
    """-> (model, parameter vector, manifest)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "neurosem-model":
        raise ValueError(f"{path} is not a model file")
    model = _model_from_doc(doc["model"])
    theta = np.asarray(doc["params"], dtype=float)
    if theta.shape != (model.n_params,):
        raise ValueError(f"{path}: parameter count {theta.size} does not match "
                         f"the declared architecture ({model.n_params})")
    return model, theta, doc.get("manifest", {})
