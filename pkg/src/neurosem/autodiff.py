"""Reverse-over-Taylor differentiation engine.

Input-derivatives of network outputs (up to third order) propagate forward as
truncated Taylor *jets*: dictionaries mapping a sorted multi-index such as
``(0,)`` (d/dx), ``(0, 1)`` (d2/dxdy) or ``(0, 1, 1)`` (d3/dxdy2) to an array
of raw derivative values.  A missing key is a structural zero.  Every jet
coefficient remains differentiable with respect to the parameters: jet
operations are recorded as single fused nodes on an append-only tape whose
reverse pass yields first-order parameter gradients.

tanh propagation uses the derivative chain of tanh itself (G1 = 1 - t^2,
G2 = -2 t G1, ...) combined through set-partition sums (Faa di Bruno), the
same enumeration serving the forward coefficients and the hand-derived
backward rule.

Gradient determinism: nodes are visited in reverse insertion order, each
exactly once, and accumulation order is fixed, so identical tapes give
bitwise-identical gradients.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape", "Node", "jet_keys", "grad",
    "add", "sub", "mul", "neg", "scale", "square", "power", "mean", "total",
    "matmul", "add_bias", "tanh", "column", "jet_coeff",
    "input_affine_jet", "affine_jet", "tanh_jet",
]


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

class Node:
    """One recorded quantity: a plain array or a jet (dict of arrays)."""

    __slots__ = ("tape", "idx", "value", "parents", "meta")

    def __init__(self, tape, idx, value, parents, meta=None):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.parents = parents  # tuple of (Node, vjp callable)
        self.meta = meta  # jets carry (dim, order, mixed)

    @property
    def is_jet(self) -> bool:
        return isinstance(self.value, dict)


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, value, parents=(), meta=None) -> Node:
        node = Node(self, len(self.nodes), value, tuple(parents), meta)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.record(np.asarray(value, dtype=float))

    def parameter(self, value) -> Node:
        """Root node for a trainable array (same as constant; name documents intent)."""
        return self.record(np.asarray(value, dtype=float))


def _accumulate(store, idx, delta):
    cur = store.get(idx)
    if cur is None:
        if isinstance(delta, dict):
            store[idx] = dict(delta)
        else:
            store[idx] = delta.copy() if isinstance(delta, np.ndarray) else delta
    elif isinstance(cur, dict):
        for k, v in delta.items():
            if k in cur:
                cur[k] = cur[k] + v
            else:
                cur[k] = v
    else:
        store[idx] = cur + delta


def grad(loss: Node, wrt: list[Node]) -> list[np.ndarray]:
    """d loss / d node for each node in ``wrt``; exact zeros when unconnected."""
    if np.size(loss.value) != 1:
        raise ValueError(f"grad needs a scalar loss, got shape {np.shape(loss.value)}")
    adjoints: dict[int, object] = {loss.idx: np.ones_like(np.asarray(loss.value))}
    targets = {node.idx for node in wrt}
    saved: dict[int, object] = {}
    for node in reversed(loss.tape.nodes[: loss.idx + 1]):
        abar = adjoints.pop(node.idx, None)
        if abar is None:
            continue
        if node.idx in targets:
            saved[node.idx] = abar
        for parent, vjp in node.parents:
            _accumulate(adjoints, parent.idx, vjp(abar))
    out = []
    for node in wrt:
        g = saved.get(node.idx)
        out.append(np.zeros_like(node.value) if g is None else np.asarray(g))
    return out


def _unbroadcast(adj: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint down to ``shape`` (inverse of numpy broadcasting)."""
    if adj.shape == shape:
        return adj
    extra = adj.ndim - len(shape)
    if extra:
        adj = adj.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and adj.shape[i] != 1)
    if axes:
        adj = adj.sum(axis=axes, keepdims=True)
    return adj


# ---------------------------------------------------------------------------
# plain-array primitives
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    v = a.value + b.value
    return a.tape.record(v, [(a, lambda g: _unbroadcast(g, a.value.shape)),
                             (b, lambda g: _unbroadcast(g, b.value.shape))])


def sub(a: Node, b: Node) -> Node:
    v = a.value - b.value
    return a.tape.record(v, [(a, lambda g: _unbroadcast(g, a.value.shape)),
                             (b, lambda g: _unbroadcast(-g, b.value.shape))])


def mul(a: Node, b: Node) -> Node:
    v = a.value * b.value
    return a.tape.record(v, [(a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
                             (b, lambda g: _unbroadcast(g * a.value, b.value.shape))])


def neg(a: Node) -> Node:
    return a.tape.record(-a.value, [(a, lambda g: -g)])


def scale(a: Node, c: float) -> Node:
    return a.tape.record(c * a.value, [(a, lambda g: c * g)])


def square(a: Node) -> Node:
    return a.tape.record(a.value * a.value, [(a, lambda g: 2.0 * a.value * g)])


def power(a: Node, k: int) -> Node:
    v = a.value**k
    return a.tape.record(v, [(a, lambda g: k * a.value ** (k - 1) * g)])


def mean(a: Node) -> Node:
    n = a.value.size
    return a.tape.record(np.asarray(a.value.mean()),
                         [(a, lambda g: np.broadcast_to(g / n, a.value.shape))])


def total(a: Node) -> Node:
    return a.tape.record(np.asarray(a.value.sum()),
                         [(a, lambda g: np.broadcast_to(g, a.value.shape))])


def matmul(a: Node, b: Node) -> Node:
    v = a.value @ b.value
    return a.tape.record(v, [(a, lambda g: g @ b.value.T),
                             (b, lambda g: a.value.T @ g)])


def add_bias(a: Node, b: Node) -> Node:
    """a + row-vector bias b, summing the batch axis on the way back."""
    v = a.value + b.value
    return a.tape.record(v, [(a, lambda g: g),
                             (b, lambda g: _unbroadcast(g, b.value.shape))])


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return a.tape.record(t, [(a, lambda g: (1.0 - t * t) * g)])


def column(a: Node, j: int) -> Node:
    v = a.value[:, j]

    def back(g):
        out = np.zeros_like(a.value)
        out[:, j] = g
        return out

    return a.tape.record(v, [(a, back)])


# ---------------------------------------------------------------------------
# jets
# ---------------------------------------------------------------------------

def jet_keys(dim: int, order: int, mixed: bool = True) -> list[tuple[int, ...]]:
    """Sorted multi-indices for ``dim`` inputs up to ``order`` derivatives.

    ``mixed=False`` keeps only pure derivatives at order 2 (a Laplacian needs
    no cross terms); third-order jets are always full.
    """
    if not 0 <= order <= 3:
        raise ValueError(f"jet order must be in 0..3, got {order}")
    if not mixed and order > 2:
        raise ValueError("mixed derivatives cannot be dropped at order 3")
    keys: list[tuple[int, ...]] = [()]
    if order >= 1:
        keys += [(i,) for i in range(dim)]
    if order >= 2:
        if mixed:
            keys += [(i, j) for i in range(dim) for j in range(i, dim)]
        else:
            keys += [(i, i) for i in range(dim)]
    if order >= 3:
        keys += [(i, j, k) for i in range(dim) for j in range(i, dim)
                 for k in range(j, dim)]
    return keys


# set partitions of 1, 2, 3 positions (blocks as sorted tuples of positions)
_PARTITIONS = {
    1: [[(0,)]],
    2: [[(0, 1)], [(0,), (1,)]],
    3: [[(0, 1, 2)],
        [(0,), (1, 2)], [(1,), (0, 2)], [(2,), (0, 1)],
        [(0,), (1,), (2,)]],
}


def _block_key(key, block):
    return tuple(sorted(key[p] for p in block))


def input_affine_jet(x: np.ndarray, W: Node, b: Node, order: int = 1,
                     mixed: bool = True) -> Node:
    """Jet of the first layer x @ W + b with respect to the inputs x.

    x is a constant (N, dim) batch; first-derivative coefficients are the
    rows of W kept as (1, width) arrays and broadcast downstream.  All higher
    coefficients are structural zeros.
    """
    tape = W.tape
    dim = x.shape[1]
    jet_keys(dim, order, mixed)  # validate the (order, mixed) combination
    coeffs = {(): x @ W.value + b.value}
    if order >= 1:
        for i in range(dim):
            coeffs[(i,)] = W.value[i: i + 1, :]

    def back_W(gbar):
        out = np.zeros_like(W.value)
        g0 = gbar.get(())
        if g0 is not None:
            out += x.T @ g0
        for i in range(dim):
            gi = gbar.get((i,))
            if gi is not None:
                out[i, :] += gi.sum(axis=0)
        return out

    def back_b(gbar):
        g0 = gbar.get(())
        return np.zeros_like(b.value) if g0 is None else \
            _unbroadcast(g0, b.value.shape)

    return tape.record(coeffs, [(W, back_W), (b, back_b)],
                       meta=(dim, order, mixed))


def affine_jet(u: Node, W: Node, b: Node) -> Node:
    """Jet of u @ W + b: every coefficient maps linearly through W."""
    tape = u.tape
    uc = u.value
    coeffs = {k: v @ W.value for k, v in uc.items()}
    coeffs[()] = coeffs[()] + b.value

    def back_u(gbar):
        return {k: g @ W.value.T for k, g in gbar.items() if k in uc}

    def back_W(gbar):
        out = np.zeros_like(W.value)
        for k, g in gbar.items():
            v = uc.get(k)
            if v is None:
                continue
            if v.shape[0] == 1 and g.shape[0] != 1:
                out += v.T @ g.sum(axis=0, keepdims=True)
            else:
                out += v.T @ g
        return out

    def back_b(gbar):
        g0 = gbar.get(())
        return np.zeros_like(b.value) if g0 is None else \
            _unbroadcast(g0, b.value.shape)

    return tape.record(coeffs, [(u, back_u), (W, back_W), (b, back_b)],
                       meta=u.meta)


def _tanh_chain(t, rmax=4):
    """tanh derivative chain G_r = d^r tanh / dz^r expressed in t = tanh(z)."""
    tt = t * t
    g = [None, 1.0 - tt]
    if rmax >= 2:
        g.append(-2.0 * (t * g[1]))
    if rmax >= 3:
        g.append(g[1] * (6.0 * tt - 2.0))
    if rmax >= 4:
        g.append((-4.0 * g[2]) * (2.0 - 3.0 * tt))
    return g


def tanh_jet(u: Node) -> Node:
    """Elementwise tanh of a jet via Faa di Bruno over set partitions.

    Target coefficients are enumerated from the jet's (dim, order, mixed)
    signature, not from the keys stored upstream: an affine first layer keeps
    only first-order entries, yet its tanh owns genuine curvature
    (G2 u_i u_j + ...).  Partition terms touching an absent (structurally
    zero) factor are dropped, and a key whose every term drops stays absent.
    """
    tape = u.tape
    uc = u.value
    dim, order, mixed = u.meta
    t = np.tanh(uc[()])
    G = _tanh_chain(t, min(order + 1, 4))
    coeffs = {(): t}
    # key -> list of (r, [(block key, multiplicity)], block product); the
    # products are kept so the backward chain term reuses them verbatim
    terms = {}
    for key in jet_keys(dim, order, mixed):
        if key == ():
            continue
        kterms = []
        for partition in _PARTITIONS[len(key)]:
            blocks = [_block_key(key, blk) for blk in partition]
            if all(bk in uc for bk in blocks):
                prod = uc[blocks[0]]
                for bk in blocks[1:]:
                    prod = prod * uc[bk]
                counted = []
                for bk in blocks:
                    if counted and counted[-1][0] == bk:
                        counted[-1][1] += 1
                    else:
                        counted.append([bk, 1])
                kterms.append((len(partition), counted, prod))
        if not kterms:
            continue
        terms[key] = kterms
        acc = None
        for r, _, prod in kterms:
            term = G[r] * prod
            if acc is None:
                acc = term
            else:
                acc += term
        coeffs[key] = acc

    def back_u(gbar):
        out: dict = {}

        def bump(k, delta):
            cur = out.get(k)
            if cur is None:
                out[k] = delta  # deltas are freshly allocated; safe to own
            else:
                cur += delta

        g0 = gbar.get(())
        if g0 is not None:
            bump((), g0 * G[1])
        for key, abar in gbar.items():
            if key == ():
                continue
            for r, counted, prod in terms.get(key, ()):
                # chain through t: d G_r / dz = G_{r+1}
                bump((), _unbroadcast(abar * G[r + 1] * prod, uc[()].shape))
                for i, (bk, m) in enumerate(counted):
                    rest = G[r] if m == 1 else m * G[r]
                    for j, (ok, mm) in enumerate(counted):
                        for _ in range(mm - (1 if j == i else 0)):
                            rest = rest * uc[ok]
                    bump(bk, _unbroadcast(abar * rest, uc[bk].shape))
        return out

    return tape.record(coeffs, [(u, back_u)], meta=u.meta)


def jet_coeff(u: Node, key: tuple[int, ...]) -> Node:
    """Extract one derivative coefficient as a plain array node.

    A structurally zero coefficient comes back as a constant zero array
    (shaped like the jet value) with no parameter sensitivity.
    """
    tape = u.tape
    key = tuple(sorted(key))
    v = u.value.get(key)
    if v is None:
        return tape.record(np.zeros_like(u.value[()]))
    shape = v.shape

    def back(g):
        return {key: _unbroadcast(g, shape)}

    return tape.record(v, [(u, back)])
