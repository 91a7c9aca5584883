"""Semi-implicit marching for incompressible Boussinesq flow.

The velocity-correction splitting uses backward-differentiation /
extrapolation pairs of order 1 or 2: explicit treatment of the convective
term, a pressure Poisson solve closed by the rotational (curl-curl) Neumann
boundary condition, and component-wise implicit viscous Helmholtz solves.
The temperature equation is marched with the same coefficient pair
(implicit diffusion, extrapolated advection).  A coupled step solves
temperature first — with the velocity history — and feeds Ri*T^{n+1} back
into the momentum equation as vertical buoyancy.

Nondimensional form throughout:

    du/dt + (u.grad)u = -grad p + (1/Re) lap u + Ri T k_hat
    div u = 0
    dT/dt + u.grad T = (1/Pe) lap T

``viscosity`` below is 1/Re and ``inv_peclet`` is 1/Pe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import (
    BCKind,
    BoundaryCondition,
    HelmholtzSystem,
    dirichlet_data,
    edge_load,
    mass_load,
    pcg,
    weak_gradient_load,
)
from .field import Field, FunctionSpace

__all__ = [
    "StifflyStableCoeffs", "stiffly_stable_coeffs", "FlowState",
    "BodyForceSource", "VelocityBC", "BCSet", "TimeStepper", "DivergenceError",
    "splitting_step", "advdiff_step", "coupled_step", "drive_to_steady",
    "SteadyResult", "save_checkpoint", "load_checkpoint", "write_vtk",
]


# ---------------------------------------------------------------------------
# integrator coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StifflyStableCoeffs:
    """Backward-differentiation / extrapolation pair of order J."""

    J: int
    gamma0: float
    alpha: tuple[float, ...]
    beta: tuple[float, ...]


_COEFFS = {
    1: StifflyStableCoeffs(1, 1.0, (1.0,), (1.0,)),
    2: StifflyStableCoeffs(2, 1.5, (2.0, -0.5), (2.0, -1.0)),
}


def stiffly_stable_coeffs(J: int) -> StifflyStableCoeffs:
    """Coefficient set of the J-th-order stiffly-stable integrator (J in {1, 2})."""
    try:
        return _COEFFS[J]
    except KeyError:
        raise ValueError(f"unsupported integrator order {J!r}; supported: 1, 2") from None


class DivergenceError(RuntimeError):
    """The marched velocity exceeded the blow-up guard (CFL violation, likely)."""


# ---------------------------------------------------------------------------
# state and sources
# ---------------------------------------------------------------------------

@dataclass
class FlowState:
    """Marching state: newest-first histories of velocity and temperature.

    ``velocity[k]`` is u at time level n-k with shape (num_nodes, 2);
    ``temperature[k]`` likewise with shape (num_nodes,).  Either history may
    be absent for single-physics marching.
    """

    space: FunctionSpace
    time: float = 0.0
    step: int = 0
    velocity: list[np.ndarray] | None = None
    pressure: np.ndarray | None = None
    temperature: list[np.ndarray] | None = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_rest(cls, space: FunctionSpace, temperature=None,
                  with_flow: bool = True) -> "FlowState":
        """Quiescent state; ``temperature`` may be None, nodal array, or f(x, y)."""
        vel = [np.zeros((space.num_nodes, 2))] if with_flow else None
        pres = np.zeros(space.num_nodes) if with_flow else None
        T = None
        if temperature is not None:
            if callable(temperature):
                xy = space.node_coords
                T0 = np.asarray(temperature(xy[:, 0], xy[:, 1]), dtype=float)
            else:
                T0 = np.asarray(temperature, dtype=float)
            T = [np.broadcast_to(T0, (space.num_nodes,)).copy()]
        return cls(space, velocity=vel, pressure=pres, temperature=T)

    @property
    def velocity_field(self) -> Field:
        return Field(self.space, self.velocity[0].copy())

    @property
    def pressure_field(self) -> Field:
        return Field(self.space, self.pressure.copy())

    @property
    def temperature_field(self) -> Field:
        return Field(self.space, self.temperature[0].copy())


@dataclass
class BodyForceSource:
    """Momentum source f(x, y, t); ``kind`` records where it comes from.

    * none — no force;
    * closed-form — ``evaluator(x, y, t) -> (fx, fy)``;
    * network-surrogate — same calling convention, produced by a trained model;
    * coupled-temperature — Ri * T * k_hat built from the marched temperature.
    """

    kind: str = "none"
    evaluator: object = None
    richardson: float = 0.0

    _KINDS = ("none", "closed-form", "network-surrogate", "coupled-temperature")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown body-force kind {self.kind!r}")

    @classmethod
    def none(cls) -> "BodyForceSource":
        return cls("none")

    @classmethod
    def closed_form(cls, fn) -> "BodyForceSource":
        return cls("closed-form", evaluator=fn)

    @classmethod
    def surrogate(cls, fn) -> "BodyForceSource":
        return cls("network-surrogate", evaluator=fn)

    @classmethod
    def coupled_temperature(cls, richardson: float) -> "BodyForceSource":
        return cls("coupled-temperature", richardson=richardson)

    def resolve(self, space: FunctionSpace, t: float,
                temperature: np.ndarray | None = None) -> np.ndarray | None:
        """Nodal (N, 2) force at time t, or None when there is none."""
        if self.kind == "none":
            return None
        if self.kind == "coupled-temperature":
            if temperature is None:
                raise ValueError("coupled-temperature force needs a temperature field")
            if self.richardson == 0.0:
                return None
            out = np.zeros((space.num_nodes, 2))
            out[:, 1] = self.richardson * temperature
            return out
        xy = space.node_coords
        fx, fy = self.evaluator(xy[:, 0], xy[:, 1], t)
        out = np.empty((space.num_nodes, 2))
        out[:, 0] = fx
        out[:, 1] = fy
        return out


@dataclass
class VelocityBC:
    """Vector boundary condition; ``value`` is a pair of scalars/callables."""

    composite: str
    kind: BCKind = BCKind.DIRICHLET
    value: tuple = (0.0, 0.0)

    def component(self, c: int) -> BoundaryCondition:
        return BoundaryCondition(self.composite, self.kind, self.value[c])

    def is_static(self) -> bool:
        return all(BoundaryCondition(self.composite, self.kind, v).is_static()
                   for v in self.value)


@dataclass
class BCSet:
    """Boundary conditions for the marched variables.

    ``pressure`` entries override the default high-order Neumann closure on
    their composites (e.g. a Dirichlet trace on an interior cut-out).
    """

    velocity: list[VelocityBC] = field(default_factory=list)
    temperature: list[BoundaryCondition] = field(default_factory=list)
    pressure: list[BoundaryCondition] = field(default_factory=list)


# ---------------------------------------------------------------------------
# element-local helpers
# ---------------------------------------------------------------------------

def _gather2(space, nodal2):
    return np.stack([space.gather(nodal2[:, 0]), space.gather(nodal2[:, 1])], axis=-1)


def _convective(space, u_nodal):
    """(u.grad)u, element-local at the solution nodes, shape (ne, m, m, 2)."""
    loc = _gather2(space, u_nodal)
    out = np.empty_like(loc)
    for c in (0, 1):
        gx, gy = space.element_gradient(u_nodal[:, c])
        out[..., c] = loc[..., 0] * gx + loc[..., 1] * gy
    return out


def _vorticity(space, u_nodal):
    """Nodal vorticity dv/dx - du/dy, averaged at shared element boundaries."""
    _, gyu = space.element_gradient(u_nodal[:, 0])
    gxv, _ = space.element_gradient(u_nodal[:, 1])
    return space.average_to_nodes(gxv - gyu)


def _edge_values(blk, loc):
    """Restrict an element-local (ne, m, m) array to a boundary block's nodes."""
    i, j = blk.node_ij
    return loc[blk.elements[:, None], i, j]


# ---------------------------------------------------------------------------
# the stepper
# ---------------------------------------------------------------------------

class TimeStepper:
    """Owns the marching configuration, cached elliptic systems, and state.

    Modes (chosen by which coefficients are given):
      * ``viscosity`` only — momentum/pressure splitting;
      * ``inv_peclet`` only — advection-diffusion of temperature;
      * both — coupled Boussinesq (temperature first, then momentum with
        buoyancy ``richardson * T^{n+1}`` in the vertical).
    """

    def __init__(self, space: FunctionSpace, dt: float, *, order: int = 2,
                 viscosity: float | None = None, inv_peclet: float | None = None,
                 richardson: float = 0.0, bcs: BCSet | None = None,
                 force: BodyForceSource | None = None, advection=None,
                 guard: float = 1e3, elliptic_tol: float = 1e-10,
                 state: FlowState | None = None):
        if not space.collocated:
            raise ValueError("time marching requires a collocated space")
        if dt <= 0:
            raise ValueError("dt must be positive")
        if viscosity is not None and viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if inv_peclet is not None and inv_peclet < 0:
            raise ValueError("1/Pe must be nonnegative")
        if viscosity is None and inv_peclet is None:
            raise ValueError("nothing to march: give viscosity and/or inv_peclet")
        stiffly_stable_coeffs(order)  # validate early
        self.space = space
        self.dt = float(dt)
        self.order = order
        self.viscosity = viscosity
        self.inv_peclet = inv_peclet
        self.richardson = float(richardson)
        self.bcs = bcs or BCSet()
        self.force = force or BodyForceSource.none()
        self.advection = advection
        self.guard = float(guard)
        self.elliptic_tol = float(elliptic_tol)
        self.state = state

        boundary = set(space.mesh.composites) - space.periodic_labels
        if viscosity is not None:
            self._vbc = {bc.composite: bc for bc in self.bcs.velocity}
            missing = boundary - set(self._vbc)
            if missing:
                raise ValueError(f"velocity bcs missing for composite(s) {sorted(missing)}")
            pres_over = {bc.composite for bc in self.bcs.pressure}
            for bc in self.bcs.pressure:
                if bc.kind is not BCKind.DIRICHLET:
                    raise ValueError("pressure overrides must be Dirichlet traces")
            self._pressure_neumann = sorted(boundary - pres_over)
            self._moving = {lab for lab, vbc in self._vbc.items()
                            if vbc.kind is BCKind.DIRICHLET and not vbc.is_static()}
        interior = np.ones(space.num_nodes, dtype=bool)
        for lab in boundary:
            interior[space.edge_blocks[lab].unique_gids] = False
        self._interior = interior
        self._systems: dict = {}

    # -- cached elliptic operators -----------------------------------------

    def _system(self, lam: float, robin=()) -> HelmholtzSystem:
        key = (lam, tuple(robin))
        if key not in self._systems:
            self._systems[key] = HelmholtzSystem(self.space, lam, list(robin))
        return self._systems[key]

    # -- public marching -----------------------------------------------------

    def advance(self, state: FlowState | None = None) -> FlowState:
        st = state if state is not None else self.state
        if st is None:
            raise ValueError("no state to advance")
        t_new = st.time + self.dt
        diagnostics: dict = {}
        T_hist = st.temperature
        if self.inv_peclet is not None:
            if T_hist is None:
                raise ValueError("temperature marching requested but state has none")
            T_new = self._advdiff_solve(st, t_new, diagnostics)
            depth = min(self.order, len(T_hist) + 1)
            T_hist = [T_new] + list(T_hist)[: depth - 1]
        u_hist, p_new = st.velocity, st.pressure
        if self.viscosity is not None:
            f_nodal = self._body_force(st, T_hist, t_new)
            u_new, p_new = self._momentum_solve(st, t_new, f_nodal, diagnostics)
            depth = min(self.order, len(st.velocity) + 1)
            u_hist = [u_new] + list(st.velocity)[: depth - 1]
            umax = float(np.max(np.abs(u_new)))
            if not math.isfinite(umax) or umax > self.guard:
                raise DivergenceError(
                    f"|u|_inf = {umax:.3e} exceeded the blow-up guard {self.guard:.3e} "
                    f"at t = {t_new:.6g} (step {st.step + 1}); reduce dt")
        new_state = FlowState(self.space, time=t_new, step=st.step + 1,
                              velocity=u_hist, pressure=p_new,
                              temperature=T_hist, diagnostics=diagnostics)
        if state is None or state is self.state:
            self.state = new_state
        return new_state

    # -- temperature ---------------------------------------------------------

    def _advection_at(self, st: FlowState, k: int, t_k: float) -> np.ndarray:
        src = self.advection
        if src is None:
            if st.velocity is None:
                raise ValueError("no advecting velocity: state carries none and no "
                                 "advection source was given")
            return st.velocity[min(k, len(st.velocity) - 1)]
        if isinstance(src, Field):
            return src.values
        if callable(src):
            xy = self.space.node_coords
            ux, uy = src(xy[:, 0], xy[:, 1], t_k)
            out = np.empty((self.space.num_nodes, 2))
            out[:, 0] = ux
            out[:, 1] = uy
            return out
        return np.asarray(src, dtype=float)

    def _advdiff_solve(self, st: FlowState, t_new: float, diagnostics: dict,
                       ) -> np.ndarray:
        space, dt = self.space, self.dt
        T_hist = st.temperature
        coef = stiffly_stable_coeffs(min(self.order, len(T_hist)))
        That = sum(a * T for a, T in zip(coef.alpha, T_hist))
        adv = np.zeros((space.mesh.num_elements,) + (space.order + 1,) * 2)
        for k, b in enumerate(coef.beta):
            u_k = self._advection_at(st, k, st.time - k * dt)
            gx, gy = space.element_gradient(T_hist[k])
            uloc = _gather2(space, u_k)
            adv += b * (uloc[..., 0] * gx + uloc[..., 1] * gy)
        tbcs = self.bcs.temperature
        if self.inv_peclet > 0.0:
            pe = 1.0 / self.inv_peclet
            lam = coef.gamma0 * pe / dt
            robin = tuple((bc.composite, bc.robin_coefficient) for bc in tbcs
                          if bc.kind is BCKind.ROBIN)
            system = self._system(lam, robin)
            rhs_loc = (pe / dt) * space.gather(That) - pe * adv
            b_T = mass_load(space, rhs_loc)
            for bc in tbcs:
                if bc.kind in (BCKind.NEUMANN, BCKind.ROBIN):
                    blk = space.edge_blocks[bc.composite]
                    edge_load(space, bc.composite, bc.resolve(blk.qcoords, t_new),
                              out=b_T)
            mask_vals = dirichlet_data(space, tbcs, t_new)
            T_new, its, _ = pcg(system, b_T, mask_vals, tol=self.elliptic_tol,
                                x0=T_hist[0])
            diagnostics["temperature_iterations"] = its
        else:
            # pure advection: diagonal (lumped) mass solve, no diffusive flux
            adv_nodal = mass_load(space, adv) / space.mass_vector
            T_new = (That - dt * adv_nodal) / coef.gamma0
            mask, vals = dirichlet_data(space, tbcs, t_new)
            T_new[mask] = vals[mask]
        return T_new

    # -- momentum --------------------------------------------------------------

    def _body_force(self, st: FlowState, T_hist, t_new: float) -> np.ndarray | None:
        T_new = T_hist[0] if T_hist else None
        f = self.force.resolve(self.space, t_new, temperature=T_new)
        if self.richardson != 0.0:
            if T_new is None:
                raise ValueError("buoyant marching needs a temperature history")
            buoy = np.zeros((self.space.num_nodes, 2))
            buoy[:, 1] = self.richardson * T_new
            f = buoy if f is None else f + buoy
        return f

    def _momentum_solve(self, st: FlowState, t_new: float,
                        f_nodal: np.ndarray | None, diagnostics: dict):
        space, dt, nu = self.space, self.dt, self.viscosity
        u_hist = st.velocity
        coef = stiffly_stable_coeffs(min(self.order, len(u_hist)))
        Je = coef.J
        uhat = sum(a * u for a, u in zip(coef.alpha, u_hist))
        ustar = sum(b * u for b, u in zip(coef.beta, u_hist))
        F_loc = _gather2(space, uhat) / dt - _convective(space, ustar)
        if f_nodal is not None:
            F_loc += _gather2(space, f_nodal)

        # pressure Poisson with rotational Neumann closure
        b_p = weak_gradient_load(space, F_loc[..., 0], F_loc[..., 1])
        conv_hist = [_convective(space, u_hist[k]) for k in range(Je)]
        curl_grads = [space.element_gradient(_vorticity(space, u_hist[k]))
                      for k in range(Je)]
        for lab in self._pressure_neumann:
            blk = space.edge_blocks[lab]
            nx, ny = blk.normals[..., 0], blk.normals[..., 1]
            g = np.zeros(nx.shape)
            if f_nodal is not None:
                g += nx * f_nodal[blk.node_gids, 0] + ny * f_nodal[blk.node_gids, 1]
            if lab in self._moving:
                aw = self._wall_acceleration(st, lab, t_new, coef)
                g -= nx * aw[..., 0] + ny * aw[..., 1]
            for k, b in enumerate(coef.beta):
                g -= b * (nx * _edge_values(blk, conv_hist[k][..., 0])
                          + ny * _edge_values(blk, conv_hist[k][..., 1]))
                gwx, gwy = curl_grads[k]
                g -= nu * b * (nx * _edge_values(blk, gwy)
                               - ny * _edge_values(blk, gwx))
            g -= (nx * _edge_values(blk, F_loc[..., 0])
                  + ny * _edge_values(blk, F_loc[..., 1]))
            edge_load(space, lab, g, out=b_p)
        p_sys = self._system(0.0)
        pdir = dirichlet_data(space, self.bcs.pressure, t_new) \
            if self.bcs.pressure else None
        p_new, p_its, _ = pcg(p_sys, b_p, pdir, tol=self.elliptic_tol,
                              x0=st.pressure)
        gpx, gpy = space.element_gradient(p_new)

        # weak incompressibility of the projected field, interior test functions
        proj = (dt / coef.gamma0) * np.stack([F_loc[..., 0] - gpx,
                                              F_loc[..., 1] - gpy], axis=-1)
        div = weak_gradient_load(space, proj[..., 0], proj[..., 1])
        diagnostics["divergence_residual"] = float(np.max(np.abs(div[self._interior])))
        diagnostics["pressure_rhs_norm"] = float(np.linalg.norm(b_p))
        diagnostics["pressure_iterations"] = p_its

        # component-wise viscous Helmholtz solves
        lam_v = coef.gamma0 / (nu * dt)
        v_sys = self._system(lam_v)
        u_new = np.empty((space.num_nodes, 2))
        its = []
        for c, gp in enumerate((gpx, gpy)):
            b_u = mass_load(space, (F_loc[..., c] - gp) / nu)
            dir_bcs = []
            for lab, vbc in self._vbc.items():
                if vbc.kind is BCKind.DIRICHLET:
                    dir_bcs.append(vbc.component(c))
                elif vbc.kind is BCKind.NEUMANN:
                    blk = space.edge_blocks[lab]
                    bc_c = vbc.component(c)
                    edge_load(space, lab, bc_c.resolve(blk.qcoords, t_new), out=b_u)
                else:
                    raise ValueError("velocity bcs must be Dirichlet or Neumann")
            mask_vals = dirichlet_data(space, dir_bcs, t_new)
            u_new[:, c], it, _ = pcg(v_sys, b_u, mask_vals, tol=self.elliptic_tol,
                                     x0=u_hist[0][:, c])
            its.append(it)
        diagnostics["velocity_iterations"] = tuple(its)
        return u_new, p_new

    def _wall_acceleration(self, st: FlowState, lab: str, t_new: float,
                           coef: StifflyStableCoeffs) -> np.ndarray:
        """(gamma0 u_w(t^{n+1}) - sum_k alpha_k u_w(t^{n-k})) / dt at wall nodes."""
        blk = self.space.edge_blocks[lab]
        vbc = self._vbc[lab]
        aw = np.zeros(blk.node_coords.shape[:-1] + (2,))
        for c in (0, 1):
            bc = vbc.component(c)
            acc = coef.gamma0 * bc.resolve(blk.node_coords, t_new)
            for k, a in enumerate(coef.alpha):
                acc -= a * bc.resolve(blk.node_coords, st.time - k * self.dt)
            aw[..., c] = acc / self.dt
        return aw


# ---------------------------------------------------------------------------
# functional wrappers
# ---------------------------------------------------------------------------

def splitting_step(state: FlowState, dt: float, viscosity: float,
                   force: BodyForceSource | None = None,
                   bcs: BCSet | None = None, *, order: int = 2,
                   guard: float = 1e3, elliptic_tol: float = 1e-10) -> FlowState:
    """One velocity-correction step (pressure Poisson + viscous Helmholtz)."""
    stepper = TimeStepper(state.space, dt, order=order, viscosity=viscosity,
                          bcs=bcs, force=force, guard=guard,
                          elliptic_tol=elliptic_tol)
    return stepper.advance(state)


def advdiff_step(state: FlowState, dt: float, inv_peclet: float,
                 advection=None, bcs: BCSet | None = None, *, order: int = 2,
                 elliptic_tol: float = 1e-10) -> FlowState:
    """One implicit-diffusion / explicit-advection temperature step."""
    stepper = TimeStepper(state.space, dt, order=order, inv_peclet=inv_peclet,
                          advection=advection, bcs=bcs, elliptic_tol=elliptic_tol)
    return stepper.advance(state)


def coupled_step(state: FlowState, dt: float, viscosity: float,
                 inv_peclet: float, richardson: float,
                 bcs: BCSet | None = None, *, order: int = 2,
                 force: BodyForceSource | None = None, guard: float = 1e3,
                 elliptic_tol: float = 1e-10) -> FlowState:
    """Temperature step, then momentum with buoyancy richardson*T^{n+1}*k_hat."""
    stepper = TimeStepper(state.space, dt, order=order, viscosity=viscosity,
                          inv_peclet=inv_peclet, richardson=richardson,
                          bcs=bcs, force=force, guard=guard,
                          elliptic_tol=elliptic_tol)
    return stepper.advance(state)


@dataclass
class SteadyResult:
    state: FlowState
    residual: float
    converged: bool
    steps: int


def drive_to_steady(stepper: TimeStepper, tol: float,
                    max_steps: int = 100000) -> SteadyResult:
    """March until max_nodes |u^{n+1} - u^n| / dt <= tol.

    Falls back to the temperature increment when the stepper carries no
    velocity.  Non-convergence is reported, not raised; the final state is
    returned either way.
    """
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    prev = (stepper.state.velocity[0] if stepper.state.velocity is not None
            else stepper.state.temperature[0]).copy()
    residual = math.inf
    st = stepper.state
    for n in range(1, max_steps + 1):
        st = stepper.advance()
        cur = st.velocity[0] if st.velocity is not None else st.temperature[0]
        residual = float(np.max(np.abs(cur - prev))) / stepper.dt
        st.diagnostics["steady_residual"] = residual
        if st.temperature is not None and len(st.temperature) > 1:
            st.diagnostics["temperature_residual"] = float(
                np.max(np.abs(st.temperature[0] - st.temperature[1]))) / stepper.dt
        if residual <= tol:
            return SteadyResult(st, residual, True, n)
        prev = cur.copy()
    return SteadyResult(st, residual, False, max_steps)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(state: FlowState, path) -> None:
    """CSV snapshot (x, y, fields) of the newest time level; restartable."""
    cols, names = [state.space.node_coords[:, 0], state.space.node_coords[:, 1]], ["x", "y"]
    if state.velocity is not None:
        cols += [state.velocity[0][:, 0], state.velocity[0][:, 1]]
        names += ["u", "v"]
    if state.pressure is not None:
        cols.append(state.pressure)
        names.append("p")
    if state.temperature is not None:
        cols.append(state.temperature[0])
        names.append("T")
    data = np.column_stack(cols)
    header = f"time={state.time!r} step={state.step}\n" + ",".join(names)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="# ")


def load_checkpoint(space: FunctionSpace, path) -> FlowState:
    """Rebuild a depth-1 state from a checkpoint written on the same space."""
    with open(path) as fh:
        meta = fh.readline().strip().lstrip("# ")
        names = fh.readline().strip().lstrip("# ").split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    fields = dict(zip(names, data.T))
    if data.shape[0] != space.num_nodes:
        raise ValueError(f"checkpoint has {data.shape[0]} nodes, space has "
                         f"{space.num_nodes}")
    if np.max(np.abs(np.column_stack([fields["x"], fields["y"]])
                     - space.node_coords)) > 1e-12:
        raise ValueError("checkpoint node coordinates do not match the space")
    kv = dict(item.split("=") for item in meta.split())
    state = FlowState(space, time=float(kv.get("time", 0.0)),
                      step=int(kv.get("step", 0)))
    if "u" in fields:
        state.velocity = [np.column_stack([fields["u"], fields["v"]])]
    if "p" in fields:
        state.pressure = fields["p"].copy()
    if "T" in fields:
        state.temperature = [fields["T"].copy()]
    return state


def write_vtk(state: FlowState, path) -> None:
    """Legacy ASCII VTK unstructured-grid snapshot for external viewers."""
    space = state.space
    xy = space.node_coords
    g = space.gmap
    p = space.order
    quads = []
    for e in range(space.mesh.num_elements):
        for i in range(p):
            for j in range(p):
                quads.append((g[e, i, j], g[e, i + 1, j],
                              g[e, i + 1, j + 1], g[e, i, j + 1]))
    lines = ["# vtk DataFile Version 3.0",
             f"snapshot t={state.time!r} step={state.step}",
             "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {space.num_nodes} double"]
    lines += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in xy]
    lines.append(f"CELLS {len(quads)} {5 * len(quads)}")
    lines += ["4 " + " ".join(map(str, q)) for q in quads]
    lines.append(f"CELL_TYPES {len(quads)}")
    lines += ["9"] * len(quads)
    lines.append(f"POINT_DATA {space.num_nodes}")
    if state.velocity is not None:
        lines.append("VECTORS velocity double")
        lines += [f"{float(u)!r} {float(v)!r} 0.0" for u, v in state.velocity[0]]
    scalars = []
    if state.pressure is not None:
        scalars.append(("pressure", state.pressure))
    if state.temperature is not None:
        scalars.append(("temperature", state.temperature[0]))
    for name, vals in scalars:
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [f"{float(v)!r}" for v in vals]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
