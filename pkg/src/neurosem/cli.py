"""Command-line front end: train, solve, scenario, verify, mesh-gen.

All subcommands write only under their ``--out`` directory, exit 0 on
success, 2 on configuration problems, and 1 on runtime failures; errors go
to stderr as one JSON object per failure.  ``NEUROSEM_THREADS`` caps the
linear-algebra worker count and is honored before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_EXIT_OK, _EXIT_RUNTIME, _EXIT_CONFIG = 0, 1, 2


def _emit_error(message, **extra):
    doc = {"error": str(message)}
    doc.update(extra)
    print(json.dumps(doc), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors are machine-readable JSON."""

    def error(self, message):
        _emit_error(message, kind="usage")
        raise SystemExit(_EXIT_CONFIG)


def _apply_thread_cap() -> str | None:
    cap = os.environ.get("NEUROSEM_THREADS")
    if cap is None:
        return None
    if not cap.isdigit() or int(cap) < 1:
        return f"NEUROSEM_THREADS must be a positive integer, got {cap!r}"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)
    return None


def _build_parser() -> _Parser:
    parser = _Parser(prog="neurosem",
                     description="Hybrid solver/surrogate toolbox: train "
                                 "networks on flow data, couple them into "
                                 "the spectral-element solver, or run whole "
                                 "assimilation scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="fit the configured "
                       "networks and write model documents")
    p.add_argument("--config", required=True, help="session file")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("solve", help="march the configured equations")
    p.add_argument("--config", required=True, help="session file")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("scenario", help="run one assimilation scenario "
                       "end to end and report errors")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", help="named built-in configuration")
    group.add_argument("--config", help="session file with a [training] "
                       "section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot-data", action="store_true",
                   help="also write per-curve CSV files")

    p = sub.add_parser("verify", help="run built-in invariant checks")
    p.add_argument("--suite", default="all", help="which suite (default all)")

    p = sub.add_parser("mesh-gen", help="write a structured or cut-out mesh")
    p.add_argument("--out", required=True, help="mesh file to write")
    p.add_argument("--nx", type=int, default=16)
    p.add_argument("--ny", type=int, default=16)
    p.add_argument("--extent", type=float, nargs=4,
                   metavar=("X0", "X1", "Y0", "Y1"),
                   default=[0.0, 1.0, 0.0, 1.0])
    p.add_argument("--cutout", type=float, nargs=2, metavar=("A", "B"),
                   help="excise (a,b)^2 from the unit square; uses --nx "
                        "elements per side")
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_train(args) -> int:
    from pathlib import Path

    from .assimilation import run_training
    from .session import load_session, to_scenario_spec

    cfg = load_session(args.config)
    spec = to_scenario_spec(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    os.environ.setdefault("NEUROSEM_CACHE", str(out / "cache"))
    summary = run_training(spec, out)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return _EXIT_OK


def _boundary_sets(cfg, space, base):
    """BCSet pieces from the boundary block of a parsed session."""
    from .coupling import (SurrogateHandle, extract_interface,
                           trace_values_from_csv)
    from .elliptic import BCKind, BoundaryCondition
    from .stepping import VelocityBC

    kinds = {"dirichlet": BCKind.DIRICHLET, "neumann": BCKind.NEUMANN,
             "robin": BCKind.ROBIN}
    velocity, temperature = [], []
    for comp, conditions in cfg.boundary.items():
        ventry = conditions.get("velocity")
        if ventry is not None:
            if ventry.kind in ("noslip", "dirichlet"):
                velocity.append(VelocityBC(comp, value=ventry.value))
            else:   # trace file with u, v columns
                path = os.path.join(base, ventry.path)
                vals = tuple(trace_values_from_csv(path, space, comp, var)
                             for var in ("u", "v"))
                velocity.append(VelocityBC(comp, value=vals))
        tentry = conditions.get("temperature")
        if tentry is not None:
            if tentry.kind in kinds:
                kw = {"robin_coefficient": tentry.robin_r} \
                    if tentry.kind == "robin" else {}
                temperature.append(
                    BoundaryCondition(comp, kinds[tentry.kind],
                                      tentry.value, **kw))
            elif tentry.kind == "trace":
                path = os.path.join(base, tentry.path)
                vals = trace_values_from_csv(path, space, comp, "T")
                temperature.append(
                    BoundaryCondition(comp, BCKind.DIRICHLET, vals))
            else:   # surrogate binding, imposed as configured
                handle = SurrogateHandle.from_file(
                    os.path.join(base, tentry.path))
                trace = extract_interface(handle, space, comp,
                                          tentry.trace_kind,
                                          R=tentry.robin_r,
                                          variables=("T",))
                kind = kinds[tentry.trace_kind]
                kw = {"robin_coefficient": tentry.robin_r} \
                    if tentry.trace_kind == "robin" else {}
                temperature.append(
                    BoundaryCondition(comp, kind,
                                      trace.data[comp]["T"], **kw))
    return velocity, temperature


def _cmd_solve(args) -> int:
    from pathlib import Path

    import numpy as np

    from .coupling import SurrogateHandle, advection_callable, buoyancy_source
    from .field import FunctionSpace
    from .mesh import load_mesh
    from .session import load_session
    from .stepping import (BCSet, BodyForceSource, FlowState, TimeStepper,
                           load_checkpoint, save_checkpoint)

    cfg = load_session(args.config)
    if cfg.solver is None:
        _emit_error("solve needs a [solver] section", kind="config")
        return _EXIT_CONFIG
    base = Path(args.config).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    s = cfg.solver
    phys = cfg.parameters.physics()
    space = FunctionSpace(load_mesh(base / s.mesh), s.order)
    velocity, temperature = _boundary_sets(cfg, space, base)

    has_flow = s.equations in ("navier-stokes", "coupled")
    has_temp = s.equations in ("advection-diffusion", "coupled")

    force = BodyForceSource.none()
    advection = None
    if "body_force" in cfg.functions:
        handle = SurrogateHandle.from_file(base / cfg.functions["body_force"])
        force = buoyancy_source(handle, phys.ri)
    if "advection_velocity" in cfg.functions:
        handle = SurrogateHandle.from_file(
            base / cfg.functions["advection_velocity"])
        advection = advection_callable(handle)

    if s.initial is not None:
        state = load_checkpoint(space, base / s.initial)
    else:
        state = FlowState.from_rest(
            space, temperature=0.0 if has_temp else None,
            with_flow=has_flow)

    stepper = TimeStepper(
        space, s.dt, order=2,
        viscosity=phys.inv_re if has_flow else 0.0,
        inv_peclet=phys.inv_pe if has_temp else 0.0,
        richardson=phys.ri if s.equations == "coupled" else 0.0,
        bcs=BCSet(velocity=velocity, temperature=temperature),
        force=force, advection=advection,
        elliptic_tol=s.elliptic_tol, state=state)

    n_steps = max(1, int(round(s.final_time / s.dt)))
    written = []
    for k in range(1, n_steps + 1):
        state = stepper.advance()
        if s.output_every and k % s.output_every == 0:
            path = out / f"state_{k:06d}.csv"
            save_checkpoint(state, path)
            written.append(str(path))
    final = out / "final.csv"
    save_checkpoint(state, final)
    written.append(str(final))

    fields = state.velocity[0] if has_flow else state.temperature[0]
    if not np.all(np.isfinite(fields)):
        _emit_error("march produced non-finite fields", kind="runtime")
        return _EXIT_RUNTIME
    print(json.dumps({"steps": n_steps, "time": state.time,
                      "outputs": written}, indent=1))
    return _EXIT_OK


def _cmd_scenario(args) -> int:
    from pathlib import Path

    from .assimilation import preset, run_scenario
    from .session import load_session, to_scenario_spec

    if args.preset:
        spec = preset(args.preset)
    else:
        spec = to_scenario_spec(load_session(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    os.environ.setdefault("NEUROSEM_CACHE", str(out / "cache"))
    report = run_scenario(spec, out_dir=out, plot_data=args.plot_data)
    print(report.to_json())
    if report.failure_stage is not None:
        _emit_error(report.failure_message, kind="runtime",
                    stage=report.failure_stage)
        return _EXIT_RUNTIME
    return _EXIT_OK


def _cmd_verify(args) -> int:
    from .verification import run_suite, suite_names

    if args.suite not in suite_names():
        _emit_error(f"unknown suite {args.suite!r}", kind="config",
                    known=list(suite_names()))
        return _EXIT_CONFIG
    results = run_suite(args.suite)
    failed = [r for r in results if not r.ok]
    for r in results:
        mark = "PASS" if r.ok else "FAIL"
        print(f"[{mark}] {r.suite}/{r.name}: {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        _emit_error(f"{len(failed)} invariant check(s) failed",
                    kind="runtime",
                    failed=[f"{r.suite}/{r.name}" for r in failed])
        return _EXIT_RUNTIME
    return _EXIT_OK


def _cmd_mesh_gen(args) -> int:
    from pathlib import Path

    from .mesh import MeshError, cutout_square, save_mesh, structured_rectangle

    try:
        if args.cutout is not None:
            a, b = args.cutout
            mesh = cutout_square(args.nx, (a, b))
        else:
            x0, x1, y0, y1 = args.extent
            mesh = structured_rectangle(args.nx, args.ny, x0, x1, y0, y1)
    except (MeshError, ValueError) as exc:
        _emit_error(exc, kind="config")
        return _EXIT_CONFIG
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, out)
    print(json.dumps({"path": str(out), "elements": mesh.num_elements,
                      "vertices": mesh.num_vertices,
                      "composites": sorted(mesh.composites)}))
    return _EXIT_OK


_COMMANDS = {"train": _cmd_train, "solve": _cmd_solve,
             "scenario": _cmd_scenario, "verify": _cmd_verify,
             "mesh-gen": _cmd_mesh_gen}


def main(argv=None) -> int:
    problem = _apply_thread_cap()
    if problem is not None:
        _emit_error(problem, kind="config")
        return _EXIT_CONFIG
    args = _build_parser().parse_args(argv)

    from .pinn import TrainingDivergedError
    from .session import SessionError
    from .stepping import DivergenceError

    try:
        return _COMMANDS[args.command](args)
    except SessionError as exc:
        _emit_error("invalid session", kind="config", details=exc.errors)
        return _EXIT_CONFIG
    except FileNotFoundError as exc:
        _emit_error(exc, kind="config")
        return _EXIT_CONFIG
    except (TrainingDivergedError, DivergenceError) as exc:
        _emit_error(exc, kind="runtime")
        return _EXIT_RUNTIME
    except ValueError as exc:
        _emit_error(exc, kind="config")
        return _EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
