"""Command-line front end: solve / study / tables / verify.

Configuration is plain key=value text, either in a file (one pair per line,
'#' comments) or as trailing command-line tokens; the tokens win. Outputs
are CSV files plus plain-text field dumps, deterministic for a fixed worker
count.

Exit codes: 0 success, 1 usage error, 2 non-convergence, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .basis import TensorBasis
from .driver import (
    ERROR_DIFFERENCE,
    STOPPING_MODES,
    SUCCESSIVE_DIFFERENCE,
    ConvergenceFailure,
    IterationConfig,
    ehdg_step_transient,
    iterate_to_fixed_point,
    transport_error_eval,
)
from .mesh import build_mesh
from .oracle import (
    direct_solve_shallow,
    direct_solve_transport,
    flux_jump_residual,
    shallow_flux_jump_residual,
)
from .problems import catalog, case_identifiers, convergence_study
from .shallow import ShallowOperators
from .transport import TransportOperators

FMT = "%.17g"


class UsageError(Exception):
    pass


class VerificationFailure(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    case: str = "transport2d-smooth"
    nel: tuple = (16,)
    p: int = 1
    dt: float | None = None
    steps: int | None = None
    stopping: str = ERROR_DIFFERENCE
    tol: float = 1e-10
    max_iters: int | None = None
    workers: int = 1
    outdir: str = "."
    nels: tuple | None = None
    ps: tuple | None = None
    table: str = "both"


def default_workers():
    env = os.environ.get("EHDG_WORKERS")
    if env is not None:
        try:
            w = int(env)
        except ValueError:
            raise UsageError(f"EHDG_WORKERS must be an integer, got {env!r}")
        if w < 1:
            raise UsageError("EHDG_WORKERS must be >= 1")
        return w
    return os.cpu_count() or 1


# -- key=value parsing ---------------------------------------------------------


def _int_list(key, raw):
    try:
        vals = tuple(int(tok) for tok in raw.split(",") if tok != "")
    except ValueError:
        raise UsageError(f"malformed value for {key}: {raw!r}")
    if not vals or any(v < 1 for v in vals):
        raise UsageError(f"{key} entries must be positive integers: {raw!r}")
    return vals


def _positive_int(key, raw):
    try:
        v = int(raw)
    except ValueError:
        raise UsageError(f"malformed value for {key}: {raw!r}")
    if v < 1:
        raise UsageError(f"{key} must be a positive integer, got {raw!r}")
    return v


def _positive_float(key, raw):
    try:
        v = float(raw)
    except ValueError:
        raise UsageError(f"malformed value for {key}: {raw!r}")
    if not (v > 0) or not math.isfinite(v):
        raise UsageError(f"{key} must be a positive number, got {raw!r}")
    return v


def _case_name(key, raw):
    if raw not in case_identifiers():
        raise UsageError(
            f"unknown case {raw!r} (known: {', '.join(case_identifiers())})"
        )
    return raw


def _stopping(key, raw):
    if raw not in STOPPING_MODES:
        raise UsageError(
            f"unknown stopping mode {raw!r} (known: {', '.join(STOPPING_MODES)})"
        )
    return raw


def _table_choice(key, raw):
    if raw not in ("1", "2", "both"):
        raise UsageError(f"table must be 1, 2, or both, got {raw!r}")
    return raw


_KEYS = {
    "case": _case_name,
    "nel": _int_list,
    "p": _positive_int,
    "dt": _positive_float,
    "steps": _positive_int,
    "stopping": _stopping,
    "tol": _positive_float,
    "max_iters": _positive_int,
    "workers": _positive_int,
    "outdir": lambda key, raw: raw,
    "nels": _int_list,
    "ps": _int_list,
    "table": _table_choice,
}


def parse_kv_lines(lines, origin):
    pairs = {}
    for i, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise UsageError(f"{origin}:{i}: expected key=value, got {text!r}")
        key, _, raw = text.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _KEYS:
            raise UsageError(f"{origin}:{i}: unknown key {key!r}")
        pairs[key] = raw
    return pairs


def parse_config(command, config_path=None, overrides=()):
    """Merge file pairs and override tokens into a validated RunConfig."""
    pairs = {}
    if config_path is not None:
        try:
            with open(config_path) as fh:
                pairs.update(parse_kv_lines(fh, config_path))
        except OSError as err:
            raise UsageError(f"cannot read config file: {err}")
    pairs.update(parse_kv_lines(overrides, "argument"))
    cfg = RunConfig(command=command, workers=default_workers())
    for key, raw in pairs.items():
        setattr(cfg, key, _KEYS[key](key, raw))
    return cfg


def iteration_config(cfg):
    return IterationConfig(
        tol=cfg.tol,
        stopping=cfg.stopping,
        max_iters=cfg.max_iters,
        workers=cfg.workers,
    )


# -- solve ----------------------------------------------------------------------


def _setup(cfg, case):
    nel = cfg.nel if len(cfg.nel) > 1 else cfg.nel[0]
    mesh = build_mesh(case.dim, nel, case.bounds)
    basis = TensorBasis(case.dim, cfg.p)
    return mesh, basis


def _out(cfg, suffix):
    os.makedirs(cfg.outdir, exist_ok=True)
    nel = "x".join(str(n) for n in cfg.nel)
    return os.path.join(cfg.outdir, f"{cfg.case}-p{cfg.p}-nel{nel}-{suffix}")


def write_field_dump(path, cfg, mesh, basis, named_fields):
    with open(path, "w") as fh:
        fh.write("# element nodal field dump\n")
        fh.write(f"# case={cfg.case}\n")
        nel = ",".join(str(n) for n in mesh.nel)
        names = ",".join(name for name, _vals in named_fields)
        fh.write(f"# dim={mesh.dim} nel={nel} p={basis.p} fields={names}\n")
        fh.write(
            "# nodes: tensor-product Gauss-Lobatto, axis 0 fastest;"
            " elements lexicographic, axis 0 fastest\n"
        )
        fh.write("# row: element index then nodal values per field\n")
        for e in range(mesh.n_el):
            cells = [str(e)]
            for _name, vals in named_fields:
                cells.extend(FMT % v for v in vals[e])
            fh.write(" ".join(cells) + "\n")


def _write_steps_csv(path, dt, counts, errors):
    with open(path, "w") as fh:
        fh.write("step,time,iterations,error_vs_exact\n")
        for m, (c, e) in enumerate(zip(counts, errors), start=1):
            cell = "" if e is None or math.isnan(e) else FMT % e
            fh.write(f"{m},{FMT % (m * dt)},{c},{cell}\n")


def cmd_solve(cfg):
    case = catalog(cfg.case)
    mesh, basis = _setup(cfg, case)
    iters_cfg = iteration_config(cfg)
    dt = cfg.dt if cfg.dt is not None else case.dt_default
    steps = cfg.steps if cfg.steps is not None else case.n_steps_default

    if case.kind == "shallow":
        if dt is None or steps is None:
            raise UsageError("shallow cases need dt= and steps=")
        return _solve_transient_shallow(cfg, case, mesh, basis, iters_cfg,
                                        dt, steps)
    if dt is not None:
        if steps is None:
            raise UsageError("transient transport needs steps=")
        return _solve_transient_transport(cfg, case, mesh, basis, iters_cfg,
                                          dt, steps)
    return _solve_steady(cfg, case, mesh, basis, iters_cfg)


def _solve_steady(cfg, case, mesh, basis, iters_cfg):
    ops = TransportOperators(mesh, basis, case.problem)
    u, _trace, log = iterate_to_fixed_point(ops, iters_cfg)
    with open(_out(cfg, "convergence.csv"), "w") as fh:
        log.write_csv(fh)
    write_field_dump(_out(cfg, "field.txt"), cfg, mesh, basis, [("u", u)])
    last_err = log.errors[-1]
    err_txt = "" if math.isnan(last_err) else f", error {last_err:.3e}"
    print(
        f"{cfg.case}: nel={mesh.nel} p={basis.p} -> "
        f"{log.iterations} iterations{err_txt}"
    )
    if not log.converged:
        print("did not converge within the iteration cap", file=sys.stderr)
        return 2
    return 0


def _march(ops, iters_cfg, state, dt, steps, err_of_t):
    counts, errors, last_log = [], [], None
    failed = False
    for m in range(steps):
        state, _trace, log = ehdg_step_transient(ops, iters_cfg, state, m * dt)
        counts.append(log.iterations)
        err = err_of_t((m + 1) * dt)
        errors.append(err(state) if err is not None else float("nan"))
        last_log = log
        if not log.converged:
            failed = True
            break
    return state, counts, errors, last_log, failed


def _solve_transient_transport(cfg, case, mesh, basis, iters_cfg, dt, steps):
    ops = TransportOperators(mesh, basis, case.problem, dt=dt)
    state = (
        ops.interpolate_exact(0.0)
        if case.problem.exact is not None
        else np.zeros((mesh.n_el, basis.n_p))
    )
    state, counts, errors, last_log, failed = _march(
        ops, iters_cfg, state, dt, steps,
        lambda t: transport_error_eval(ops, t),
    )
    _write_steps_csv(_out(cfg, "steps.csv"), dt, counts, errors)
    if last_log is not None:
        with open(_out(cfg, "convergence.csv"), "w") as fh:
            last_log.write_csv(fh)
    write_field_dump(_out(cfg, "field.txt"), cfg, mesh, basis, [("u", state)])
    _print_march(cfg, mesh, basis, counts, errors)
    return 2 if failed else 0


def _solve_transient_shallow(cfg, case, mesh, basis, iters_cfg, dt, steps):
    ops = ShallowOperators(mesh, basis, case.problem, dt)
    state = (
        ops.interpolate(case.problem.exact, 0.0)
        if case.problem.exact is not None
        else ops.zero_state()
    )
    state, counts, errors, last_log, failed = _march(
        ops, iters_cfg, state, dt, steps, ops.error_eval,
    )
    _write_steps_csv(_out(cfg, "steps.csv"), dt, counts, errors)
    if last_log is not None:
        with open(_out(cfg, "convergence.csv"), "w") as fh:
            last_log.write_csv(fh)
    phi, u, v = ops.split(state)
    write_field_dump(
        _out(cfg, "field.txt"), cfg, mesh, basis,
        [("phi", phi), ("u", u), ("v", v)],
    )
    _print_march(cfg, mesh, basis, counts, errors)
    return 2 if failed else 0


def _print_march(cfg, mesh, basis, counts, errors):
    err_txt = ""
    if errors and not math.isnan(errors[-1]):
        err_txt = f", final error {errors[-1]:.3e}"
    print(
        f"{cfg.case}: nel={mesh.nel} p={basis.p} -> {len(counts)} steps, "
        f"iterations/step {min(counts)}..{max(counts)}{err_txt}"
    )


# -- study ----------------------------------------------------------------------


_STUDY_DEFAULTS = {
    "transport2d-smooth": ((4, 8, 16, 32), (1, 2, 3, 4)),
    "transport3d-steady": ((2, 4, 8, 16), (1, 2, 3)),
    "shallow-standing-wave": ((4, 8, 16), (1, 2, 3)),
    "transport3d-gaussian": ((4, 8), (1, 2)),
}


def cmd_study(cfg):
    case = catalog(cfg.case)
    if getattr(case.problem, "exact", None) is None:
        raise UsageError(f"case {cfg.case} has no exact solution to study")
    defaults = _STUDY_DEFAULTS.get(cfg.case, ((4, 8, 16), (1, 2)))
    nels = cfg.nels if cfg.nels is not None else defaults[0]
    ps = cfg.ps if cfg.ps is not None else defaults[1]
    rows = convergence_study(
        case, nels, ps, config=iteration_config(cfg),
        dt=cfg.dt, n_steps=cfg.steps,
    )
    os.makedirs(cfg.outdir, exist_ok=True)
    path = os.path.join(cfg.outdir, f"{cfg.case}-study.csv")
    with open(path, "w") as fh:
        fh.write("case,p,nel,h,error,order,iterations\n")
        for r in rows:
            order = "" if math.isnan(r.order) else FMT % r.order
            fh.write(
                f"{cfg.case},{r.p},{r.nel},{FMT % r.h},{FMT % r.error},"
                f"{order},{r.iterations}\n"
            )
    for r in rows:
        otxt = "" if math.isnan(r.order) else f" order {r.order:.2f}"
        print(
            f"p={r.p} nel={r.nel}: error {r.error:.3e}{otxt} "
            f"({r.iterations} iterations)"
        )
    print(f"wrote {path}")
    return 0


# -- tables ----------------------------------------------------------------------


TABLE1_NEL_2D = (4, 8, 16, 32)     # per axis; 16..1024 elements
TABLE1_NEL_3D = (2, 4, 8, 16)      # per axis; 8..4096 elements
TABLE1_PS = (1, 2, 3, 4)
TABLE2_PS = (1, 2, 3, 4)
TABLE2_GRID = (
    ("shallow-standing-wave", (4, 8, 16, 32)),
    ("transport3d-gaussian", (2, 4, 8, 16)),
)
TABLE2_DTS = (1e-3, 1e-4)
TABLE2_STEPS = 10


def _steady_counts(identifier, nel_axis, p, workers):
    case = catalog(identifier)
    mesh = build_mesh(case.dim, nel_axis, case.bounds)
    basis = TensorBasis(case.dim, p)
    stopping = (
        SUCCESSIVE_DIFFERENCE
        if case.problem.exact is None
        else ERROR_DIFFERENCE
    )
    config = IterationConfig(stopping=stopping, workers=workers)
    ops = TransportOperators(mesh, basis, case.problem)
    _u, _trace, log = iterate_to_fixed_point(ops, config)
    if not log.converged:
        raise ConvergenceFailure(
            f"{identifier} nel={nel_axis} p={p} hit the iteration cap"
        )
    return log.iterations


def cmd_tables(cfg):
    os.makedirs(cfg.outdir, exist_ok=True)
    wrote = []
    if cfg.table in ("1", "both"):
        wrote.append(_run_table1(cfg))
    if cfg.table in ("2", "both"):
        wrote.append(_run_table2(cfg))
    for path in wrote:
        print(f"wrote {path}")
    return 0


def _run_table1(cfg):
    ps = cfg.ps if cfg.ps is not None else TABLE1_PS
    nels2 = cfg.nels if cfg.nels is not None else TABLE1_NEL_2D
    nels3 = cfg.nels if cfg.nels is not None else TABLE1_NEL_3D
    grid = [
        ("transport2d-smooth", nels2),
        ("transport2d-discontinuous", nels2),
        ("transport3d-steady", nels3),
    ]
    path = os.path.join(cfg.outdir, "table1-iterations.csv")
    with open(path, "w") as fh:
        fh.write("case,nel,p,iterations\n")
        for identifier, nels in grid:
            for p in ps:
                for n in nels:
                    count = _steady_counts(identifier, n, p, cfg.workers)
                    dim = catalog(identifier).dim
                    fh.write(f"{identifier},{n ** dim},{p},{count}\n")
                    print(f"{identifier} nel={n}^{dim} p={p}: {count}")
    return path


def _transient_counts(identifier, nel_axis, p, dt, steps, workers):
    case = catalog(identifier)
    mesh = build_mesh(case.dim, nel_axis, case.bounds)
    basis = TensorBasis(case.dim, p)
    config = IterationConfig(workers=workers)
    if case.kind == "shallow":
        ops = ShallowOperators(mesh, basis, case.problem, dt)
        state = ops.interpolate(case.problem.exact, 0.0)
    else:
        ops = TransportOperators(mesh, basis, case.problem, dt=dt)
        state = ops.interpolate_exact(0.0)
    counts = []
    for m in range(steps):
        state, _trace, log = ehdg_step_transient(ops, config, state, m * dt)
        if not log.converged:
            raise ConvergenceFailure(
                f"{identifier} dt={dt} p={p} step {m + 1} hit the cap"
            )
        counts.append(log.iterations)
    return counts


def _run_table2(cfg):
    ps = cfg.ps if cfg.ps is not None else TABLE2_PS
    steps = cfg.steps if cfg.steps is not None else TABLE2_STEPS
    path = os.path.join(cfg.outdir, "table2-iterations.csv")
    with open(path, "w") as fh:
        fh.write("case,nel,p,dt,steps,iterations_per_step\n")
        for identifier, nels in TABLE2_GRID:
            if cfg.nels is not None:
                nels = cfg.nels
            dim = catalog(identifier).dim
            for p in ps:
                for n in nels:
                    for dt in TABLE2_DTS:
                        counts = _transient_counts(
                            identifier, n, p, dt, steps, cfg.workers
                        )
                        # startup steps can differ; the settled per-step
                        # count is the one the table reports
                        per_step = counts[-1]
                        fh.write(
                            f"{identifier},{n ** dim},{p},{FMT % dt},"
                            f"{steps},{per_step}\n"
                        )
                        print(
                            f"{identifier} nel={n}^{dim} p={p} dt={dt:g}: "
                            f"{per_step} iterations/step"
                        )
    return path


# -- verify ----------------------------------------------------------------------


def _check(name, ok, detail, lines):
    lines.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return ok


def cmd_verify(cfg):
    case = catalog(cfg.case)
    mesh, basis = _setup(cfg, case)
    lines, all_ok = [], True
    if case.kind == "shallow":
        all_ok = _verify_shallow(cfg, case, mesh, basis, lines)
    else:
        all_ok = _verify_transport(cfg, case, mesh, basis, lines)
    for line in lines:
        print(line)
    if not all_ok:
        return 3
    return 0


def _verify_transport(cfg, case, mesh, basis, lines):
    dt = cfg.dt if cfg.dt is not None else case.dt_default
    # successive-difference bounds the distance to the fixed point, which
    # is what the comparison against the direct solve needs
    config = IterationConfig(
        tol=min(cfg.tol, 1e-12),
        stopping=SUCCESSIVE_DIFFERENCE,
        workers=cfg.workers,
    )
    if dt is None:
        ops = TransportOperators(mesh, basis, case.problem)
        u_it, tr_it, log = iterate_to_fixed_point(ops, config)
        u_dir, tr_dir, _sys = direct_solve_transport(mesh, basis, case.problem)
    else:
        ops = TransportOperators(mesh, basis, case.problem, dt=dt)
        state0 = ops.interpolate_exact(0.0)
        u_it, tr_it, log = iterate_to_fixed_point(
            ops, config, u0=state0, t=dt, state_prev=state0
        )
        u_dir, tr_dir, _sys = direct_solve_transport(
            mesh, basis, case.problem, dt=dt, state_prev=state0, t=dt
        )
    ok = True
    scale = volume_l2_of(ops, u_dir)
    rel = volume_l2_of(ops, u_it - u_dir) / max(scale, 1e-300)
    ok &= _check("iterate-vs-direct", rel <= 1e-8, f"relative L2 {rel:.3e}",
                 lines)
    j_it = flux_jump_residual(ops, u_it, tr_it)
    j_dir = flux_jump_residual(ops, u_dir, tr_dir)
    ok &= _check("flux-jump-iterate", j_it <= 1e-9, f"residual {j_it:.3e}",
                 lines)
    ok &= _check("flux-jump-direct", j_dir <= 1e-9, f"residual {j_dir:.3e}",
                 lines)
    ok &= _check("iteration-converged", log.converged,
                 f"{log.iterations} iterations", lines)
    return ok


def volume_l2_of(ops, u):
    vals = u @ ops.basis.eval_vol.T
    return float(
        np.sqrt(ops.mesh.jac * np.sum(ops.basis.quad_w * vals * vals))
    )


def _verify_shallow(cfg, case, mesh, basis, lines):
    dt = cfg.dt if cfg.dt is not None else (case.dt_default or 1e-3)
    config = IterationConfig(
        tol=min(cfg.tol, 1e-12),
        stopping=SUCCESSIVE_DIFFERENCE,
        workers=cfg.workers,
    )
    ops = ShallowOperators(mesh, basis, case.problem, dt)
    state0 = ops.interpolate(case.problem.exact, 0.0)
    st_it, tr_it, log = iterate_to_fixed_point(
        ops, config, u0=state0, t=dt, state_prev=state0
    )
    st_dir, tr_dir, _sys = direct_solve_shallow(
        mesh, basis, case.problem, dt, state0, t=dt
    )
    ok = True
    scale = ops.diff_norm(st_dir, ops.zero_state())
    rel = ops.diff_norm(st_it, st_dir) / max(scale, 1e-300)
    ok &= _check("iterate-vs-direct", rel <= 1e-8, f"relative L2 {rel:.3e}",
                 lines)
    j_it = shallow_flux_jump_residual(ops, st_it, tr_it)
    j_dir = shallow_flux_jump_residual(ops, st_dir, tr_dir)
    ok &= _check("flux-jump-iterate", j_it <= 1e-9, f"residual {j_it:.3e}",
                 lines)
    ok &= _check("flux-jump-direct", j_dir <= 1e-9, f"residual {j_dir:.3e}",
                 lines)
    mass0 = ops.total_mass(state0)
    mass1 = ops.total_mass(st_it)
    drift = abs(mass1 - mass0) / max(abs(mass0), 1e-300)
    ok &= _check("mass-conservation", drift <= 1e-11,
                 f"relative drift {drift:.3e}", lines)
    ok &= _check("iteration-converged", log.converged,
                 f"{log.iterations} iterations", lines)
    return ok


# -- entry point -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(
        prog="ehdg",
        description=(
            "Element-local fixed-point solver for hybridized DG transport "
            "and linearized shallow water problems."
        ),
    )
    parser.add_argument(
        "command", choices=("solve", "study", "tables", "verify"),
    )
    parser.add_argument(
        "overrides", nargs="*", metavar="key=value",
        help="configuration pairs; these override the config file",
    )
    parser.add_argument(
        "-c", "--config", default=None, metavar="FILE",
        help="key=value configuration file ('#' comments)",
    )
    return parser


_COMMANDS = {
    "solve": cmd_solve,
    "study": cmd_study,
    "tables": cmd_tables,
    "verify": cmd_verify,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = parse_config(args.command, args.config, args.overrides)
        return _COMMANDS[cfg.command](cfg)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except ConvergenceFailure as err:
        print(f"non-convergence: {err}", file=sys.stderr)
        return 2
    except VerificationFailure as err:
        print(f"verification failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
