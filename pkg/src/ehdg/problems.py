"""Benchmark problem catalog.

Five fixed cases: two steady 2D transports (one smooth manufactured
solution, one with discontinuous inflow data), a steady 3D transport, a
shallow-water standing wave in a closed basin, and a transient 3D Gaussian
advected along the cube diagonal. Identifiers are the CLI vocabulary.

All field callables take points of shape (N, dim) plus a time and
broadcast over N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import TensorBasis
from .driver import (
    IterationConfig,
    ehdg_solve_steady,
    run_transient,
    transport_error_eval,
)
from .mesh import build_mesh
from .shallow import ShallowOperators, ShallowProblem
from .transport import TransportOperators, TransportProblem

PI = math.pi


@dataclass(frozen=True)
class ProblemCase:
    identifier: str
    dim: int
    kind: str  # "transport" or "shallow"
    bounds: tuple
    problem: object
    dt_default: float | None = None
    n_steps_default: int | None = None
    description: str = ""


def _smooth2d():
    def beta(pts):
        return np.stack([pts[:, 1], pts[:, 0]], axis=1)

    def exact(pts, t=0.0):
        return (1.0 / PI) * np.sin(PI * pts[:, 0]) * np.cos(PI * pts[:, 1])

    def forcing(pts, t=0.0):
        x, y = pts[:, 0], pts[:, 1]
        return (
            y * np.cos(PI * x) * np.cos(PI * y)
            - x * np.sin(PI * x) * np.sin(PI * y)
        )

    problem = TransportProblem(
        dim=2, velocity=beta, forcing=forcing, inflow=exact, exact=exact,
        name="transport2d-smooth",
    )
    return ProblemCase(
        identifier="transport2d-smooth", dim=2, kind="transport",
        bounds=((0.0, 1.0), (0.0, 1.0)), problem=problem,
        description="steady rotating-velocity transport, smooth solution",
    )


def _discontinuous2d():
    def beta(pts):
        return np.stack(
            [1.0 + np.sin(0.5 * PI * pts[:, 1]), np.full(len(pts), 2.0)],
            axis=1,
        )

    def inflow(pts, t=0.0):
        x = pts[:, 0]
        hump = np.sin(PI * x) ** 6
        return np.where(x == 0.0, 1.0, np.where(x <= 1.0, hump, 0.0))

    problem = TransportProblem(
        dim=2, velocity=beta, inflow=inflow,
        name="transport2d-discontinuous",
    )
    return ProblemCase(
        identifier="transport2d-discontinuous", dim=2, kind="transport",
        bounds=((0.0, 2.0), (0.0, 2.0)), problem=problem,
        description="steady transport with discontinuous inflow data",
    )


def _steady3d():
    def beta(pts):
        return np.stack([pts[:, 2], pts[:, 0], pts[:, 1]], axis=1)

    def exact(pts, t=0.0):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        return (1.0 / PI) * np.sin(PI * x) * np.cos(PI * y) * np.sin(PI * z)

    def forcing(pts, t=0.0):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        sx, cx = np.sin(PI * x), np.cos(PI * x)
        sy, cy = np.sin(PI * y), np.cos(PI * y)
        sz, cz = np.sin(PI * z), np.cos(PI * z)
        return z * cx * cy * sz - x * sx * sy * sz + y * sx * cy * cz

    problem = TransportProblem(
        dim=3, velocity=beta, forcing=forcing, inflow=exact, exact=exact,
        name="transport3d-steady",
    )
    return ProblemCase(
        identifier="transport3d-steady", dim=3, kind="transport",
        bounds=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), problem=problem,
        description="steady 3D transport, smooth manufactured solution",
    )


def _standing_wave():
    omega = math.sqrt(2.0) * PI

    def exact(pts, t=0.0):
        x, y = pts[:, 0], pts[:, 1]
        cx, sx = np.cos(PI * x), np.sin(PI * x)
        cy, sy = np.cos(PI * y), np.sin(PI * y)
        phi = cx * cy * np.cos(omega * t)
        amp = np.sin(omega * t) / math.sqrt(2.0)
        return np.stack([phi, sx * cy * amp, cx * sy * amp], axis=1)

    problem = ShallowProblem(
        phi_mean=1.0, exact=exact, name="shallow-standing-wave",
    )
    return ProblemCase(
        identifier="shallow-standing-wave", dim=2, kind="shallow",
        bounds=((0.0, 1.0), (0.0, 1.0)), problem=problem,
        dt_default=1e-6, n_steps_default=100,
        description="linear standing wave in a closed square basin",
    )


def _gaussian3d():
    speed = 0.2

    def beta(pts):
        return np.full((len(pts), 3), speed)

    def exact(pts, t=0.0):
        c = speed * t
        r2 = np.sum((pts - c) ** 2, axis=1)
        return np.exp(-5.0 * r2)

    problem = TransportProblem(
        dim=3, velocity=beta, inflow=exact, exact=exact,
        constant_velocity=True, name="transport3d-gaussian",
    )
    return ProblemCase(
        identifier="transport3d-gaussian", dim=3, kind="transport",
        bounds=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), problem=problem,
        dt_default=0.01, n_steps_default=240,
        description="transient Gaussian advected along the cube diagonal",
    )


_CASES = {
    c.identifier: c
    for c in (
        _smooth2d(),
        _discontinuous2d(),
        _steady3d(),
        _standing_wave(),
        _gaussian3d(),
    )
}


def case_identifiers():
    return tuple(_CASES)


def catalog(identifier):
    try:
        return _CASES[identifier]
    except KeyError:
        known = ", ".join(_CASES)
        raise KeyError(f"unknown case {identifier!r} (known: {known})") from None


@dataclass
class StudyRow:
    nel: int
    p: int
    h: float
    error: float
    order: float  # nan on the coarsest mesh of its p-series
    iterations: int


def convergence_study(case, nel_list, p_list, config=None, dt=None,
                      n_steps=None):
    """L2 errors, observed orders, and iteration counts over a mesh sweep.

    Steady cases solve once per mesh; transient cases march n_steps of dt
    and report the final-time error with the summed iteration count.
    """
    if getattr(case.problem, "exact", None) is None:
        raise ValueError(f"case {case.identifier} has no exact solution")
    config = config or IterationConfig()
    rows = []
    for p in p_list:
        prev = None
        for nel in nel_list:
            err, iters, h = _study_point(case, nel, p, config, dt, n_steps)
            order = math.nan
            if prev is not None:
                order = math.log(prev[0] / err) / math.log(prev[1] / h)
            rows.append(StudyRow(nel=nel, p=p, h=h, error=err,
                                 order=order, iterations=iters))
            prev = (err, h)
    return rows


def _study_point(case, nel, p, config, dt, n_steps):
    mesh = build_mesh(case.dim, nel, case.bounds)
    basis = TensorBasis(case.dim, p)
    if case.kind == "shallow":
        dt = dt if dt is not None else case.dt_default
        n_steps = n_steps if n_steps is not None else case.n_steps_default
        ops = ShallowOperators(mesh, basis, case.problem, dt)
        state = ops.interpolate(case.problem.exact, 0.0)
        state, counts, _ = run_transient(ops, config, state, n_steps)
        err = ops.error_eval(n_steps * dt)(state)
        return err, int(sum(counts)), mesh.h_max
    if dt is not None or case.dt_default is not None:
        dt = dt if dt is not None else case.dt_default
        n_steps = n_steps if n_steps is not None else case.n_steps_default
        ops = TransportOperators(mesh, basis, case.problem, dt=dt)
        state = ops.interpolate_exact(0.0)
        state, counts, _ = run_transient(ops, config, state, n_steps)
        err = transport_error_eval(ops, n_steps * dt)(state)
        return err, int(sum(counts)), mesh.h_max
    ops = TransportOperators(mesh, basis, case.problem)
    u, trace, log = ehdg_solve_steady(ops, config)
    err = transport_error_eval(ops, 0.0)(u)
    return err, log.iterations, mesh.h_max
