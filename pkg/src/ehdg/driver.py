"""Fixed-point driver: element solves, trace rebuild, stopping tests.

One pass of the iteration has two phases separated by a barrier: first every
element solves its local system against the current trace buffer, then the
trace is rebuilt from the fresh element solutions into a second buffer and
the buffers swap. Element work is chunked in a fixed order, so norms and
results are identical for any worker count.

Stopping modes:
  error-difference      |  ||u_k - u_e|| - ||u_{k-1} - u_e||  | < tol
  successive-difference ||u_k - u_{k-1}|| < tol
  trace-residual        skeleton L2 of (trace_k - trace_{k-1}) < tol
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ERROR_DIFFERENCE = "error-difference"
SUCCESSIVE_DIFFERENCE = "successive-difference"
TRACE_RESIDUAL = "trace-residual"
STOPPING_MODES = (ERROR_DIFFERENCE, SUCCESSIVE_DIFFERENCE, TRACE_RESIDUAL)


class ConvergenceFailure(Exception):
    pass


@dataclass
class IterationConfig:
    tol: float = 1e-10
    stopping: str = ERROR_DIFFERENCE
    max_iters: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.stopping not in STOPPING_MODES:
            raise ValueError(f"unknown stopping mode {self.stopping!r}")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")

    def iteration_cap(self, mesh):
        return self.max_iters if self.max_iters is not None else 10 * mesh.n_el


@dataclass
class ConvergenceLog:
    stopping: str
    tol: float
    iterations: int = 0
    converged: bool = False
    errors: list = field(default_factory=list)      # vs exact, nan if unknown
    successive: list = field(default_factory=list)  # ||u_k - u_{k-1}||
    skeleton: list = field(default_factory=list)    # weighted skeleton norm

    def write_csv(self, stream):
        stream.write("iteration,error_vs_exact,successive_diff,skeleton_norm\n")
        for k in range(len(self.errors)):
            cells = [str(k + 1)]
            for seq in (self.errors, self.successive, self.skeleton):
                v = seq[k]
                cells.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else "%.17g" % v)
            stream.write(",".join(cells) + "\n")


def volume_l2(mesh, basis, u):
    vals = u @ basis.eval_vol.T
    return float(np.sqrt(mesh.jac * np.sum(basis.quad_w * vals * vals)))


def trace_diff_norm(mesh, basis, t1, t2):
    total = 0.0
    for a in range(mesh.dim):
        dq = (t1.data[a] - t2.data[a]) @ basis.face_eval.T
        total += mesh.face_jac[a] * np.sum(basis.face_quad_w * dq * dq)
    return float(np.sqrt(total))


def transport_error_eval(ops, t):
    if ops.problem.exact is None:
        return None
    mesh, basis = ops.mesh, ops.basis
    X = mesh.centers[:, None, :] + mesh.half * basis.quad_ref[None]
    ue = np.asarray(ops.problem.exact(X.reshape(-1, mesh.dim), t)).reshape(
        mesh.n_el, basis.n_q
    )

    def err(u):
        dv = u @ basis.eval_vol.T - ue
        return float(np.sqrt(mesh.jac * np.sum(basis.quad_w * dv * dv)))

    return err


def transport_skeleton_norm(ops, u):
    """|beta.n|-weighted skeleton norm of an element field, summed over all
    element boundaries (interior faces contribute from both sides)."""
    mesh, basis = ops.mesh, ops.basis
    total = 0.0
    for a in range(mesh.dim):
        for s in (0, 1):
            vals = u @ basis.face_restrict[(a, s)].T
            w = ops.abs_bn[a][ops.fidx[(a, s)]]
            total += mesh.face_jac[a] * np.sum(
                basis.face_quad_w * w * vals * vals
            )
    return float(np.sqrt(total))


def _metrics_of(ops, u):
    # transport operators carry the weighted skeleton norm; shallow carries
    # its own trace-energy norm
    if hasattr(ops, "skeleton_norm"):
        return ops.skeleton_norm(u)
    return transport_skeleton_norm(ops, u)


def _diff_norm(ops, u1, u2):
    if hasattr(ops, "diff_norm"):
        return ops.diff_norm(u1, u2)
    return volume_l2(ops.mesh, ops.basis, u1 - u2)


def _error_eval(ops, t):
    if hasattr(ops, "error_eval"):
        return ops.error_eval(t)
    return transport_error_eval(ops, t)


def _state_width(ops):
    return 3 * ops.n_p if hasattr(ops, "split") else ops.basis.n_p


def iterate_to_fixed_point(ops, config, u0=None, t=0.0, state_prev=None):
    """Run passes until the stopping test is satisfied.

    Returns (u, trace, log). The iteration count is the number of element
    solve passes performed, counting the pass whose stopping check fired.

    The error-difference test compares the errors of two computed iterates,
    so it cannot fire before the second pass; no error is assigned to the
    initial guess. The successive-difference and trace-residual tests
    compare iterate k against iterate k-1 with the initial guess standing
    in at k=1, so they can fire on the first pass.
    """
    mesh = ops.mesh
    n_dof = _state_width(ops)
    u = np.zeros((mesh.n_el, n_dof)) if u0 is None else np.array(u0)
    trace = ops.initial_trace(u, t)
    trace_next = ops.new_trace()
    u_next = np.empty_like(u)

    err = _error_eval(ops, t)
    if config.stopping == ERROR_DIFFERENCE and err is None:
        raise ValueError(
            "error-difference stopping needs an exact solution; "
            "use successive-difference or trace-residual"
        )
    log = ConvergenceLog(stopping=config.stopping, tol=config.tol)
    e_prev = float("nan")

    cap = config.iteration_cap(mesh)
    for k in range(1, cap + 1):
        rhs = ops.rhs(trace, t, state_prev)
        ops.solve_cells(rhs, out=u_next, workers=config.workers)
        ops.update_trace(u_next, trace_next, t)

        e_k = err(u_next) if err is not None else float("nan")
        succ = _diff_norm(ops, u_next, u)
        log.errors.append(e_k)
        log.successive.append(succ)
        log.skeleton.append(_metrics_of(ops, u_next))

        if config.stopping == ERROR_DIFFERENCE:
            crit = abs(e_k - e_prev)
        elif config.stopping == SUCCESSIVE_DIFFERENCE:
            crit = succ
        else:
            crit = trace_diff_norm(mesh, ops.basis, trace_next, trace)

        u, u_next = u_next, u
        trace, trace_next = trace_next, trace
        e_prev = e_k
        log.iterations = k
        if crit < config.tol:
            log.converged = True
            break
    return u, trace, log


def ehdg_solve_steady(ops, config, u0=None):
    """Steady solve; raises ConvergenceFailure if the cap is hit."""
    u, trace, log = iterate_to_fixed_point(ops, config, u0=u0, t=0.0)
    if not log.converged:
        raise ConvergenceFailure(
            f"no convergence in {log.iterations} iterations"
        )
    return u, trace, log


def ehdg_step_transient(ops, config, state, t_old):
    """One backward-Euler step from t_old, warm-started at the old state."""
    t_new = t_old + ops.dt
    u, trace, log = iterate_to_fixed_point(
        ops, config, u0=state, t=t_new, state_prev=state
    )
    return u, trace, log


def run_transient(ops, config, state0, n_steps, t0=0.0, raise_on_fail=True):
    """March n_steps; returns (state, per-step iteration counts, logs)."""
    state = state0
    counts, logs = [], []
    for m in range(n_steps):
        t_old = t0 + m * ops.dt
        state, _trace, log = ehdg_step_transient(ops, config, state, t_old)
        counts.append(log.iterations)
        logs.append(log)
        if raise_on_fail and not log.converged:
            raise ConvergenceFailure(f"step {m + 1} did not converge")
    return state, counts, logs


@dataclass
class RateFit:
    """Least-squares exponential decay fit over the pre-floor window."""

    rate: Optional[float]
    r_squared: Optional[float]
    n_points: int
    floor_index: Optional[int]
    defined: bool


def fit_exponential_rate(norms, floor_ratio=0.99, min_points=5):
    """Fit ln(norm) vs iteration up to the stagnation floor.

    The floor starts at the first index whose successive ratio exceeds
    floor_ratio; points from there on are excluded. Fewer than min_points
    usable points, or nonpositive values inside the window, give an
    undefined fit.
    """
    v = np.asarray([float(x) for x in norms])
    floor_index = None
    for k in range(1, len(v)):
        if not (v[k - 1] > 0) or not np.isfinite(v[k]):
            floor_index = k - 1
            break
        if v[k] > floor_ratio * v[k - 1]:
            floor_index = k - 1
            break
    window = v[: floor_index + 1] if floor_index is not None else v
    if len(window) < min_points or np.any(window <= 0):
        return RateFit(
            rate=None,
            r_squared=None,
            n_points=len(window),
            floor_index=floor_index,
            defined=False,
        )
    k = np.arange(len(window), dtype=float)
    y = np.log(window)
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(
        rate=float(slope),
        r_squared=r2,
        n_points=len(window),
        floor_index=floor_index,
        defined=True,
    )
