"""Element-local upwind HDG operators for linear transport.

The local statement on an element K, given a skeleton trace field uhat, is

    -(u, div(beta v))_K + <beta.n u + |beta.n| (u - uhat), v>_dK = (f, v)_K

for all test functions v in the element space. The fixed-point pass solves
this independently on every element, then rebuilds the trace from the new
element solutions (upwind average on interior faces, boundary rules on the
domain boundary). A transient step adds backward-Euler mass terms on both
sides.

Face trace data lives at face GLL nodes; the upwind average is formed
pointwise at face quadrature points and L2-projected back onto the face
polynomial space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .basis import TensorBasis
from .mesh import (
    CHARACTERISTIC,
    INFLOW,
    OUTFLOW,
    StructuredMesh,
    classify_boundary_face,
)

ASSEMBLY_CHUNK = 256


class AssemblyError(Exception):
    pass


@dataclass
class TransportProblem:
    """Linear transport beta . grad(u) = f (or u_t + div(beta u) = f).

    Field callables are vectorized over points: velocity maps (N, d) ->
    (N, d); forcing/inflow/exact map (points, t) -> (N,). forcing None means
    zero. div_velocity None declares the field divergence-free; otherwise it
    maps (N, d) -> (N,). constant_velocity enables sharing one local
    operator across all elements of a uniform mesh.
    """

    dim: int
    velocity: Callable
    forcing: Optional[Callable] = None
    inflow: Optional[Callable] = None
    exact: Optional[Callable] = None
    div_velocity: Optional[Callable] = None
    constant_velocity: bool = False
    name: str = "transport"


@dataclass
class TraceField:
    """Single-valued skeleton data, one nodal array per face-normal axis.

    data[a] has shape (n_faces_axis, n_face) over all planes of axis a,
    boundary planes included.
    """

    data: list

    @classmethod
    def zeros(cls, mesh, basis):
        return cls(
            data=[
                np.zeros((mesh.n_faces_axis[a], basis.n_face))
                for a in range(mesh.dim)
            ]
        )

    def copy(self):
        return TraceField(data=[d.copy() for d in self.data])

    def fill(self, value):
        for d in self.data:
            d.fill(value)


class TransportOperators:
    """Assembled element-local operators plus face data for one problem.

    The factorized local matrices are held as explicit inverses formed by
    row-pivoted LU (numpy.linalg.inv), stacked for batched application. When
    the problem declares a constant velocity on a uniform mesh, a single
    operator is shared by all elements.
    """

    def __init__(self, mesh, basis, problem, dt=None, condense_outflow=False):
        self.mesh = mesh
        self.basis = basis
        self.problem = problem
        self.dt = dt
        self.condense_outflow = condense_outflow
        d = mesh.dim
        if problem.dim != d:
            raise AssemblyError("problem/mesh dimension mismatch")

        self.mass_phys = mesh.jac * basis.mass_ref
        self.load_vec = mesh.jac * (basis.eval_vol.T * basis.quad_w)

        # face geometry and velocity data, per normal axis
        self.face_pts = []
        self.bn = []       # beta . e_a at face quadrature points
        self.abs_bn = []
        self.sgn = []
        for a in range(d):
            pts = mesh.face_quad_points(a, basis)
            v = problem.velocity(pts.reshape(-1, d)).reshape(pts.shape)
            self.face_pts.append(pts)
            self.bn.append(v[:, :, a].copy())
            self.abs_bn.append(np.abs(self.bn[a]))
            self.sgn.append(np.sign(self.bn[a]))

        # element -> face index maps and element-side upwind weights
        self.fidx = {}
        self.lift_w = {}
        for a in range(d):
            for s in (0, 1):
                fi = mesh.face_index(a, s)
                self.fidx[(a, s)] = fi
                self.lift_w[(a, s)] = (
                    mesh.face_jac[a] * basis.face_quad_w * self.abs_bn[a][fi]
                )

        # boundary classification
        self.inflow_blocks = []       # (axis, face_ids, elements, side)
        self.outflow_blocks = []      # (axis, face_ids, elements, side)
        self.boundary_labels = {}
        for a in range(d):
            for side in (0, 1):
                fid, els, osign = mesh.boundary_faces(a, side)
                labels = [
                    classify_boundary_face(osign * self.bn[a][f]) for f in fid
                ]
                first = labels[0]
                if any(l != first for l in labels):
                    by = {}
                    for f, l in zip(fid, labels):
                        by.setdefault(l, []).append(f)
                    self.boundary_labels[(a, side)] = by
                else:
                    self.boundary_labels[(a, side)] = {first: list(fid)}
                inf_ids = [f for f, l in zip(fid, labels) if l == INFLOW]
                out_ids = [
                    (f, e)
                    for f, e, l in zip(fid, els, labels)
                    if l in (OUTFLOW, CHARACTERISTIC)
                ]
                if inf_ids:
                    sel = np.array([f in set(inf_ids) for f in fid])
                    self.inflow_blocks.append(
                        (a, np.asarray(inf_ids), els[sel], side)
                    )
                if out_ids:
                    self.outflow_blocks.append(
                        (
                            a,
                            np.array([f for f, _ in out_ids]),
                            np.array([e for _, e in out_ids]),
                            side,
                        )
                    )
        if problem.inflow is None and self.inflow_blocks:
            raise AssemblyError("problem has inflow faces but no inflow data")

        if condense_outflow:
            # the outflow trace is the interior solution itself; its
            # stabilization lives in the matrix, not in the lift
            for a, fid, els, side in self.outflow_blocks:
                self.lift_w[(a, side)][els] = 0.0

        self.shared = bool(problem.constant_velocity) and not condense_outflow
        self._assemble_inverses()
        self._load_cache = {}

    # -- assembly -----------------------------------------------------------

    def element_matrix(self, elements):
        """Dense local matrices A_K for the given element indices."""
        mesh, basis, prob = self.mesh, self.basis, self.problem
        d = mesh.dim
        els = np.asarray(elements)
        X = mesh.centers[els][:, None, :] + mesh.half * basis.quad_ref[None]
        V = prob.velocity(X.reshape(-1, d)).reshape(len(els), basis.n_q, d)
        n_p = basis.n_p
        A = np.zeros((len(els), n_p, n_p))
        for a in range(d):
            wb = basis.quad_w * V[:, :, a]
            tmp = wb[:, :, None] * basis.eval_vol[None]
            A -= (mesh.jac / mesh.half[a]) * np.matmul(
                basis.eval_grad[a].T[None], tmp
            )
        if prob.div_velocity is not None:
            dv = prob.div_velocity(X.reshape(-1, d)).reshape(len(els), basis.n_q)
            wd = basis.quad_w * dv
            A -= mesh.jac * np.matmul(
                basis.eval_vol.T[None], wd[:, :, None] * basis.eval_vol[None]
            )
        for a in range(d):
            for s in (0, 1):
                bn_el = self.bn[a][self.fidx[(a, s)][els]]
                if s == 0:
                    bn_el = -bn_el
                w = bn_el + np.abs(bn_el)
                if self.condense_outflow:
                    # on outflow boundary faces the trace equals the interior
                    # solution, so the stabilization folds into beta.n u
                    w = w.copy()
                    self._strip_outflow_weight(a, s, els, bn_el, w)
                wf = mesh.face_jac[a] * basis.face_quad_w * w
                R = basis.face_restrict[(a, s)]
                A += np.matmul(R.T[None], wf[:, :, None] * R[None])
        if self.dt is not None:
            A += self.mass_phys[None] / self.dt
        return A

    def _strip_outflow_weight(self, a, s, els, bn_el, w):
        dom_side = s  # element low face sits on the domain low plane etc.
        for ax, fid, bels, side in self.outflow_blocks:
            if ax != a or side != dom_side:
                continue
            sel = np.isin(els, bels)
            if np.any(sel):
                w[sel] = bn_el[sel]

    def _assemble_inverses(self):
        n_el = 1 if self.shared else self.mesh.n_el
        n_p = self.basis.n_p
        self.a_inv = np.empty((n_el, n_p, n_p))
        for start in range(0, n_el, ASSEMBLY_CHUNK):
            els = np.arange(start, min(start + ASSEMBLY_CHUNK, n_el))
            A = self.element_matrix(els)
            try:
                inv = np.linalg.inv(A)
            except np.linalg.LinAlgError as err:
                raise AssemblyError(f"singular local operator: {err}") from err
            if not np.all(np.isfinite(inv)):
                raise AssemblyError("non-finite local operator inverse")
            self.a_inv[els] = inv

    # -- per-iteration pieces ------------------------------------------------

    def load_vector(self, t=0.0):
        """(f, v)_K load for every element, cached per time value."""
        if self.problem.forcing is None:
            return None
        hit = self._load_cache.get(t)
        if hit is not None:
            return hit
        mesh, basis = self.mesh, self.basis
        X = mesh.centers[:, None, :] + mesh.half * basis.quad_ref[None]
        fv = self.problem.forcing(X.reshape(-1, mesh.dim), t)
        fv = np.asarray(fv).reshape(mesh.n_el, basis.n_q)
        load = fv @ self.load_vec.T
        self._load_cache = {t: load}
        return load

    def inflow_trace(self, trace, t=0.0):
        """Write the L2 projection of the inflow data onto inflow faces."""
        basis = self.basis
        for a, fid, _els, _side in self.inflow_blocks:
            pts = self.face_pts[a][fid]
            g = self.problem.inflow(pts.reshape(-1, self.mesh.dim), t)
            g = np.asarray(g).reshape(len(fid), basis.n_fq)
            trace.data[a][fid] = g @ basis.face_proj.T

    def rhs(self, trace, t=0.0, state_prev=None):
        """Right-hand sides of every local solve for a given trace field."""
        basis = self.basis
        out = np.zeros((self.mesh.n_el, basis.n_p))
        load = self.load_vector(t)
        if load is not None:
            out += load
        if self.dt is not None:
            if state_prev is None:
                raise ValueError("transient rhs needs the previous state")
            out += (state_prev @ self.mass_phys.T) / self.dt
        for a in range(self.mesh.dim):
            for s in (0, 1):
                uh_q = trace.data[a][self.fidx[(a, s)]] @ basis.face_eval.T
                out += (self.lift_w[(a, s)] * uh_q) @ basis.face_restrict[(a, s)]
        return out

    def solve_cells(self, rhs, out=None, workers=1):
        """Batched application of the factorized local operators."""
        if out is None:
            out = np.empty_like(rhs)
        if self.shared:
            np.matmul(rhs, self.a_inv[0].T, out=out)
            return out
        chunks = [
            (s, min(s + ASSEMBLY_CHUNK, self.mesh.n_el))
            for s in range(0, self.mesh.n_el, ASSEMBLY_CHUNK)
        ]

        def run(chunk):
            s, e = chunk
            np.matmul(
                self.a_inv[s:e], rhs[s:e, :, None], out=out[s:e, :, None]
            )

        if workers > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(run, chunks))
        else:
            for c in chunks:
                run(c)
        return out

    def update_trace(self, u, trace_out, t=0.0):
        """Rebuild the skeleton trace from element solutions.

        Interior faces take the upwind average, formed pointwise at the face
        quadrature points and projected onto the face space. Inflow faces
        take the boundary data projection; outflow and characteristic faces
        copy the interior trace.
        """
        mesh, basis = self.mesh, self.basis
        for a in range(mesh.dim):
            fid, minus, plus = self._int_faces[a]
            um = u[minus] @ basis.face_restrict[(a, 1)].T
            up = u[plus] @ basis.face_restrict[(a, 0)].T
            s = self.sgn[a][fid]
            uh = 0.5 * ((um + up) + s * (um - up))
            trace_out.data[a][fid] = uh @ basis.face_proj.T
        self.inflow_trace(trace_out, t)
        for a, fid, els, side in self.outflow_blocks:
            nid = basis.face_node_ids[(a, side)]
            trace_out.data[a][fid] = u[els][:, nid]

    @property
    def _int_faces(self):
        cached = getattr(self, "_int_faces_cache", None)
        if cached is None:
            cached = [self.mesh.interior_faces(a) for a in range(self.mesh.dim)]
            self._int_faces_cache = cached
        return cached

    def new_trace(self):
        return TraceField.zeros(self.mesh, self.basis)

    def initial_trace(self, u, t=0.0):
        tr = self.new_trace()
        self.update_trace(u, tr, t)
        return tr

    def interpolate_exact(self, t=0.0):
        """Nodal interpolant of the exact solution."""
        if self.problem.exact is None:
            raise ValueError("problem has no exact solution")
        mesh, basis = self.mesh, self.basis
        X = mesh.centers[:, None, :] + mesh.half * basis.ref_nodes[None]
        vals = self.problem.exact(X.reshape(-1, mesh.dim), t)
        return np.asarray(vals).reshape(mesh.n_el, basis.n_p)


# -- single-element views, mainly for tests and the direct-solve oracle ------


@dataclass
class ElementOperatorTransport:
    element: int
    matrix: np.ndarray
    inverse: np.ndarray

    def solve(self, rhs):
        return self.inverse @ rhs


def assemble_local_transport(mesh, basis, problem, element, dt=None,
                             condense_outflow=False):
    ops = TransportOperators(
        mesh, basis, problem, dt=dt, condense_outflow=condense_outflow
    )
    return element_operator(ops, element)


def element_operator(ops, element):
    A = ops.element_matrix(np.array([element]))[0]
    inv = ops.a_inv[0] if ops.shared else ops.a_inv[element]
    return ElementOperatorTransport(element=element, matrix=A, inverse=inv)
