"""Exponentially convergent element-local fixed-point solvers for
hybridized DG transport and linearized shallow water discretizations."""

from .basis import TensorBasis, gauss_quadrature, gll_nodes
from .driver import (
    ERROR_DIFFERENCE,
    STOPPING_MODES,
    SUCCESSIVE_DIFFERENCE,
    TRACE_RESIDUAL,
    ConvergenceFailure,
    ConvergenceLog,
    IterationConfig,
    RateFit,
    ehdg_solve_steady,
    ehdg_step_transient,
    fit_exponential_rate,
    iterate_to_fixed_point,
    run_transient,
    transport_error_eval,
    volume_l2,
)
from .mesh import MeshError, StructuredMesh, build_mesh
from .oracle import (
    GlobalTraceSystem,
    OracleSizeError,
    assemble_global_trace_system,
    assemble_shallow_trace_system,
    direct_solve_shallow,
    direct_solve_transport,
    flux_jump_residual,
    shallow_flux_jump_residual,
)
from .problems import ProblemCase, case_identifiers, catalog, convergence_study
from .shallow import (
    ContractionReport,
    ShallowOperators,
    ShallowProblem,
    contraction_constants,
)
from .transport import (
    AssemblyError,
    TraceField,
    TransportOperators,
    TransportProblem,
)

__all__ = [
    "AssemblyError",
    "ContractionReport",
    "ConvergenceFailure",
    "ConvergenceLog",
    "ERROR_DIFFERENCE",
    "GlobalTraceSystem",
    "IterationConfig",
    "MeshError",
    "OracleSizeError",
    "ProblemCase",
    "RateFit",
    "STOPPING_MODES",
    "SUCCESSIVE_DIFFERENCE",
    "ShallowOperators",
    "ShallowProblem",
    "StructuredMesh",
    "TRACE_RESIDUAL",
    "TensorBasis",
    "TraceField",
    "TransportOperators",
    "TransportProblem",
    "assemble_global_trace_system",
    "assemble_shallow_trace_system",
    "build_mesh",
    "case_identifiers",
    "catalog",
    "contraction_constants",
    "convergence_study",
    "direct_solve_shallow",
    "direct_solve_transport",
    "ehdg_solve_steady",
    "ehdg_step_transient",
    "fit_exponential_rate",
    "flux_jump_residual",
    "gauss_quadrature",
    "gll_nodes",
    "iterate_to_fixed_point",
    "run_transient",
    "shallow_flux_jump_residual",
    "transport_error_eval",
    "volume_l2",
]

__version__ = "0.1.0"
