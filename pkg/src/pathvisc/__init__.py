"""Pathwise viscosity solutions of ``du = F dt + sum_i H^i(Du, x) dW^i``.

Modules:
  rough_path: sampled geometric rough paths, their lifts and rough integrals.
  hamiltonians: Hamiltonian systems, model families and drift operators.
  characteristics: Hamiltonian characteristics along rough or smooth paths.
  local_solver: the local smooth solution operator ``S(t, t0)``.
  pde_solver: monotone splitting solver and explicit sub/super-solutions.
  perron_verify: test-function probes, envelopes, comparison and the bump.
  cli: configuration driven pipelines.
"""

from . import characteristics, grid, hamiltonians, local_solver, pde_solver, perron_verify, rough_path
from .errors import (
    ConfigError,
    FlowDivergence,
    HamiltonianError,
    HorizonExceeded,
    InversionError,
    MeshMismatch,
    NumericalAbort,
    PathError,
    PreconditionError,
    StepRestrictionError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FlowDivergence",
    "HamiltonianError",
    "HorizonExceeded",
    "InversionError",
    "MeshMismatch",
    "NumericalAbort",
    "PathError",
    "PreconditionError",
    "StepRestrictionError",
    "characteristics",
    "grid",
    "hamiltonians",
    "local_solver",
    "pde_solver",
    "perron_verify",
    "rough_path",
]
