"""Verification and analysis of driven cofactor systems.

The usual entry points are :func:`load_spec` for a JSON system description,
:func:`verify_driven_structure` and the :class:`IntegralFamily` of quadratic
integrals, :func:`integrate` for trajectories and the certificates in
:mod:`cofactor_lab.separation`.
"""

from .cofactor_chain import (ChainError, CofactorChain, DependencePatternError, SingularBlockError,
                             chain_identity_residuals, delta_by_charpoly, delta_by_interpolation)
from .dynamics import (IntegrationControl, NumericAbort, SystemSpec, Trajectory, integrate,
                       jacobi_endomorphism, verify_driven_structure)
from .expr_core import Expr, diff_expr, eval_expr, parse_expr, to_string
from .geometry import MetricField, OneFormField, TensorField11, cofactor, sckt_residual
from .hamiltonian import IntegralFamily, build_family, darboux_residual, involutivity
from .specfile import SpecError, load_fixture, load_spec

__version__ = "0.1.0"

__all__ = [
    "ChainError", "CofactorChain", "DependencePatternError", "Expr", "IntegralFamily",
    "IntegrationControl", "MetricField", "NumericAbort", "OneFormField", "SingularBlockError",
    "SpecError", "SystemSpec", "TensorField11", "Trajectory", "build_family",
    "chain_identity_residuals", "cofactor", "darboux_residual", "delta_by_charpoly",
    "delta_by_interpolation", "diff_expr", "eval_expr", "integrate", "involutivity",
    "jacobi_endomorphism", "load_fixture", "load_spec", "parse_expr", "sckt_residual",
    "to_string", "verify_driven_structure",
]
