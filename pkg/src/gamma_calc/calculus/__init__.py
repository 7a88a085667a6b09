"""First- and second-order calculus, Hodge theory, Ricci bounds and flows."""

from .first_order import CotangentBundle, build_cotangent, differential, divergence
from .flows import lagrangian_flow
from .hodge import HodgeComplex, harmonic_basis, hodge_decompose
from .ricci import ricci, ricci_n
from .second_order import covariant_derivative, curvature_estimate, hessian

__all__ = [
    "CotangentBundle",
    "HodgeComplex",
    "build_cotangent",
    "covariant_derivative",
    "curvature_estimate",
    "differential",
    "divergence",
    "harmonic_basis",
    "hessian",
    "hodge_decompose",
    "lagrangian_flow",
    "ricci",
    "ricci_n",
]
