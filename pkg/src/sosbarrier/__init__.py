"""Verification and synthesis of control barrier functions and invariant
sets via sum-of-squares certificates, with an independent sampling/LP oracle."""

__version__ = "0.1.0"

from .poly import Monomial, Polynomial, PolyMatrix, PolyVector, parse_poly
from .model import (
    ControlAffineSystem,
    HocbfChain,
    InputPolytope,
    LiftedSystem,
    SemiAlgebraicSet,
    build_hocbf_chain,
    build_system,
    lift_trig,
)

__all__ = [
    "Monomial",
    "Polynomial",
    "PolyMatrix",
    "PolyVector",
    "parse_poly",
    "ControlAffineSystem",
    "HocbfChain",
    "InputPolytope",
    "LiftedSystem",
    "SemiAlgebraicSet",
    "build_hocbf_chain",
    "build_system",
    "lift_trig",
]
