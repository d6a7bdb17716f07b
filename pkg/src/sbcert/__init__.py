"""Stochastic barrier certificates for discrete-time polynomial systems with moving obstacles."""

from .polyalg import GaussianNoise, Monomial, Polynomial, coefficient_vector, gaussian_expectation, parse_polynomial, poly_compose, poly_eval
from .sdp import SdpProblem, SdpSolution, solve_sdp
from .sos import SemiAlgebraicSet, SosAssertion, SosProgram, assert_nonneg_on_set, gram_parameterize, monomial_basis
from .systems import ObstacleSpec, SafetyInstance, StochasticSystem, builtin_system, load_instance, obstacle_trajectory, unsafe_set_at_time
from .certify import (
    Certificate,
    SafetyBound,
    build_meta_system,
    check_certificate,
    safety_bound,
    synth_meta,
    synth_time_invariant,
    synth_time_varying,
    synthesize,
)

__all__ = [
    "Certificate", "GaussianNoise", "Monomial", "ObstacleSpec", "Polynomial", "SafetyBound", "SafetyInstance",
    "SdpProblem", "SdpSolution", "SemiAlgebraicSet", "SosAssertion", "SosProgram", "StochasticSystem",
    "assert_nonneg_on_set", "build_meta_system", "builtin_system", "check_certificate", "coefficient_vector",
    "gaussian_expectation", "gram_parameterize", "load_instance", "monomial_basis", "obstacle_trajectory",
    "parse_polynomial", "poly_compose", "poly_eval", "safety_bound", "solve_sdp", "synth_meta",
    "synth_time_invariant", "synth_time_varying", "synthesize", "unsafe_set_at_time",
]

__version__ = "0.1.0"
