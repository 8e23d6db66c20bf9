"""Forward-mode input jets plus reverse-mode parameter gradients."""

from .jet import (ADScalar, Jet, JetSpace, ORDER2, STREAM_SPACE, VELOCITY_SPACE, concatenate,
                  cos, exp, lift_input, lift_points, reciprocal, sin, square, stack, tanh, value_of)
from .quantum import circuit_expect_ad, parameter_shift_jacobian
from .tape import Tape, Var, backward

__all__ = [
    "ADScalar", "Jet", "JetSpace", "ORDER2", "STREAM_SPACE", "VELOCITY_SPACE", "Tape", "Var",
    "backward", "circuit_expect_ad", "concatenate", "cos", "exp", "lift_input", "lift_points",
    "parameter_shift_jacobian", "reciprocal", "sin", "square", "stack", "tanh", "value_of",
]
