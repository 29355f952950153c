"""Solver toolkit for nonconvex two-stage stochastic programs with
polynomial data.

The pipeline: build a polynomial lower approximation of the recourse
function through semidefinite relaxations of a nonnegativity cone, solve
the resulting surrogate first-stage problem globally through the moment
hierarchy, and iterate with measure updates until the certified lower
bound meets the sampled upper bound.
"""

__version__ = "0.1.0"

from .polynomials import MonomialBasis, Polynomial, VariableSpace  # noqa: F401
