"""Numerical laboratory for quantitative stochastic homogenization.

Solves -div(a grad u) with random uniformly elliptic coefficients on
triadic lattice cubes, and measures the coarse-graining, corrector,
fluctuation, and diffusion statistics that quantify homogenization.
"""

__version__ = "0.1.0"

from .lattice import GridSpec, TriadicCube  # noqa: F401
from .fields import (  # noqa: F401
    CoefficientField,
    GaussianFieldParams,
    make_constant,
    make_laminate,
    sample_checkerboard,
    sample_gaussian_field,
)
from .solver import SolveOptions, Solution  # noqa: F401
