"""Stochastic particle solver for moderately high-dimensional PDEs.

Signed weighted particles evolve under an exponential-Euler weak scheme;
solutions are reconstructed piecewise-constantly on a sparse virtual uniform
grid that stores only occupied cells.
"""

__version__ = "0.1.0"

from .core import (
    GridSpec,
    Particle,
    ParticleEnsemble,
    ProblemSpec,
    RngStream,
    weak_pairing,
)
from .evolution import NonlinearTerm, RunResult, run
from .vug import VugMap, build_solution_map

__all__ = [
    "GridSpec",
    "Particle",
    "ParticleEnsemble",
    "ProblemSpec",
    "RngStream",
    "weak_pairing",
    "NonlinearTerm",
    "RunResult",
    "run",
    "VugMap",
    "build_solution_map",
    "__version__",
]
