"""Self-contained dense convex solvers with certified bounds."""

from .ipm import solve, solve_lp, solve_sdp
from .problem import ConicProblem, Solution, SolveCertificate
from .relent import RelativeEntropyObjective, minimize_relative_entropy

__all__ = [
    "ConicProblem",
    "Solution",
    "SolveCertificate",
    "solve",
    "solve_lp",
    "solve_sdp",
    "RelativeEntropyObjective",
    "minimize_relative_entropy",
]
