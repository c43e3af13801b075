"""Entropic optimal transport by centralized and federated Sinkhorn scaling."""
from .core import Problem, SolveResult, gibbs_kernel, solve_centralized
from .stop import StopPolicy, Verdict

__version__ = "0.1.0"

__all__ = ["Problem", "SolveResult", "StopPolicy", "Verdict", "gibbs_kernel", "solve_centralized"]
