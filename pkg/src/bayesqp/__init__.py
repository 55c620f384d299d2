"""BayeSQP: sequential quadratic programming on Gaussian-process surrogates."""

from bayesqp._backend import BACKEND
from bayesqp.driver import Problem, RunConfig, RunTrace, random_search, run
from bayesqp.problems import make_problem

__all__ = ["BACKEND", "Problem", "RunConfig", "RunTrace", "make_problem", "random_search", "run"]
__version__ = "0.1.0"
