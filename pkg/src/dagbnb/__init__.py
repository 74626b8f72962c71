"""Exact and near-exact DAG structure learning for linear Gaussian SEMs.

Branch-and-bound over arc indicators of an l0-penalized least-squares score,
with big-M and perspective relaxations, lazy cycle cuts and a gap-based early
stopping rule.  A dynamic-programming oracle certifies small instances.
"""

from importlib.metadata import PackageNotFoundError, version as _version

from .bnb import BranchAndBound, SolveReport, StopRule, early_stop_threshold, solve
from .datagen import GenConfig, GeneratedInstance, make_instance
from .formulation import ProblemSpec, build_problem, select_delta_eig, select_delta_greedy
from .graphs import DirectedGraph, UndirectedGraph, find_cycle, moralize, shd
from .oracle import enumerate_dags, exact_solve
from .score import GramData, Penalty, bic_lambda, score

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0+local"

__all__ = [
    "BranchAndBound", "SolveReport", "StopRule", "early_stop_threshold", "solve",
    "GenConfig", "GeneratedInstance", "make_instance",
    "ProblemSpec", "build_problem", "select_delta_eig", "select_delta_greedy",
    "DirectedGraph", "UndirectedGraph", "find_cycle", "moralize", "shd",
    "enumerate_dags", "exact_solve",
    "GramData", "Penalty", "bic_lambda", "score",
]
