"""Asynchronous model-based search over neural-network architectures and
training hyperparameters for X-ray data-analysis surrogates."""

__version__ = "0.1.0"

from .objectives import ObjectiveSpec, chebyshev, sample_weights
from .pareto import ParetoArchive, dominates, hypervolume
from .search import AcquisitionParams, SearchBudget, SearchResult, Trial, run_search
from .space import Configuration, Dimension, SearchSpace, builtin_space, load_space

__all__ = [
    "AcquisitionParams",
    "Configuration",
    "Dimension",
    "ObjectiveSpec",
    "ParetoArchive",
    "SearchBudget",
    "SearchResult",
    "SearchSpace",
    "Trial",
    "__version__",
    "builtin_space",
    "chebyshev",
    "dominates",
    "hypervolume",
    "load_space",
    "run_search",
    "sample_weights",
]
