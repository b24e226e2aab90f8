"""Symbolic-character-aware geometry problem solving at desk scale."""

from .config import RunConfig, load_config
from .corpus import Problem, load_corpus, synthetic_corpus
from .executor import adjudicate, execute, parse_program
from .model import GeoSolver, evaluate, train_solver

__all__ = [
    "GeoSolver", "Problem", "RunConfig", "adjudicate", "evaluate", "execute", "load_config",
    "load_corpus", "parse_program", "synthetic_corpus", "train_solver",
]
__version__ = "0.1.0"
