"""Neural logic analogy solver for letter-string analogies."""

from .logic import AnalogyProblem, parse_problem
from .model import ModelConfig, NoanModel
from .train import RankedAnswers, TrainConfig, solve

__all__ = ["AnalogyProblem", "parse_problem", "ModelConfig", "NoanModel",
           "RankedAnswers", "TrainConfig", "solve"]
