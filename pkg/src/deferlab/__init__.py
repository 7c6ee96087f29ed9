"""Learning-to-defer surrogates, synthetic suites with known Bayes rules, and
geometry diagnostics for linear models."""

from .bayes import Action, GroundTruth, bayes_action, exact_regret
from .evaluation import Metrics, evaluate, route, route_flat, transfer_constant
from .suites import SuiteSpec, generate, read_dataset, write_dataset
from .surrogates import KINDS, DecScores, Sample, SurrogateConfig, hessian, loss_grad
from .trainer import LinearModel, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Action",
    "DecScores",
    "GroundTruth",
    "KINDS",
    "LinearModel",
    "Metrics",
    "Sample",
    "SuiteSpec",
    "SurrogateConfig",
    "TrainConfig",
    "bayes_action",
    "evaluate",
    "exact_regret",
    "generate",
    "hessian",
    "loss_grad",
    "read_dataset",
    "route",
    "route_flat",
    "train",
    "transfer_constant",
    "write_dataset",
]
