"""Bayes routing rule, conditional risks and exact defer regret."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class GroundTruth:
    """Analytic class posterior ``eta`` (simplex, length K) and expert
    utilities ``alpha`` (length J) at one input."""

    eta: np.ndarray
    alpha: np.ndarray
    region: str = ""

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if eta.ndim != 1 or abs(eta.sum() - 1.0) > 1e-9 or np.any(eta < 0):
            raise ValueError("eta must be a probability vector")
        if alpha.ndim != 1 or np.any((alpha < 0) | (alpha > 1)):
            raise ValueError("alpha entries must lie in [0, 1]")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class Action:
    """``Classify(k)`` when ``defer`` is False, else ``Defer(j)``; 0-based index."""

    defer: bool
    index: int

    @classmethod
    def classify(cls, k: int) -> "Action":
        return cls(False, int(k))

    @classmethod
    def defer_to(cls, j: int) -> "Action":
        return cls(True, int(j))

    def __repr__(self):
        return f"Defer({self.index})" if self.defer else f"Classify({self.index})"


def bayes_action(gt: GroundTruth) -> Action:
    # ">=": ties go to the classifier
    if gt.eta.max() >= gt.alpha.max():
        return Action.classify(int(np.argmax(gt.eta)))
    return Action.defer_to(int(np.argmax(gt.alpha)))


def utility(act: Action, gt: GroundTruth) -> float:
    """Probability that ``act`` is correct: eta_k or alpha_j."""
    values = gt.alpha if act.defer else gt.eta
    if not 0 <= act.index < values.size:
        raise ValueError(f"{act!r} out of range")
    return float(values[act.index])


def conditional_risk(act: Action, gt: GroundTruth) -> float:
    return 1.0 - utility(act, gt)


def bayes_risk(gt: GroundTruth) -> float:
    return 1.0 - max(float(gt.eta.max()), float(gt.alpha.max()))


def exact_regret(decisions: Sequence[Action], gts: Sequence[GroundTruth]) -> float:
    """Mean excess conditional risk of ``decisions`` over the Bayes action."""
    if len(decisions) != len(gts):
        raise ValueError(f"{len(decisions)} decisions for {len(gts)} truths")
    if not gts:
        raise ValueError("empty test set")
    # utilities are subtracted directly so each term is exactly >= 0
    total = sum(
        max(g.eta.max(), g.alpha.max()) - utility(d, g)
        for d, g in zip(decisions, gts)
    )
    return float(total / len(gts))


# -- array forms used by the evaluation code ---------------------------------
# decisions encoded as (defer: bool[N], index: int[N]); eta (N, K), alpha (N, J)


def bayes_actions_array(eta: np.ndarray, alpha: np.ndarray):
    defer = alpha.max(axis=1) > eta.max(axis=1)
    index = np.where(defer, np.argmax(alpha, axis=1), np.argmax(eta, axis=1))
    return defer, index


def conditional_risks_array(defer, index, eta, alpha) -> np.ndarray:
    rows = np.arange(eta.shape[0])
    cls_idx = np.where(defer, 0, index)
    exp_idx = np.where(defer, index, 0)
    return np.where(defer, 1.0 - alpha[rows, exp_idx], 1.0 - eta[rows, cls_idx])


def exact_regret_array(defer, index, eta, alpha) -> float:
    rows = np.arange(eta.shape[0])
    util = np.where(
        defer, alpha[rows, np.where(defer, index, 0)], eta[rows, np.where(defer, 0, index)]
    )
    best = np.maximum(eta.max(axis=1), alpha.max(axis=1))
    return float(np.mean(best - util))
