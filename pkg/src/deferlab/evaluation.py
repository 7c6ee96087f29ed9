"""Prediction rules per surrogate, system metrics and transfer constants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .bayes import Action, conditional_risks_array, exact_regret_array
from .numkit import sigmoid, softmax
from .surrogates import AUGMENTED_KINDS, KINDS, DecScores, SurrogateConfig


def _kind(kind) -> str:
    return kind.kind if isinstance(kind, SurrogateConfig) else kind


def route_batch(kind, scores, K: int):
    """Vectorised routing. Returns (defer: bool[N], index: int[N]).

    Ties break to the lowest index. Decoupled classifies on ties (max p >= max u);
    OvA classifies only when the best class logit strictly beats the best expert logit.
    """
    kind = _kind(kind)
    a = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if kind in AUGMENTED_KINDS:
        top = np.argmax(a, axis=1)
        defer = top >= K
        return defer, np.where(defer, top - K, top)
    cls, exp = a[:, :K], a[:, K:]
    if kind == "OvA":
        defer = ~(cls.max(axis=1) > exp.max(axis=1))
    elif kind == "Decoupled":
        defer = ~(softmax(cls).max(axis=1) >= sigmoid(exp).max(axis=1))
    else:
        raise ValueError(f"unknown surrogate kind {kind!r}")
    return defer, np.where(defer, np.argmax(exp, axis=1), np.argmax(cls, axis=1))


def route(kind, scores) -> Action:
    """Route one input. ``scores`` is a flat augmented vector or a DecScores."""
    if isinstance(scores, DecScores):
        K, a = np.asarray(scores.w).size, scores.stacked()
        defer, index = route_batch(kind, a, K)
        return Action(bool(defer[0]), int(index[0]))
    raise TypeError("flat score vectors need K; use route_flat(kind, a, K)")


def route_flat(kind, a, K: int) -> Action:
    defer, index = route_batch(kind, a, K)
    return Action(bool(defer[0]), int(index[0]))


def empirical_defer_loss(defer, index, y, M) -> float:
    """Mean realized 0-1 defer loss on sampled labels and expert predictions."""
    rows = np.arange(y.size)
    pred = np.where(defer, M[rows, np.where(defer, index, 0)], index)
    return float(np.mean(pred != y))


@dataclass
class Metrics:
    system_accuracy: float
    empirical_defer_loss: float
    coverage: float
    exact_regret: float
    specialist_selection: Optional[float] = None
    shared_correct_routing: Optional[float] = None
    best_expert_selection: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


def metrics_from_decisions(defer, index, ds) -> Metrics:
    """Metrics for precomputed decisions on a LabeledDataset."""
    risk = conditional_risks_array(defer, index, ds.eta, ds.alpha)
    m = Metrics(
        system_accuracy=float(1.0 - risk.mean()),
        empirical_defer_loss=empirical_defer_loss(defer, index, ds.y, ds.M),
        coverage=float(np.mean(~defer)),
        exact_regret=exact_regret_array(defer, index, ds.eta, ds.alpha),
    )
    suite = ds.spec.suite
    if suite == "RareSpecialist":
        in_r = ds.region == "R"
        chose_spec = defer & (index == 1)
        if in_r.any():
            m.specialist_selection = float(chose_spec[in_r].mean())
        t = ds.targets
        shared = in_r & (t[:, 0] == 1) & (t[:, 1] == 1)
        if shared.any():
            m.shared_correct_routing = float(chose_spec[shared].mean())
    elif suite == "SharedAcceptability":
        sector = ds.extras["sector"]
        deferred_d = (ds.region == "D") & defer
        # among deferred samples on D; undefined (None) if the policy never defers there
        if deferred_d.any():
            m.best_expert_selection = float(np.mean(index[deferred_d] == sector[deferred_d]))
    return m


def evaluate(model, kind, testset) -> Metrics:
    from .trainer import forward_batch

    scores = forward_batch(model, testset.X)
    defer, index = route_batch(kind, scores, testset.K)
    return metrics_from_decisions(defer, index, testset)


def transfer_constant(kind, beta: float, K: int, J: int) -> Optional[float]:
    """Surrogate-to-defer-regret transfer constant where one is known, else None."""
    kind = _kind(kind)
    if kind not in KINDS:
        raise ValueError(f"unknown surrogate kind {kind!r}")
    if kind == "Decoupled":
        if not beta > 0:
            raise ValueError("beta must be positive")
        return max(2.0 * math.sqrt(2.0), math.sqrt(2.0 / beta))
    if kind == "AddCE":
        return math.sqrt(2.0 * (J + 1))
    if kind == "Mao25":
        return float(K + J)
    return None


@dataclass
class RecoveryReport:
    region: str
    n: int
    max_expert_gap: float  # max_j |u_j - alpha_j| (max over samples)
    max_class_gap: float  # max_k |p_k - eta_k|


def fit_recovery_check(model, testset, reduce: str = "mean"):
    """Per-region estimation error of a trained decoupled model.

    With ``reduce='mean'`` the per-coordinate absolute error is averaged over
    the samples of a region before taking the max over coordinates; with
    ``reduce='max'`` the worst sample counts.
    """
    from .trainer import forward_batch

    K = testset.K
    a = forward_batch(model, testset.X)
    p, u = softmax(a[:, :K]), sigmoid(a[:, K:])
    out = []
    for reg in sorted(set(testset.region.tolist())):
        mask = testset.region == reg
        du = np.abs(u[mask] - testset.alpha[mask])
        dp = np.abs(p[mask] - testset.eta[mask])
        if reduce == "mean":
            eu, ep = du.mean(axis=0).max(), dp.mean(axis=0).max()
        elif reduce == "max":
            eu, ep = du.max(), dp.max()
        else:
            raise ValueError("reduce must be 'mean' or 'max'")
        out.append(RecoveryReport(reg, int(mask.sum()), float(eu), float(ep)))
    return out
