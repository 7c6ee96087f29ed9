"""Samplewise multi-expert L2D surrogates with analytic gradients and Hessians.

Scores use the augmented layout ``a = (a_1..a_K, a_{K+1}..a_{K+J})``. OvA and
Decoupled have separate class/expert heads; in batch code they are carried in
the same (N, K+J) array with the class head first.

Labels, classes and experts are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numkit import bce_with_logits, log_softmax, logsumexp, sigmoid, softmax

KINDS = ("AddCE", "PiCCE", "Mao25", "ASM", "OvA", "Decoupled")
AUGMENTED_KINDS = ("AddCE", "PiCCE", "Mao25", "ASM")
SPLIT_KINDS = ("OvA", "Decoupled")


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: int
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.int64))
        if self.x.ndim != 1 or self.x.size < 1:
            raise ValueError("x must be a nonempty feature vector")
        if self.y < 0:
            raise ValueError("label must be non-negative")

    @property
    def J(self) -> int:
        return int(self.m.size)

    @property
    def targets(self) -> np.ndarray:
        return (self.m == self.y).astype(np.float64)

    @property
    def correct(self) -> np.ndarray:
        """Indices of experts whose prediction equals the label."""
        return np.flatnonzero(self.m == self.y)


@dataclass(frozen=True)
class DecScores:
    w: np.ndarray
    s: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.w, float), np.asarray(self.s, float)])


@dataclass(frozen=True)
class SurrogateConfig:
    kind: str = "Decoupled"
    beta: float = 0.5
    tie_break: str = "lowest-index"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}; expected one of {KINDS}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.tie_break != "lowest-index":
            raise ValueError("only the lowest-index tie break is supported")

    def lam(self, J: int) -> float:
        return self.beta * J


@dataclass
class Intermediates:
    q: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    pi: Optional[np.ndarray] = None
    kstar: Optional[int] = None
    jstar: Optional[int] = None
    acc_set: Optional[np.ndarray] = None
    acc_mass: Optional[float] = None
    p: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None


@dataclass
class LossGrad:
    loss: float
    grad: np.ndarray
    intermediates: Intermediates = field(default_factory=Intermediates)


@dataclass
class DueHessian:
    class_block: np.ndarray
    expert_diag: np.ndarray
    mixed_block: np.ndarray

    def full(self) -> np.ndarray:
        K, J = self.mixed_block.shape
        H = np.zeros((K + J, K + J))
        H[:K, :K] = self.class_block
        H[K:, K:] = np.diag(self.expert_diag)
        return H


# ---------------------------------------------------------------------------
# batched kernels: a (N, K+J), y (N,), t (N, J) -> loss (N,), grad (N, K+J), extras


def _onehot(y, n):
    out = np.zeros((y.size, n))
    out[np.arange(y.size), y] = 1.0
    return out


def _addce(a, y, t, K):
    logq = log_softmax(a)
    q = np.exp(logq)
    rows = np.arange(a.shape[0])
    loss = -logq[rows, y] - np.sum(t * logq[:, K:], axis=1)
    target = np.concatenate([_onehot(y, K), t], axis=1)
    grad = (1.0 + t.sum(axis=1, keepdims=True)) * q - target
    return loss, grad, {"q": q}


def _picce_winner(a, t, K):
    masked = np.where(t > 0, a[:, K:], -np.inf)
    has = t.sum(axis=1) > 0
    jstar = np.where(has, np.argmax(masked, axis=1), -1)
    return jstar, has


def _picce(a, y, t, K, jstar=None):
    logq = log_softmax(a)
    q = np.exp(logq)
    rows = np.arange(a.shape[0])
    if jstar is None:
        jstar, has = _picce_winner(a, t, K)
    else:
        jstar = np.asarray(jstar)
        has = jstar >= 0
    col = K + np.where(has, jstar, 0)
    loss = -logq[rows, y] - np.where(has, logq[rows, col], 0.0)
    grad = (1.0 + has[:, None]) * q
    grad[rows, y] -= 1.0
    grad[rows[has], col[has]] -= 1.0
    return loss, grad, {"q": q, "jstar": jstar}


def _mao(a, y, t, K):
    q = softmax(a)
    inS = np.concatenate([_onehot(y, K), t], axis=1)
    S = np.sum(q * inS, axis=1)
    loss = 1.0 - S
    grad = q * (S[:, None] - inS)
    return loss, grad, {"q": q, "inS": inS, "S": S}


def _asm(a, y, t, K):
    if K < 2:
        raise ValueError("A-SM needs K >= 2 (no non-max class otherwise)")
    N = a.shape[0]
    rows = np.arange(N)
    cls = a[:, :K]
    logxi = log_softmax(cls)
    xi = np.exp(logxi)
    kstar = np.argmax(cls, axis=1)
    others = cls.copy()
    others[rows, kstar] = -np.inf
    logB = logsumexp(others)  # (N, 1)
    pi = np.exp(others - logB)  # zero at kstar
    v = a[:, K:] - logB
    psi = sigmoid(v)
    resid = psi - t
    loss = -logxi[rows, y] + np.sum(bce_with_logits(v, t), axis=1)
    gcls = xi - _onehot(y, K) - pi * resid.sum(axis=1, keepdims=True)
    grad = np.concatenate([gcls, resid], axis=1)
    return loss, grad, {"xi": xi, "psi": psi, "pi": pi, "kstar": kstar}


def _ova(a, y, t, K):
    target = np.concatenate([_onehot(y, K), t], axis=1)
    loss = np.sum(bce_with_logits(a, target), axis=1)
    grad = sigmoid(a) - target
    return loss, grad, {}


def _decoupled(a, y, tau, K, beta):
    rows = np.arange(a.shape[0])
    logp = log_softmax(a[:, :K])
    p = np.exp(logp)
    s = a[:, K:]
    u = sigmoid(s)
    loss = -logp[rows, y] + beta * np.sum(bce_with_logits(s, tau), axis=1)
    grad = np.concatenate([p - _onehot(y, K), beta * (u - tau)], axis=1)
    return loss, grad, {"p": p, "u": u}


def batch_loss_grad(kind: str, scores, y, m, K: int, beta: float = 0.5, tau=None):
    """Per-sample losses (N,) and score gradients (N, K+J) for a batch.

    ``tau`` optionally replaces the binary expert targets with soft ones
    (Decoupled only).
    """
    a = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    m = np.atleast_2d(np.asarray(m, dtype=np.int64))
    t = (m == y[:, None]).astype(np.float64)
    if a.shape[1] != K + t.shape[1]:
        raise ValueError(f"score width {a.shape[1]} != K+J = {K + t.shape[1]}")
    if kind == "AddCE":
        loss, grad, _ = _addce(a, y, t, K)
    elif kind == "PiCCE":
        loss, grad, _ = _picce(a, y, t, K)
    elif kind == "Mao25":
        loss, grad, _ = _mao(a, y, t, K)
    elif kind == "ASM":
        loss, grad, _ = _asm(a, y, t, K)
    elif kind == "OvA":
        loss, grad, _ = _ova(a, y, t, K)
    elif kind == "Decoupled":
        target = t if tau is None else np.atleast_2d(np.asarray(tau, dtype=np.float64))
        loss, grad, _ = _decoupled(a, y, target, K, beta)
    else:
        raise ValueError(f"unknown surrogate kind {kind!r}")
    return loss, grad


# ---------------------------------------------------------------------------
# samplewise API


def _split(a, sample: Sample):
    a = np.asarray(a, dtype=np.float64).ravel()
    J = sample.J
    K = a.size - J
    if K < 1 or J < 1:
        raise ValueError("need K >= 1 classes and J >= 1 experts")
    if not 0 <= sample.y < K or np.any((sample.m < 0) | (sample.m >= K)):
        raise ValueError("label or expert prediction out of range [0, K)")
    return a, K, J


def _one(sample: Sample):
    return np.array([sample.y]), sample.targets[None, :]


def ce_loss_grad(a, sample: Sample) -> LossGrad:
    """Additive cross-entropy over the shared K+J softmax."""
    a, K, _ = _split(a, sample)
    y, t = _one(sample)
    loss, grad, ex = _addce(a[None], y, t, K)
    return LossGrad(float(loss[0]), grad[0], Intermediates(q=ex["q"][0]))


def ce_hessian(a, sample: Sample) -> np.ndarray:
    a, _, _ = _split(a, sample)
    q = softmax(a)
    return (1.0 + sample.correct.size) * (np.diag(q) - np.outer(q, q))


def picce_loss_grad(a, sample: Sample, jstar: Optional[int] = None) -> LossGrad:
    """PiCCE: CE on the label plus CE on the highest-scoring correct expert.

    ``jstar`` pins the winner (used when differentiating numerically);
    by default it is the lowest-index argmax over correct experts.
    """
    a, K, _ = _split(a, sample)
    y, t = _one(sample)
    if jstar is not None and jstar >= 0 and sample.targets[jstar] != 1.0:
        raise ValueError("pinned winner must be a correct expert")
    loss, grad, ex = _picce(a[None], y, t, K, None if jstar is None else [jstar])
    js = int(ex["jstar"][0])
    return LossGrad(
        float(loss[0]), grad[0], Intermediates(q=ex["q"][0], jstar=None if js < 0 else js)
    )


def picce_hessian(a, sample: Sample) -> np.ndarray:
    """Hessian with the winner held fixed: 2 Cov(q) if any expert is correct."""
    a, _, _ = _split(a, sample)
    q = softmax(a)
    factor = 2.0 if sample.correct.size else 1.0
    return factor * (np.diag(q) - np.outer(q, q))


def mao_loss_grad(a, sample: Sample) -> LossGrad:
    """Mao25 with Psi(u) = 1 - u: one minus the acceptable-set mass."""
    a, K, _ = _split(a, sample)
    y, t = _one(sample)
    loss, grad, ex = _mao(a[None], y, t, K)
    acc = np.flatnonzero(ex["inS"][0])
    inter = Intermediates(q=ex["q"][0], acc_set=acc, acc_mass=float(ex["S"][0]))
    return LossGrad(float(loss[0]), grad[0], inter)


def mao_hessian(a, sample: Sample) -> np.ndarray:
    a, K, _ = _split(a, sample)
    q = softmax(a)
    inS = np.concatenate([np.eye(K)[sample.y], sample.targets])
    S = float(q @ inS)
    jac = np.diag(q) - np.outer(q, q)  # d q_i / d a_r
    return jac * (S - inS)[:, None] + np.outer(q, q * (inS - S))


def asm_loss_grad(a, sample: Sample) -> LossGrad:
    """Multi-expert asymmetric softmax with the argmax class held fixed."""
    a, K, _ = _split(a, sample)
    y, t = _one(sample)
    loss, grad, ex = _asm(a[None], y, t, K)
    inter = Intermediates(
        xi=ex["xi"][0], psi=ex["psi"][0], pi=ex["pi"][0], kstar=int(ex["kstar"][0])
    )
    return LossGrad(float(loss[0]), grad[0], inter)


def asm_mixed_block(a, sample: Sample) -> np.ndarray:
    """K x J block d^2 Phi / (d a_class d a_expert) = -pi d^T, zero on the k* row."""
    a, K, _ = _split(a, sample)
    y, t = _one(sample)
    _, _, ex = _asm(a[None], y, t, K)
    psi = ex["psi"][0]
    return -np.outer(ex["pi"][0], psi * (1.0 - psi))


def ova_loss_grad(g, s, sample: Sample) -> LossGrad:
    """K + J independent logistic losses."""
    a = np.concatenate([np.asarray(g, float).ravel(), np.asarray(s, float).ravel()])
    a, K, _ = _split(a, sample)
    y, t = _one(sample)
    loss, grad, _ = _ova(a[None], y, t, K)
    inter = Intermediates(p=sigmoid(a[:K]), u=sigmoid(a[K:]))
    return LossGrad(float(loss[0]), grad[0], inter)


def due_loss_grad(ds: DecScores, sample: Sample, cfg: SurrogateConfig = SurrogateConfig()) -> LossGrad:
    """Decoupled surrogate: softmax CE on the class head plus beta-weighted BCE per expert."""
    return due_cost_sensitive_loss_grad(ds, sample.targets, sample, beta=cfg.beta)


def due_cost_sensitive_loss_grad(ds: DecScores, tau, sample: Sample, beta: float = 0.5) -> LossGrad:
    """Decoupled surrogate against soft utility targets tau_j = 1 - c_j in [0, 1]."""
    a, K, J = _split(ds.stacked(), sample)
    tau = np.asarray(tau, dtype=np.float64).ravel()
    if tau.size != J or np.any((tau < 0) | (tau > 1)):
        raise ValueError("tau must hold J values in [0, 1]")
    loss, grad, ex = _decoupled(a[None], np.array([sample.y]), tau[None], K, beta)
    return LossGrad(float(loss[0]), grad[0], Intermediates(p=ex["p"][0], u=ex["u"][0]))


def due_hessian(ds: DecScores, sample: Sample, cfg: SurrogateConfig = SurrogateConfig()) -> DueHessian:
    a, K, J = _split(ds.stacked(), sample)
    p = softmax(a[:K])
    u = sigmoid(a[K:])
    return DueHessian(
        class_block=np.diag(p) - np.outer(p, p),
        expert_diag=cfg.beta * u * (1.0 - u),
        mixed_block=np.zeros((K, J)),
    )


def loss_grad(kind: str, scores, sample: Sample, beta: float = 0.5) -> LossGrad:
    """Dispatch on surrogate kind with a flat (K+J) score vector."""
    a = np.asarray(scores, dtype=np.float64).ravel()
    K = a.size - sample.J
    if kind == "AddCE":
        return ce_loss_grad(a, sample)
    if kind == "PiCCE":
        return picce_loss_grad(a, sample)
    if kind == "Mao25":
        return mao_loss_grad(a, sample)
    if kind == "ASM":
        return asm_loss_grad(a, sample)
    if kind == "OvA":
        return ova_loss_grad(a[:K], a[K:], sample)
    if kind == "Decoupled":
        return due_loss_grad(DecScores(a[:K], a[K:]), sample, SurrogateConfig("Decoupled", beta))
    raise ValueError(f"unknown surrogate kind {kind!r}")


def hessian(kind: str, scores, sample: Sample, beta: float = 0.5) -> np.ndarray:
    """Full (K+J) x (K+J) analytic Hessian where one is available."""
    a = np.asarray(scores, dtype=np.float64).ravel()
    K = a.size - sample.J
    if kind == "AddCE":
        return ce_hessian(a, sample)
    if kind == "PiCCE":
        return picce_hessian(a, sample)
    if kind == "Mao25":
        return mao_hessian(a, sample)
    if kind == "Decoupled":
        return due_hessian(DecScores(a[:K], a[K:]), sample, SurrogateConfig("Decoupled", beta)).full()
    raise ValueError(f"no full analytic Hessian for {kind!r}")
