"""Stable elementwise primitives, eigenvalue/operator-norm estimates and
finite-difference oracles."""

from __future__ import annotations

import numpy as np

_GOLDEN = 0.6180339887498949


def _check_finite(v: np.ndarray, name: str = "input") -> None:
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")


def logsumexp(v, axis=-1):
    """Max-shifted log-sum-exp along ``axis`` (keeps the reduced axis)."""
    v = np.asarray(v, dtype=np.float64)
    vmax = np.max(v, axis=axis, keepdims=True)
    return vmax + np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True))


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    return v - logsumexp(v, axis=axis)


def softmax(v, axis=-1) -> np.ndarray:
    """Softmax with max subtraction. Works on vectors and on batches (last axis)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    _check_finite(v)
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(v):
    """Logistic function, branching on sign so neither branch overflows."""
    arr = np.asarray(v, dtype=np.float64)
    _check_finite(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    if np.ndim(v) == 0:
        return float(out)
    return out


def softplus(v):
    """log(1 + exp(v)) without overflow."""
    return np.logaddexp(0.0, v)


def bce_with_logits(v, target):
    """Bernoulli cross-entropy -t log sigma(v) - (1-t) log(1-sigma(v)), soft t allowed."""
    v = np.asarray(v, dtype=np.float64)
    return softplus(v) - target * v


def _start_vector(n: int) -> np.ndarray:
    # all-ones plus an index-dependent golden-ratio perturbation; no RNG involved
    v = 1.0 + np.mod((np.arange(n) + 1) * _GOLDEN, 1.0)
    return v / np.linalg.norm(v)


def top_eig_sym(H, iters: int = 1000, tol: float = 1e-10, full_output: bool = False):
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration.

    Convergence is declared when successive Rayleigh quotients differ by less
    than ``tol``. With ``full_output=True`` returns ``(value, converged)``;
    an unconverged value is still the last Rayleigh quotient.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    _check_finite(H, "H")
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-10):
        raise ValueError("matrix is not symmetric within 1e-10")
    n = H.shape[0]
    v = _start_vector(n)
    rq = float(v @ H @ v)
    converged = False
    for _ in range(iters):
        w = H @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            rq, converged = 0.0, True
            break
        v = w / norm
        new_rq = float(v @ H @ v)
        if abs(new_rq - rq) < tol:
            rq, converged = new_rq, True
            break
        rq = new_rq
    if full_output:
        return rq, converged
    return rq


def op_norm_rect(B, iters: int = 1000, tol: float = 1e-12) -> float:
    """Spectral norm sigma_max(B) via power iteration on B^T B."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    _check_finite(B, "B")
    if not B.any():
        return 0.0
    lam = top_eig_sym(B.T @ B, iters=iters, tol=tol)
    return float(np.sqrt(max(lam, 0.0)))


def fd_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_hessian(f, x, h: float = 1e-4) -> np.ndarray:
    """Nested central-difference Hessian, symmetrized."""
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        for j in range(i, n):
            ej = np.zeros(n)
            ej[j] = h
            H[i, j] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h * h)
            H[j, i] = H[i, j]
    return H
