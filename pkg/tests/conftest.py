import numpy as np
import pytest

from deferlab.surrogates import Sample


def jacobi_eigvals(A, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations; independent dense eigenvalue oracle for symmetric A."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                R = np.eye(n)
                R[p, p] = R[q, q] = c
                R[p, q], R[q, p] = s, -s
                A = R.T @ A @ R
    return np.sort(np.diag(A))


def random_instance(rng, K, J, scale=2.0, n_correct=None):
    """Random logits plus a sample (0-based labels) with a chosen correct-expert count."""
    a = rng.normal(0.0, scale, K + J)
    y = int(rng.integers(K))
    if n_correct is None:
        n_correct = int(rng.integers(0, J + 1))
    correct = rng.choice(J, size=n_correct, replace=False)
    m = np.array([(y + 1 + rng.integers(K - 1)) % K if K > 1 else y for _ in range(J)])
    m[correct] = y
    return a, Sample(np.ones(1), y, m)


def argmax_gap(v):
    s = np.sort(np.asarray(v))[::-1]
    return np.inf if s.size < 2 else s[0] - s[1]


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[cid])
