"""Synthetic L2D benchmarks with analytic class posteriors and expert utilities.

Each generator draws every random quantity from a counter-based stream keyed
by (suite, seed, purpose) and indexed by the global sample index, so sample i
is the same no matter how many samples are generated or in which order.
Samples are laid out train, then validation, then test.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .bayes import GroundTruth
from .prng import Stream
from .surrogates import Sample

SUITES = ("NestedRedundant", "RareSpecialist", "SharedAcceptability", "CouplingDistractors")

NOISE_STD = 0.05

# per-suite defaults: (K, J, n_train, n_val, n_test)
DEFAULTS = {
    "NestedRedundant": (16, 24, 900, 1000, 8000),
    "RareSpecialist": (2, 2, 7000, 2000, 18000),
    "SharedAcceptability": (10, 4, 1000, 1000, 12000),
    "CouplingDistractors": (3, 5, 4500, 1000, 7000),
}


@dataclass(frozen=True)
class SuiteSpec:
    suite: str
    K: int
    J: int
    n_train: int
    n_val: int
    n_test: int
    seed: int = 0
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; expected one of {SUITES}")
        for name in ("K", "J", "n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def default(cls, suite: str, seed: int = 0, **overrides) -> "SuiteSpec":
        if suite not in DEFAULTS:
            raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
        K, J, ntr, nva, nte = DEFAULTS[suite]
        kw = dict(suite=suite, K=K, J=J, n_train=ntr, n_val=nva, n_test=nte, seed=seed)
        kw.update(overrides)
        return cls(**kw)

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LabeledDataset:
    """Column arrays for all splits plus the analytic truth per sample."""

    spec: SuiteSpec
    X: np.ndarray  # (N, d)
    y: np.ndarray  # (N,)
    M: np.ndarray  # (N, J)
    eta: np.ndarray  # (N, K)
    alpha: np.ndarray  # (N, J)
    region: np.ndarray  # (N,) str tags
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.y.size

    @property
    def K(self) -> int:
        return self.eta.shape[1]

    @property
    def J(self) -> int:
        return self.alpha.shape[1]

    @property
    def split(self) -> np.ndarray:
        s = self.spec
        return np.repeat(["train", "val", "test"], [s.n_train, s.n_val, s.n_test])

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            self.spec,
            self.X[idx],
            self.y[idx],
            self.M[idx],
            self.eta[idx],
            self.alpha[idx],
            self.region[idx],
            {k: v[idx] for k, v in self.extras.items()},
        )

    def part(self, name: str) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.split == name))

    @property
    def train(self) -> "LabeledDataset":
        return self.part("train")

    @property
    def val(self) -> "LabeledDataset":
        return self.part("val")

    @property
    def test(self) -> "LabeledDataset":
        return self.part("test")

    @property
    def targets(self) -> np.ndarray:
        return (self.M == self.y[:, None]).astype(np.float64)

    def samples(self) -> List[Sample]:
        return [Sample(self.X[i], int(self.y[i]), self.M[i]) for i in range(len(self))]

    def truths(self) -> List[GroundTruth]:
        return [
            GroundTruth(self.eta[i], self.alpha[i], str(self.region[i])) for i in range(len(self))
        ]


# ---------------------------------------------------------------------------
# shared drawing helpers


def _streams(spec: SuiteSpec):
    root = Stream("deferlab", spec.suite, spec.seed)
    return lambda purpose: root.child(purpose)


def _wrong_labels(stream: Stream, idx, y, K: int, J: int) -> np.ndarray:
    """Uniform draw from [K] minus {y} per (sample, expert) without rejection."""
    counters = idx[:, None] * J + np.arange(J)[None, :]
    r = stream.integers(counters, K - 1)
    return np.where(r < y[:, None], r, r + 1)


def _sharp_posterior(c: np.ndarray, K: int, top: float) -> np.ndarray:
    eta = np.full((c.size, K), (1.0 - top) / (K - 1))
    eta[np.arange(c.size), c] = top
    return eta


def _draw_from_sharp(stream_flip, stream_other, idx, c, K, top):
    """Label equal to c with probability ``top``, else uniform over the rest."""
    keep = stream_flip.uniform(idx) < top
    other = stream_other.integers(idx, K - 1)
    other = np.where(other < c, other, other + 1)
    return np.where(keep, c, other)


def _class_features(streams, idx, base, shifted, c, K):
    """base * 1_K + eps, with feature c moved to ``shifted`` where ``c >= 0``."""
    eps = NOISE_STD * streams("noise").normal(idx[:, None] * K + np.arange(K)[None, :])
    X = base + eps
    rows = np.flatnonzero(c >= 0)
    X[rows, c[rows]] = shifted + eps[rows, c[rows]]
    return X


def _check(spec: SuiteSpec, K=None, J=None, minK=2):
    if K is not None and spec.K != K:
        raise ValueError(f"{spec.suite} requires K={K}")
    if J is not None and spec.J != J:
        raise ValueError(f"{spec.suite} requires J={J}")
    if spec.K < minK:
        raise ValueError(f"{spec.suite} requires K >= {minK}")


# ---------------------------------------------------------------------------
# suites


def nested_alpha(J: int, region_d: bool) -> np.ndarray:
    """Log-spaced utilities; expert 0 strongest."""
    if J < 2:
        raise ValueError("nested suite needs J >= 2 (log spacing divides by log J)")
    rho = np.log1p(np.arange(J)) / np.log(J)
    if region_d:
        return 0.99 - (0.99 - 0.75) * rho
    return 0.04 - (0.04 - 0.002) * rho


def gen_nested_redundant(spec: SuiteSpec) -> LabeledDataset:
    _check(spec)
    K, J, N = spec.K, spec.J, spec.n_total
    s = _streams(spec)
    idx = np.arange(N, dtype=np.int64)
    in_d = s("region").uniform(idx) < 0.65

    c = s("label").integers(idx, K)  # uniform label on D, signal class on D^c
    y_dc = _draw_from_sharp(s("flip"), s("other"), idx, c, K, 0.998)
    y = np.where(in_d, c, y_dc)
    eta = np.where(in_d[:, None], 1.0 / K, _sharp_posterior(c, K, 0.998))
    X = _class_features(s, idx, 3.5, 5.0, np.where(in_d, -1, c), K)

    alpha = np.where(in_d[:, None], nested_alpha(J, True), nested_alpha(J, False))
    U = s("latent").uniform(idx)
    correct = U[:, None] <= alpha
    M = np.where(correct, y[:, None], _wrong_labels(s("wrong"), idx, y, K, J))
    region = np.where(in_d, "D", "Dc")
    return LabeledDataset(spec, X, y, M, eta, alpha, region)


RARE_JOINT = {(1, 1): 0.55, (1, 0): 0.05, (0, 1): 0.20, (0, 0): 0.20}


def gen_rare_specialist(spec: SuiteSpec) -> LabeledDataset:
    """Expert 0 is the generalist, expert 1 the specialist."""
    _check(spec, K=2, J=2)
    N = spec.n_total
    s = _streams(spec)
    idx = np.arange(N, dtype=np.int64)
    Z = 2.0 * s("z").uniform(idx[:, None] * 2 + np.arange(2)[None, :]) - 1.0
    in_r = s("region").uniform(idx) < 0.15
    X = np.column_stack([Z, in_r.astype(np.float64)])

    c = np.where(Z[:, 0] >= 0, 0, 1)
    top = np.where(in_r, 0.60, 0.90)
    eta = np.column_stack([np.where(c == 0, top, 1 - top), np.where(c == 0, 1 - top, top)])
    y = np.where(s("label").uniform(idx) < top, c, 1 - c)

    u = s("joint").uniform(idx)
    # on R one draw picks a cell of the joint table: (1,1) | (1,0) | (0,1) | (0,0)
    gen_r = u < 0.60
    spec_r = (u < 0.55) | ((u >= 0.60) & (u < 0.80))
    gen_off = u < 0.45
    spec_off = s("joint2").uniform(idx) < 0.15
    correct = np.column_stack([np.where(in_r, gen_r, gen_off), np.where(in_r, spec_r, spec_off)])
    alpha = np.where(in_r[:, None], [0.60, 0.75], [0.45, 0.15])
    M = np.where(correct, y[:, None], 1 - y[:, None])
    region = np.where(in_r, "R", "Rc")
    return LabeledDataset(spec, X, y, M, eta, alpha, region)


SHARED_EVENTS = (0.10, 0.78, 0.05, 0.03, 0.04)  # all, Q+other, Q only, other only, none


def shared_alpha(J: int):
    """(alpha_Q, alpha_{j != Q}) on the defer region."""
    allc, pair, qonly, oonly, _ = SHARED_EVENTS
    return allc + pair + qonly, allc + (pair + oonly) / (J - 1)


def gen_shared_acceptability(spec: SuiteSpec) -> LabeledDataset:
    _check(spec)
    if spec.J < 2:
        raise ValueError("shared-acceptability suite needs J >= 2")
    K, J, N = spec.K, spec.J, spec.n_total
    s = _streams(spec)
    idx = np.arange(N, dtype=np.int64)
    in_d = s("region").uniform(idx) < 0.60
    Q = s("sector").integers(idx, J)

    c = s("label").integers(idx, K)
    y = np.where(in_d, c, _draw_from_sharp(s("flip"), s("other"), idx, c, K, 0.998))
    eta = np.where(in_d[:, None], 1.0 / K, _sharp_posterior(c, K, 0.998))
    Xc = _class_features(s, idx, 3.1, 5.0, np.where(in_d, -1, c), K)
    Xs = np.zeros((N, J))
    rows = np.flatnonzero(in_d)
    Xs[rows, Q[rows]] = 2.2 + NOISE_STD * s("sector_noise").normal(idx[rows])
    X = np.hstack([Xc, Xs])

    # one other expert uniform over the J-1 non-Q indices (index shift past Q)
    o = s("other_expert").integers(idx, J - 1)
    other = np.where(o < Q, o, o + 1)
    cum = np.cumsum(SHARED_EVENTS)
    ev = np.searchsorted(cum, s("event").uniform(idx), side="right")
    onehot_q = np.eye(J, dtype=bool)[Q]
    onehot_o = np.eye(J, dtype=bool)[other]
    correct_d = np.select(
        [ev[:, None] == 0, ev[:, None] == 1, ev[:, None] == 2, ev[:, None] == 3],
        [np.ones((N, J), bool), onehot_q | onehot_o, onehot_q, onehot_o],
        default=np.zeros((N, J), bool),
    )
    correct_dc = s("indep").uniform(idx[:, None] * J + np.arange(J)[None, :]) < 0.05
    correct = np.where(in_d[:, None], correct_d, correct_dc)

    aq, ao = shared_alpha(J)
    alpha = np.where(in_d[:, None], np.where(onehot_q, aq, ao), 0.05)
    M = np.where(correct, y[:, None], _wrong_labels(s("wrong"), idx, y, K, J))
    region = np.where(in_d, "D", "Dc")
    sector = np.where(in_d, Q, -1)
    return LabeledDataset(spec, X, y, M, eta, alpha, region, {"sector": sector})


def gen_coupling_distractors(spec: SuiteSpec) -> LabeledDataset:
    """Expert 0 is useful (rate ``expert_rate`` on D, ``expert_rate_off`` on D^c);
    experts 1..J-1 are never correct."""
    _check(spec)
    K, J, N = spec.K, spec.J, spec.n_total
    rate = float(spec.params.get("expert_rate", 0.9))
    rate_off = float(spec.params.get("expert_rate_off", 0.5))
    p_d = float(spec.params.get("defer_mass", 0.5))
    s = _streams(spec)
    idx = np.arange(N, dtype=np.int64)
    in_d = s("region").uniform(idx) < p_d

    c = s("label").integers(idx, K)
    y = np.where(in_d, c, _draw_from_sharp(s("flip"), s("other"), idx, c, K, 0.998))
    eta = np.where(in_d[:, None], 1.0 / K, _sharp_posterior(c, K, 0.998))
    X = _class_features(s, idx, 3.0, 5.0, np.where(in_d, -1, c), K)

    alpha = np.zeros((N, J))
    alpha[:, 0] = np.where(in_d, rate, rate_off)
    correct = s("latent").uniform(idx[:, None] * J + np.arange(J)[None, :]) < alpha
    M = np.where(correct, y[:, None], _wrong_labels(s("wrong"), idx, y, K, J))
    region = np.where(in_d, "D", "Dc")
    return LabeledDataset(spec, X, y, M, eta, alpha, region)


GENERATORS = {
    "NestedRedundant": gen_nested_redundant,
    "RareSpecialist": gen_rare_specialist,
    "SharedAcceptability": gen_shared_acceptability,
    "CouplingDistractors": gen_coupling_distractors,
}


def generate(spec: SuiteSpec) -> LabeledDataset:
    return GENERATORS[spec.suite](spec)


# ---------------------------------------------------------------------------
# CSV + JSON sidecar


def _fmt(v: float) -> str:
    return repr(float(v)) if np.isfinite(v) else str(v)


def dataset_columns(ds: LabeledDataset) -> List[str]:
    d = ds.X.shape[1]
    cols = ["split"] + [f"x_{i}" for i in range(d)] + ["y"] + [f"m_{j}" for j in range(ds.J)]
    cols += ["region"] + [f"eta_{k}" for k in range(ds.K)] + [f"alpha_{j}" for j in range(ds.J)]
    cols += sorted(ds.extras)
    return cols


def write_dataset(ds: LabeledDataset, path: str) -> None:
    """Write ``<path>.csv`` and ``<path>.json`` (or ``path`` itself if it ends in .csv)."""
    base = path[:-4] if path.endswith(".csv") else path
    d = ds.X.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_columns(ds))
    split = ds.split
    extras = sorted(ds.extras)
    for i in range(len(ds)):
        row = [split[i]] + [_fmt(v) for v in ds.X[i]] + [int(ds.y[i])]
        row += [int(v) for v in ds.M[i]] + [ds.region[i]]
        row += [_fmt(v) for v in ds.eta[i]] + [_fmt(v) for v in ds.alpha[i]]
        row += [int(ds.extras[k][i]) for k in extras]
        w.writerow(row)
    meta = {
        "spec": ds.spec.to_dict(),
        "rows": len(ds),
        "feature_dim": d,
        "columns": dataset_columns(ds),
    }
    _atomic_write(base + ".csv", buf.getvalue())
    _atomic_write(base + ".json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_dataset(path: str) -> LabeledDataset:
    base = path[:-4] if path.endswith(".csv") else path
    with open(base + ".json") as fh:
        meta = json.load(fh)
    spec = SuiteSpec(**meta["spec"])
    with open(base + ".csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    d, K, J = meta["feature_dim"], spec.K, spec.J
    col = lambda name, typ=float: np.array([typ(r[name]) for r in rows])  # noqa: E731
    X = np.column_stack([col(f"x_{i}") for i in range(d)])
    M = np.column_stack([col(f"m_{j}", int) for j in range(J)])
    eta = np.column_stack([col(f"eta_{k}") for k in range(K)])
    alpha = np.column_stack([col(f"alpha_{j}") for j in range(J)])
    base_cols = set(meta["columns"][: 1 + d + 1 + J + 1 + K + J])
    extras = {name: col(name, int) for name in meta["columns"] if name not in base_cols}
    return LabeledDataset(spec, X, col("y", int), M, eta, alpha, col("region", str), extras)


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
