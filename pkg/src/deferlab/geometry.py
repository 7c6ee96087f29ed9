"""Logit-space geometry probes on trained linear models: curvature vs overlap,
starvation gradient signs, and class-expert mixed Hessian blocks."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .numkit import fd_hessian, op_norm_rect, top_eig_sym
from .suites import SuiteSpec, generate
from .surrogates import (
    DecScores,
    Sample,
    SurrogateConfig,
    asm_mixed_block,
    batch_loss_grad,
    due_hessian,
    hessian,
    loss_grad,
)
from .trainer import TrainConfig, forward_batch, train

EIG_ITERS = 1000
EIG_TOL = 1e-10

COLUMNS = (
    "probe",
    "surrogate",
    "group",
    "bucket",
    "grad_norm_mean",
    "grad_norm_std",
    "top_eig_mean",
    "top_eig_std",
    "grad_mean",
    "grad_std",
    "positive_rate",
    "mixed_norm_mean",
    "mixed_norm_std",
    "count",
    "unconverged",
)


@dataclass
class GeometryRow:
    probe: str
    surrogate: str
    group: str  # "J", "overlap" or "all"
    bucket: str
    grad_norm_mean: Optional[float] = None
    grad_norm_std: Optional[float] = None
    top_eig_mean: Optional[float] = None
    top_eig_std: Optional[float] = None
    grad_mean: Optional[float] = None
    grad_std: Optional[float] = None
    positive_rate: Optional[float] = None
    mixed_norm_mean: Optional[float] = None
    mixed_norm_std: Optional[float] = None
    count: int = 0
    unconverged: int = 0


@dataclass
class GeometryReport:
    rows: List[GeometryRow] = field(default_factory=list)
    # raw per-sample measurements, keyed by (surrogate, J); used by checks
    samples: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def find(self, surrogate: str, group: str, bucket: str) -> GeometryRow:
        for r in self.rows:
            if (r.surrogate, r.group, r.bucket) == (surrogate, group, str(bucket)):
                return r
        raise KeyError((surrogate, group, bucket))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            d = asdict(r)
            w.writerow(["" if d[c] is None else (f"{d[c]:.17g}" if isinstance(d[c], float) else d[c]) for c in COLUMNS])
        return buf.getvalue()


def _stats(v):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return None, None
    return float(v.mean()), float(v.std())


def overlap_bucket(n: int) -> str:
    if n <= 1:
        return "1"
    if n <= 3:
        return "2-3"
    if n <= 7:
        return "4-7"
    if n <= 15:
        return "8-15"
    return "16+"


def _train_test(spec: SuiteSpec, kind: str, base: TrainConfig):
    ds = generate(spec)
    cfg = replace(base, seed=spec.seed, surrogate=replace(base.surrogate, kind=kind))
    model, _ = train(ds, cfg)
    test = ds.test
    return test, forward_batch(model, test.X), cfg.surrogate.beta


# ---------------------------------------------------------------------------


def curvature_sweep(
    seeds: Sequence[int] = (0, 1, 2),
    J_values: Sequence[int] = (2, 4, 8, 16, 32),
    kinds: Sequence[str] = ("AddCE", "Decoupled"),
    n_train: int = 3500,
    n_val: int = 1000,
    n_test: int = 6000,
    max_per_run: int = 300,
    train_cfg: Optional[TrainConfig] = None,
) -> GeometryReport:
    """Gradient norm and top Hessian eigenvalue on test samples with >= 1 correct expert."""
    base = train_cfg or TrainConfig()
    report = GeometryReport()
    for kind in kinds:
        by_overlap: dict = {}
        for J in J_values:
            norms, eigs, overlaps, unconv = [], [], [], 0
            for seed in seeds:
                spec = SuiteSpec.default(
                    "NestedRedundant", seed=seed, J=J, n_train=n_train, n_val=n_val, n_test=n_test
                )
                test, scores, beta = _train_test(spec, kind, base)
                t = test.targets
                keep = np.flatnonzero(t.sum(axis=1) > 0)[:max_per_run]
                _, G = batch_loss_grad(kind, scores[keep], test.y[keep], test.M[keep], test.K, beta)
                for row, i in enumerate(keep):
                    s = Sample(test.X[i], int(test.y[i]), test.M[i])
                    lam, ok = top_eig_sym(
                        hessian(kind, scores[i], s, beta), EIG_ITERS, EIG_TOL, full_output=True
                    )
                    if not ok:
                        unconv += 1
                        continue
                    norms.append(np.linalg.norm(G[row]))
                    eigs.append(lam)
                    overlaps.append(int(t[i].sum()))
            report.samples[(kind, J)] = {
                "grad_norm": np.array(norms),
                "top_eig": np.array(eigs),
                "overlap": np.array(overlaps),
            }
            for n, lam, g in zip(overlaps, eigs, norms):
                by_overlap.setdefault(overlap_bucket(n), []).append((lam, g))
                if n >= 4:
                    by_overlap.setdefault("4+", []).append((lam, g))
            gm, gs = _stats(norms)
            em, es = _stats(eigs)
            report.rows.append(
                GeometryRow("curvature", kind, "J", str(J), gm, gs, em, es, count=len(eigs), unconverged=unconv)
            )
        for bucket in ("1", "2-3", "4-7", "8-15", "16+", "4+"):
            vals = by_overlap.get(bucket)
            if not vals:
                continue
            lam, g = np.array(vals).T
            gm, gs = _stats(g)
            em, es = _stats(lam)
            report.rows.append(GeometryRow("curvature", kind, "overlap", bucket, gm, gs, em, es, count=lam.size))
    return report


def curvature_bound_violations(report: GeometryReport, beta: float = 0.5) -> int:
    """Samples whose top eigenvalue exceeds its analytic ceiling."""
    bad = 0
    for (kind, _), d in report.samples.items():
        if kind == "AddCE":
            bound = (1.0 + d["overlap"]) / 2.0
        elif kind == "PiCCE":
            bound = np.ones_like(d["top_eig"])
        elif kind == "Decoupled":
            bound = np.full_like(d["top_eig"], max(0.5, beta / 4.0))
        else:
            continue
        bad += int(np.sum(d["top_eig"] > bound + 1e-9))
    return bad


def starvation_probe(
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    kinds: Sequence[str] = ("PiCCE", "Decoupled"),
    n_train: int = 4500,
    n_val: int = 1000,
    n_test: int = 7000,
    train_cfg: Optional[TrainConfig] = None,
) -> GeometryReport:
    """Gradients on correct expert logits for samples with more than one correct expert.

    PiCCE: every correct expert except the winner. Decoupled: every correct expert.
    """
    base = train_cfg or TrainConfig()
    report = GeometryReport()
    for kind in kinds:
        grads = []
        for seed in seeds:
            spec = SuiteSpec.default("RareSpecialist", seed=seed, n_train=n_train, n_val=n_val, n_test=n_test)
            test, scores, beta = _train_test(spec, kind, base)
            t = test.targets
            keep = np.flatnonzero(t.sum(axis=1) > 1)
            K = test.K
            for i in keep:
                s = Sample(test.X[i], int(test.y[i]), test.M[i])
                lg = loss_grad(kind, scores[i], s, beta)
                correct = s.correct
                if kind == "PiCCE":
                    correct = correct[correct != lg.intermediates.jstar]
                grads.extend(lg.grad[K + correct].tolist())
        g = np.array(grads)
        report.samples[(kind, None)] = {"grad": g}
        gm, gs = _stats(g)
        rate = float(np.mean(g > 0)) if g.size else None
        report.rows.append(
            GeometryRow("starvation", kind, "all", "J>1", grad_mean=gm, grad_std=gs, positive_rate=rate, count=g.size)
        )
    return report


def coupling_probe(
    seeds: Sequence[int] = (0, 1, 2),
    J_values: Sequence[int] = (1, 3, 5, 9, 17),
    kinds: Sequence[str] = ("ASM", "Decoupled"),
    n_train: int = 4500,
    n_val: int = 1000,
    n_test: int = 7000,
    max_per_run: int = 128,
    fd_checks: int = 4,
    train_cfg: Optional[TrainConfig] = None,
) -> GeometryReport:
    """Operator norm of the K x J class-expert Hessian block on trained logits.

    A-SM uses the analytic rank-one block; Decoupled is zero by construction.
    The first ``fd_checks`` samples per run are cross-checked against a
    finite-difference Hessian; the largest deviation is kept in ``checks``.
    """
    base = train_cfg or TrainConfig()
    report = GeometryReport()
    fd_dev = {k: 0.0 for k in kinds}
    bound_bad = 0
    for kind in kinds:
        for J in J_values:
            norms = []
            for seed in seeds:
                spec = SuiteSpec.default(
                    "CouplingDistractors", seed=seed, J=J, n_train=n_train, n_val=n_val, n_test=n_test
                )
                test, scores, beta = _train_test(spec, kind, base)
                K = test.K
                for n, i in enumerate(range(min(max_per_run, len(test)))):
                    s = Sample(test.X[i], int(test.y[i]), test.M[i])
                    a = scores[i]
                    if kind == "ASM":
                        block = asm_mixed_block(a, s)
                        norm = op_norm_rect(block)
                        if norm > np.sqrt(J) / 4.0 + 1e-12:
                            bound_bad += 1
                    else:
                        block = due_hessian(DecScores(a[:K], a[K:]), s, SurrogateConfig("Decoupled", beta)).mixed_block
                        norm = 0.0
                    if n < fd_checks:
                        f = lambda z: loss_grad(kind, z, s, beta).loss  # noqa: E731
                        h = 1e-3 if kind == "Decoupled" else 1e-4
                        H = fd_hessian(f, a, h)
                        fd_dev[kind] = max(fd_dev[kind], float(np.abs(H[:K, K:] - block).max()))
                    norms.append(norm)
            report.samples[(kind, J)] = {"mixed_norm": np.array(norms)}
            m, sd = _stats(norms)
            report.rows.append(
                GeometryRow("coupling", kind, "J", str(J), mixed_norm_mean=m, mixed_norm_std=sd, count=len(norms))
            )
    report.checks = {"fd_max_dev": fd_dev, "asm_bound_violations": bound_bad}
    return report


PROBES = {
    "curvature": curvature_sweep,
    "starvation": starvation_probe,
    "coupling": coupling_probe,
}
