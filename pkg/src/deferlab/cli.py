"""Command-line entry point: dataset generation, seed sweeps, geometry probes,
transfer constants and report aggregation.

Every command is a pure function of its configuration and seeds; rerunning
with the same inputs rewrites identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np
import yaml

from .evaluation import evaluate, transfer_constant
from .geometry import PROBES
from .suites import SUITES, SuiteSpec, generate, write_dataset
from .surrogates import KINDS, SurrogateConfig
from .trainer import TrainConfig, train

METRIC_COLUMNS = (
    "suite",
    "surrogate",
    "seed",
    "J",
    "system_accuracy",
    "defer_loss",
    "coverage",
    "exact_regret",
    "specialist_selection",
    "shared_correct_routing",
    "best_expert_selection",
)
NUMERIC = METRIC_COLUMNS[4:]


class ConfigError(ValueError):
    pass


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --------------------------------------------------------------------------- config


class RunConfig:
    """Suite spec overrides, surrogate list, seeds and training overrides."""

    def __init__(self, suite="NestedRedundant", suite_params=None, surrogates=None, seeds=(0,), train=None, probe=None):
        if suite not in SUITES:
            raise ConfigError(f"unknown suite {suite!r}; expected one of {list(SUITES)}")
        self.suite = suite
        self.suite_params = dict(suite_params or {})
        self.surrogates = [self._surrogate(s) for s in (surrogates if surrogates is not None else KINDS)]
        self.seeds = [int(s) for s in seeds]
        if not self.surrogates:
            raise ConfigError("surrogate list must be nonempty")
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        try:
            self.train = TrainConfig(**dict(train or {}))
            self.spec(self.seeds[0])
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        self.probe = dict(probe or {})

    @staticmethod
    def _surrogate(s) -> SurrogateConfig:
        if isinstance(s, str):
            s = {"kind": s}
        if not isinstance(s, dict) or s.get("kind") not in KINDS:
            raise ConfigError(f"bad surrogate entry {s!r}; kinds are {list(KINDS)}")
        return SurrogateConfig(**s)

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        unknown = set(raw) - {"suite", "suite_params", "surrogates", "seeds", "train", "probe"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def spec(self, seed: int) -> SuiteSpec:
        return SuiteSpec.default(self.suite, seed=seed, **self.suite_params)

    def to_dict(self) -> dict:
        return {
            "suite": self.spec(self.seeds[0]).to_dict() | {"seed": None},
            "surrogates": [{"kind": s.kind, "beta": s.beta, "tie_break": s.tie_break} for s in self.surrogates],
            "seeds": self.seeds,
            "train": self.train.to_dict(),
        }


def parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    """'0,1,2' or '0-4' (inclusive) or a mix of both."""
    if text is None:
        return None
    seeds: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def resolve_jobs(flag: Optional[int]) -> int:
    env = os.environ.get("DEFERLAB_JOBS")
    jobs = int(env) if env else (flag or 1)
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return jobs


# --------------------------------------------------------------------------- runs


def _one_run(args):
    spec, sur, tcfg, run_dir = args
    ds = generate(spec)
    cfg = replace(tcfg, seed=spec.seed, surrogate=sur)
    model, hist = train(ds, cfg)
    m = evaluate(model, sur.kind, ds.test)
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        model.save(os.path.join(run_dir, "model.json"))
        atomic_write(os.path.join(run_dir, "history.csv"), hist.to_csv())
    row = {
        "suite": spec.suite,
        "surrogate": sur.kind,
        "seed": spec.seed,
        "J": spec.J,
        "system_accuracy": m.system_accuracy,
        "defer_loss": m.empirical_defer_loss,
        "coverage": m.coverage,
        "exact_regret": m.exact_regret,
        "specialist_selection": m.specialist_selection,
        "shared_correct_routing": m.shared_correct_routing,
        "best_expert_selection": m.best_expert_selection,
    }
    return row


def _map(fn, jobs_list, jobs: int):
    if jobs == 1 or len(jobs_list) <= 1:
        return [fn(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=min(jobs, len(jobs_list))) as pool:
        return list(pool.map(fn, jobs_list))


def run_suite(cfg: RunConfig, out_dir: Optional[str] = None, jobs: int = 1) -> List[dict]:
    tasks = []
    for sur in cfg.surrogates:
        for seed in cfg.seeds:
            run_dir = os.path.join(out_dir, "runs", f"{sur.kind}_seed{seed}") if out_dir else None
            tasks.append((cfg.spec(seed), sur, cfg.train, run_dir))
    return _map(_one_run, tasks, jobs)


def metrics_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([fmt(r[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def summarize(rows: Sequence[dict]) -> dict:
    """Mean and population std per (suite, surrogate, J), ordered by mean exact regret."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["suite"], r["surrogate"], int(r["J"])), []).append(r)
    out = []
    for (suite, sur, J), rs in groups.items():
        entry = {"suite": suite, "surrogate": sur, "J": J, "n_seeds": len(rs)}
        for c in NUMERIC:
            vals = [float(r[c]) for r in rs if r[c] not in (None, "")]
            entry[c] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))} if vals else None
        out.append(entry)
    out.sort(key=lambda e: (e["suite"], e["J"], e["exact_regret"]["mean"], e["surrogate"]))
    return {"groups": out}


def _read_metrics(path: str) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(METRIC_COLUMNS) - set(rows[0]):
        raise ConfigError(f"{path}: missing metric columns")
    for r in rows:
        for c in NUMERIC:
            r[c] = float(r[c]) if r[c] != "" else None
    return rows


def report_table(summary: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["suite", "surrogate", "J", "n_seeds", *[f"{c}_{s}" for c in NUMERIC for s in ("mean", "std")]])
    for e in summary["groups"]:
        cells = []
        for c in NUMERIC:
            cells += ["", ""] if e[c] is None else [fmt(e[c]["mean"]), fmt(e[c]["std"])]
        w.writerow([e["suite"], e["surrogate"], e["J"], e["n_seeds"], *cells])
    return buf.getvalue()


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------- commands


def cmd_generate(args) -> None:
    cfg = RunConfig.load(args.config)
    if args.suite and args.suite != cfg.suite:
        cfg = RunConfig(suite=args.suite, seeds=cfg.seeds, train=cfg.train.to_dict())
    seeds = parse_seeds(args.seeds) or cfg.seeds
    if not args.out:
        raise ConfigError("generate needs --out")
    for seed in seeds:
        path = args.out if len(seeds) == 1 else _seeded_path(args.out, seed)
        write_dataset(generate(cfg.spec(seed)), path)


def _seeded_path(path: str, seed: int) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_seed{seed}{ext or '.csv'}"


def cmd_suite(args) -> None:
    cfg = RunConfig.load(args.config)
    if args.seeds:
        cfg.seeds = parse_seeds(args.seeds)
    out = args.out or "deferlab-out"
    rows = run_suite(cfg, out, resolve_jobs(args.jobs))
    atomic_write(os.path.join(out, "metrics.csv"), metrics_csv(rows))
    summary = summarize(rows)
    summary["config"] = cfg.to_dict()
    atomic_write(os.path.join(out, "summary.json"), dumps(summary))


def cmd_diagnose(args) -> None:
    cfg = RunConfig.load(args.config)
    seeds = parse_seeds(args.seeds) or cfg.seeds
    report = PROBES[args.probe](seeds=seeds, train_cfg=cfg.train, **cfg.probe)
    text = report.to_csv()
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_constants(args) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["surrogate", "K", "J", "beta", "constant"])
    for kind in KINDS:
        w.writerow([kind, args.K, args.J, fmt(float(args.beta)), fmt(transfer_constant(kind, args.beta, args.K, args.J))])
    if args.out:
        atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def cmd_report(args) -> None:
    rows = [r for p in args.csvs for r in _read_metrics(p)]
    if not rows:
        raise ConfigError("no metric rows found")
    text = report_table(summarize(rows))
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deferlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True, jobs=False):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--out", help="output file or directory")
        if seeds:
            sp.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-4")
        if jobs:
            sp.add_argument("--jobs", type=int, default=None, help="worker processes (DEFERLAB_JOBS overrides)")

    g = sub.add_parser("generate", help="write a synthetic suite as CSV plus JSON sidecar")
    common(g)
    g.add_argument("--suite", choices=SUITES)
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("suite", help="train and evaluate every (surrogate, seed) pair")
    common(s, jobs=True)
    s.set_defaults(fn=cmd_suite)

    d = sub.add_parser("diagnose", help="run a logit-space geometry probe")
    d.add_argument("probe", choices=sorted(PROBES))
    common(d, jobs=True)
    d.set_defaults(fn=cmd_diagnose)

    c = sub.add_parser("constants", help="tabulate regret transfer constants")
    c.add_argument("--K", type=int, default=16)
    c.add_argument("--J", type=int, default=24)
    c.add_argument("--beta", type=float, default=0.5)
    common(c, seeds=False)
    c.set_defaults(fn=cmd_constants)

    r = sub.add_parser("report", help="aggregate metrics CSVs into mean/std tables")
    r.add_argument("csvs", nargs="+")
    common(r, seeds=False)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except Exception as e:  # reported as machine-readable JSON
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
