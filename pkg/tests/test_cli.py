import csv
import json

import pytest

from deferlab.cli import METRIC_COLUMNS, build_parser, main, parse_seeds, resolve_jobs

CFG = """
suite: NestedRedundant
suite_params: {J: 4, n_train: 200, n_val: 100, n_test: 200}
surrogates: [AddCE, {kind: Decoupled, beta: 0.5}]
seeds: [0]
train: {epochs: 3}
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(CFG)
    return str(p)


def test_parse_seeds():
    assert parse_seeds("0,1,2") == [0, 1, 2]
    assert parse_seeds("0-3,7") == [0, 1, 2, 3, 7]
    assert parse_seeds(None) is None


def test_jobs_env_override(monkeypatch):
    monkeypatch.delenv("DEFERLAB_JOBS", raising=False)
    assert resolve_jobs(None) == 1 and resolve_jobs(3) == 3
    monkeypatch.setenv("DEFERLAB_JOBS", "2")
    assert resolve_jobs(5) == 2


def test_generate(tmp_path, cfg):
    out = tmp_path / "d.csv"
    assert main(["generate", "--config", cfg, "--out", str(out), "--seeds", "1"]) == 0
    first = out.read_bytes()
    assert main(["generate", "--config", cfg, "--out", str(out), "--seeds", "1"]) == 0
    assert out.read_bytes() == first
    assert len(first.decode().splitlines()) == 1 + 500
    header = first.decode().splitlines()[0].split(",")
    assert header[:2] == ["split", "x_0"] and "alpha_3" in header
    assert main(["generate", "--suite", "RareSpecialist", "--out", str(tmp_path / "r.csv"), "--seeds", "0,1"]) == 0
    assert (tmp_path / "r_seed1.csv").exists()


def test_suite_outputs_and_determinism(tmp_path, cfg, monkeypatch):
    monkeypatch.delenv("DEFERLAB_JOBS", raising=False)
    out = tmp_path / "o"
    assert main(["suite", "--config", cfg, "--out", str(out), "--seeds", "0,1", "--jobs", "2"]) == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert tuple(rows[0].keys()) == METRIC_COLUMNS
    assert len(rows) == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["train"]["epochs"] == 3
    assert summary["config"]["train"]["lr"] == 0.05  # defaults are echoed
    first = (out / "metrics.csv").read_bytes()
    assert main(["suite", "--config", cfg, "--out", str(out), "--seeds", "0,1"]) == 0
    assert (out / "metrics.csv").read_bytes() == first
    assert (out / "runs" / "AddCE_seed0" / "model.json").exists()


def test_single_seed_std_zero(tmp_path, cfg):
    out = tmp_path / "o"
    assert main(["suite", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    for g in summary["groups"]:
        assert g["exact_regret"]["std"] == 0.0
    means = [g["exact_regret"]["mean"] for g in summary["groups"]]
    assert means == sorted(means)


def test_report(tmp_path, cfg):
    out = tmp_path / "o"
    main(["suite", "--config", cfg, "--out", str(out)])
    table = tmp_path / "t.csv"
    assert main(["report", str(out / "metrics.csv"), "--out", str(table)]) == 0
    head = table.read_text().splitlines()[0].split(",")
    assert head[:4] == ["suite", "surrogate", "J", "n_seeds"] and "exact_regret_std" in head


def test_constants(capsys):
    assert main(["constants", "--K", "16", "--J", "24", "--beta", "0.5"]) == 0
    lines = dict(l.split(",")[0::4] for l in capsys.readouterr().out.splitlines()[1:])
    assert float(lines["Mao25"]) == 40.0
    assert abs(float(lines["AddCE"]) - 50**0.5) < 1e-12
    assert lines["PiCCE"] == ""


def test_diagnose_probe_names():
    p = build_parser()
    for name in ("curvature", "starvation", "coupling"):
        assert p.parse_args(["diagnose", name]).probe == name
    with pytest.raises(SystemExit) as e:
        p.parse_args(["diagnose", "bogus"])
    assert e.value.code == 2


def test_errors_are_json(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("suite: Nope\n")
    assert main(["suite", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"
    assert main(["suite", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad.write_text("surrogates: []\n")
    assert main(["suite", "--config", str(bad)]) == 1
