import csv
import json

import numpy as np
import pytest

from piic import cli
from piic.workflows import ConfigError, diabetes_splits, diabetes_table, diabetes_workflow, ingest_csv

FAST_SEARCH = {"grid_points": 5, "simplex_budget": 15}


def _write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 3))
    y = X @ [1.5, 0.0, -1.0] + 0.5 * rng.standard_normal(40)
    lines = ["a,b,c,y"] + [",".join(repr(float(v)) for v in (*x, t)) for x, t in zip(X, y)]
    return _write(tmp_path / "toy.csv", "\n".join(lines) + "\n")


def _config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_ingest_errors(tmp_path):
    with pytest.raises(ConfigError, match="empty"):
        ingest_csv(_write(tmp_path / "e.csv", ""), "y")
    with pytest.raises(ConfigError, match="zero variance"):
        ingest_csv(_write(tmp_path / "z.csv", "x,y\n1,2\n1,3\n"), "y")
    with pytest.raises(ConfigError, match=r"missing values in rows \[3\]"):
        ingest_csv(_write(tmp_path / "m.csv", "x,y\n1,2\n,3\n2,4\n"), "y")
    with pytest.raises(ConfigError, match="non-numeric"):
        ingest_csv(_write(tmp_path / "s.csv", "x,y\n1,2\nabc,3\n"), "y")
    with pytest.raises(ConfigError, match="not in"):
        ingest_csv(_write(tmp_path / "r.csv", "x,y\n1,2\n2,3\n"), "z")
    with pytest.raises(ConfigError, match="no such file"):
        ingest_csv(tmp_path / "absent.csv", "y")


def test_ingest_standardises(toy_csv):
    d, info = ingest_csv(toy_csv, "y")
    assert (d.n, d.p) == (40, 3) and info["covariates"] == ["a", "b", "c"]
    np.testing.assert_allclose(d.X.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(d.X.std(axis=0), 1.0, rtol=1e-12)


def test_diabetes_ingest_and_splits(diabetes_csv):
    d, info = ingest_csv(diabetes_csv, "y")
    assert (d.n, d.p) == (442, 10)
    splits = diabetes_splits(442, 13, 1)
    assert splits.shape == (13, 34)
    assert sorted(splits.ravel().tolist()) == list(range(442))
    np.testing.assert_array_equal(splits, diabetes_splits(442, 13, 1))
    with pytest.raises(ConfigError):
        diabetes_splits(442, 5, 1)


def test_diabetes_workflow_shape(diabetes_csv):
    cfg = {"data": {"path": str(diabetes_csv)}, "seed": 2, "search": FAST_SEARCH,
           "sampler": {"chain_length": 5000, "burn_in": 2000, "thin": 2}}
    res = diabetes_workflow(cfg)
    header, rows, M = diabetes_table(res)
    assert M.shape == (26, 10) and len(rows) == 26 and len(header) == 12
    for rec in res["splits"]:
        for label in ("WAIC2", "PIIC2"):
            th = np.array(rec[label]["theta_hat"])
            assert rec[label]["active_set"] == np.flatnonzero(th != 0).tolist()
    assert res["n_splits_differing"] == sum(r["active_sets_differ"] for r in res["splits"])


def test_analyze_cli_outputs(tmp_path, toy_csv):
    cfg = {"data": {"path": str(toy_csv), "response": "y"}, "model": {"sigma2": 0.25},
           "prior": {"family": "normal"}, "search": FAST_SEARCH}
    out = tmp_path / "run"
    code = cli.run(["analyze", "--config", _config(tmp_path, cfg), "--out", str(out), "--seed",
                    "5", "--criteria", "waic,piic2", "--cross-check"])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(report["selections"]) == {"waic", "piic2"}
    sel = report["selections"]["piic2"]["report"]
    assert sel["penalty_xi"] is not None
    assert sel["piic2"] == pytest.approx(sel["piic"] + sel["penalty_xi"])
    assert report["selections"]["waic"]["cross_check"]["agree"]
    assert manifest["seed"] == 5 and manifest["command"] == "analyze"
    assert manifest["criteria"] == ["waic", "piic2"] and len(manifest["config_sha256"]) == 64
    assert json.loads(cli.dumps(report)) == report
    with (out / "table.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "criterion" and len(rows) == 3


def test_analyze_is_repeatable(tmp_path, toy_csv):
    cfg = {"data": {"path": str(toy_csv), "response": "y"}, "prior": {"family": "laplace"},
           "model": {"sigma2": 0.25}, "search": FAST_SEARCH, "seed": 3,
           "sampler": {"chain_length": 1500, "burn_in": 500}}
    path = _config(tmp_path, cfg)
    outs = []
    for k in range(2):
        assert cli.run(["analyze", "--config", path, "--out", str(tmp_path / f"o{k}")]) == 0
        outs.append((tmp_path / f"o{k}" / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_simulate_and_causal_cli(tmp_path):
    sim = {"scenarios": [{"n": 12, "p": 6, "noise": ["normal", 2.0]}],
           "overrides": {"R": 2, "M": 300, "search_one": FAST_SEARCH,
                         "search_three": {"grid_points": 3, "simplex_budget": 10}}}
    assert cli.run(["simulate", "--config", _config(tmp_path, sim), "--out",
                    str(tmp_path / "s"), "--seed", "1"]) == 0
    row = json.loads((tmp_path / "s" / "report.json").read_text())["rows"][0]
    assert sum(row["rate1"]) == 2 and sum(row["rate2"]) == 2
    causal = {"H": 3, "n": 150, "R": 2, "effects": [0, 1, 2],
              "coef": [[0, 0], [0.2, 0.5], [-0.2, 1.0]], "search": FAST_SEARCH}
    assert cli.run(["causal-sim", "--config", _config(tmp_path, causal, "c.json"), "--out",
                    str(tmp_path / "c"), "--seed", "4"]) == 0
    reps = json.loads((tmp_path / "c" / "report.json").read_text())["replications"]
    assert len(reps) == 2 and reps[0]["report"]["piic2"] is not None


def test_exit_codes(tmp_path, toy_csv, capsys):
    out = str(tmp_path / "x")
    assert cli.run(["analyze", "--out", out]) == 2  # no seed anywhere
    assert cli.run(["analyze", "--config", str(tmp_path / "nope.json"), "--out", out]) == 2
    assert cli.run(["bogus", "--out", out]) == 2
    bad = _config(tmp_path, {"scenarios": "not_a_preset"}, "b.json")
    assert cli.run(["simulate", "--config", bad, "--out", out, "--seed", "1"]) == 2
    base = {"data": {"path": str(toy_csv), "response": "y"}, "search": FAST_SEARCH}
    assert cli.run(["analyze", "--config", _config(tmp_path, base, "a.json"), "--out", out,
                    "--seed", "1", "--criteria", "aic"]) == 2
    broken = (tmp_path / "broken.json")
    broken.write_text("{not json")
    assert cli.run(["analyze", "--config", str(broken), "--out", out, "--seed", "1"]) == 2
    # an impossible acceptance window fails every sampled fit: numerical failure
    strict = {**base, "prior": {"family": "laplace"},
              "sampler": {"chain_length": 1200, "burn_in": 200, "accept_low": 0.99,
                          "accept_high": 1.0}}
    assert cli.run(["analyze", "--config", _config(tmp_path, strict, "n.json"), "--out", out,
                    "--seed", "1", "--criteria", "waic"]) == 3
    err = capsys.readouterr().err
    assert "config error" in err and "numerical failure" in err
