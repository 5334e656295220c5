"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary. The table
rows of criterion 6 run at R=100 and dominate the runtime (hours on one core).
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from piic import cli
from piic.causal import evaluate_ip, ipw_setup, MSMDataset
from piic.criteria import (
    FisherPair,
    add_xi_penalty,
    dic,
    evaluate,
    fisher_pair,
    piic,
    predictive_logdens_all,
    trace_penalty,
    waic,
    xi_score_all,
    xi_score_analytic,
    xi_score_fd,
)
from piic.experiments import run_comparison, scenario_set, ScenarioConfig, generate_dataset
from piic.hyperopt import XiSearchSpace, minimize_criterion
from piic.inference import SamplerConfig, conjugate_posterior, map_estimate, mcmc_sample
from piic.models import Dataset, LikelihoodModel, PriorSpec
from piic.workflows import diabetes_splits, ingest_csv, ols_noise_variance

import oracles
from conftest import ACCEPTANCE_LINES, make_binomial, make_linear

TABLE_SEED = 1
TABLE_R = 100
TABLE_RESULTS = {}


def verdict(tag, ok, detail):
    line = f"ACCEPTANCE {tag}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


# ---------------------------------------------------------------------------
# 1. conjugate oracle suite
# ---------------------------------------------------------------------------


def test_01_conjugate_oracle_suite():
    t0 = time.perf_counter()
    worst = {"waic": 0.0, "dic": 0.0, "piic": 0.0, "lpd": 0.0}
    for s in range(20):
        rng = np.random.default_rng(s)
        sigma2, zeta = float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.3, 3.0))
        d = make_linear(s, n=12, p=6, sigma2=sigma2)
        m = LikelihoodModel.linear_gaussian(sigma2)
        prior = PriorSpec.shared("normal", 6, zeta, 12)
        mean, cov = oracles.conjugate(d.X, d.y, sigma2, zeta)
        sampled = mcmc_sample(m, prior, d, SamplerConfig(chain_length=200_000, seed=100 + s))
        lpd_q = oracles.predictive_quadrature(d.X, d.y, sigma2, mean, cov)
        fp = fisher_pair(m, prior, d, map_estimate(m, prior, d))
        pen = float(np.trace(np.linalg.solve(fp.I1_hat, fp.I2_hat)))
        ref = {"waic": oracles.waic_quadrature(d.X, d.y, sigma2, mean, cov),
               "dic": oracles.dic_quadrature(d.X, d.y, sigma2, mean, cov),
               "piic": -lpd_q.sum() + pen}
        got = {"waic": waic(sampled, d), "dic": dic(sampled, d),
               "piic": piic(sampled, d, fp)[0]}
        for k in ref:
            worst[k] = max(worst[k], abs(got[k] - ref[k]) / abs(ref[k]))
        lpd = predictive_logdens_all(sampled, d)
        worst["lpd"] = max(worst["lpd"], float(np.max(np.abs(lpd - lpd_q) / np.abs(lpd_q))))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-2 and secs < 120
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f"; {secs:.1f}s"
    assert verdict(1, ok, f"max rel error {detail} (tol 1e-2, <120s)")


# ---------------------------------------------------------------------------
# 2. flat-prior AIC limit
# ---------------------------------------------------------------------------


def test_02_flat_prior_penalty_limit():
    m = LikelihoodModel.linear_gaussian(1.0)
    vals = []
    for s in range(20):
        d = make_linear(500 + s, n=500, p=3)
        prior = PriorSpec.shared("normal", 3, 1e12, 500)
        fp = fisher_pair(m, prior, d, map_estimate(m, prior, d))
        vals.append(trace_penalty(fp.I1_hat, fp.I2_hat)[0])
    mean = float(np.mean(vals))
    assert verdict(2, 2.7 <= mean <= 3.3, f"mean tr(I1^-1 I2) = {mean:.4f}, band [2.7, 3.3]")


# ---------------------------------------------------------------------------
# 3. xi-gradient checks
# ---------------------------------------------------------------------------


def test_03_xi_gradient_checks():
    worst_fd = 0.0
    for s in range(50):
        rng = np.random.default_rng(1000 + s)
        family = "normal" if s % 2 == 0 else "laplace"
        n, p = int(rng.integers(10, 25)), 3 * int(rng.integers(1, 3))
        if s % 4 in (0, 1):
            d, m = make_linear(s, n=n, p=p), LikelihoodModel.linear_gaussian(1.0)
        else:
            d, m = make_binomial(s, n=n, p=p, m=5), LikelihoodModel.logistic_binomial(5)
        q = 1 if s % 3 else 3
        xi = tuple(rng.uniform(0.3, 3.0, q))
        prior = PriorSpec.blocks(family, p, xi, n) if q == 3 else PriorSpec.shared(family, p, xi[0], n)
        post = mcmc_sample(m, prior, d, SamplerConfig(chain_length=6_000, burn_in=1_000, seed=s))
        a, b = xi_score_all(post, d), xi_score_fd(post, d)
        worst_fd = max(worst_fd, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    worst_an = 0.0
    for s in range(20):
        rng = np.random.default_rng(2000 + s)
        d = make_linear(s, n=12, p=int(rng.integers(1, 7)))
        m = LikelihoodModel.linear_gaussian(float(rng.uniform(0.5, 2)))
        post = conjugate_posterior(m, PriorSpec.shared("normal", d.p, float(rng.uniform(0.2, 5)), 12), d)
        a, b = xi_score_all(post, d), xi_score_analytic(post, d)
        worst_an = max(worst_an, float(np.max(np.abs(a - b) / np.abs(b))))
    ok = worst_fd < 1e-2 and worst_an < 1e-3
    assert verdict(3, ok, f"identity vs FD max rel {worst_fd:.2e} (tol 1e-2, 50 cases); "
                          f"identity vs analytic max rel {worst_an:.2e} (tol 1e-3, 20 cases)")


# ---------------------------------------------------------------------------
# 4. sparse locality
# ---------------------------------------------------------------------------


def test_04_sparse_locality():
    ok, changed, zero_diffs, n_out = True, 0, [], []
    rng = np.random.default_rng(4)
    for s in range(10):
        d = make_linear(40 + s, n=24, p=6, theta=[3, 0, 0, -2, 0, 1])
        m = LikelihoodModel.linear_gaussian(1.0)
        cfg = SamplerConfig(chain_length=6_000, burn_in=1_000, seed=s)
        xi = 2.0 + s
        prior = PriorSpec.shared("laplace", 6, xi, 24)
        rep = evaluate(m, prior, d, cfg, criteria=("piic",))
        act = rep.active
        n_out.append(6 - len(act.indices))
        full = fisher_pair(m, prior, d, rep.fit.theta_hat, active=act)
        I1, I2 = np.zeros((6, 6)), np.zeros((6, 6))
        ix = np.ix_(act.indices, act.indices)
        I1[ix], I2[ix] = full.I1_hat, full.I2_hat
        base = piic(rep.fit.restricted, d, FisherPair(I1, I2, rep.fit.theta_hat, act))[0]
        ok &= base == rep.piic
        outside = np.ones((6, 6), bool)
        outside[ix] = False
        for _ in range(5):
            J1, J2 = I1.copy(), I2.copy()
            J1[outside] = rng.standard_normal(outside.sum()) * 1e3
            J2[outside] = rng.standard_normal(outside.sum()) * 1e3
            val = piic(rep.fit.restricted, d, FisherPair(J1, J2, rep.fit.theta_hat, act))[0]
            changed += val != base
        wide = Dataset(np.column_stack([d.X[:, :3], np.zeros(24), d.X[:, 3:]]), d.y)
        rep_w = evaluate(m, PriorSpec.shared("laplace", 7, xi, 24), wide, cfg, criteria=("piic",))
        zero_diffs.append(abs(rep_w.piic - rep.piic))
    ok = ok and changed == 0 and max(zero_diffs) == 0.0 and sum(n_out) > 0
    assert verdict(4, ok, f"{changed} of 50 perturbations changed PIIC ({sum(n_out)} inactive "
                          f"coordinates in total); zero-column max |diff| {max(zero_diffs):.1e} "
                          "over 10 problems")


# ---------------------------------------------------------------------------
# 5. nesting monotonicity
# ---------------------------------------------------------------------------


def test_05_nesting_monotonicity():
    rows = [r for r in scenario_set("normal_prior_linear", seed=5)][:12]
    worst, count = -np.inf, 0
    for cfg in rows:
        for r in range(3):
            d, _ = generate_dataset(cfg, r)
            m = cfg.model()
            f = lambda prior: waic(conjugate_posterior(m, prior, d), d)
            grid = dict(grid_points=9, simplex_budget=0)
            one = minimize_criterion(lambda xi: f(cfg.prior(1, xi)), XiSearchSpace(q=1, **grid))
            three = minimize_criterion(lambda xi: f(cfg.prior(3, xi)), XiSearchSpace(q=3, **grid))
            worst = max(worst, three.value - one.value)
            count += 1
    assert verdict(5, worst <= 0.0, f"max(min WAIC q=3 - min WAIC q=1) = {worst:.3e} over "
                                    f"{count} datasets (must be <= 0)")


# ---------------------------------------------------------------------------
# 6. directional table reproduction
# ---------------------------------------------------------------------------


def _table_rows():
    out = []
    for cfg in scenario_set("laplace_prior_logistic", R=TABLE_R, seed=TABLE_SEED, classes=("one",)):
        if cfg.link != "logit":
            out.append(("a", cfg, "waic1", "piic1", 0.2))
    for cfg in scenario_set("laplace_prior_linear", R=TABLE_R, seed=TABLE_SEED, classes=("one",)):
        if cfg.noise == ("student_t", 2.0):
            out.append(("b", cfg, "waic1", "piic1", 0.3))
    for cfg in scenario_set("normal_prior_linear", R=TABLE_R, seed=TABLE_SEED, classes=("three",)):
        if cfg.noise == ("normal", 2.0) and cfg.theta_pattern == (2.0, 2.0, 2.0):
            out.append(("c", cfg, "waic2", "piic2", 0.0))
    return out


@pytest.mark.parametrize("part,cfg,base,new,margin", _table_rows(),
                         ids=lambda v: v.label.replace(" ", "_") if hasattr(v, "label") else None)
def test_06_table_row(part, cfg, base, new, margin):
    t0 = time.perf_counter()
    row = run_comparison(cfg)
    mins = (time.perf_counter() - t0) / 60
    w, p = row.mean_risk[base], row.mean_risk[new]
    rate = row.rate1 if base == "waic1" else row.rate2
    ok = (w - p > margin) and not row.failed_replications and mins <= 30
    TABLE_RESULTS[(part, cfg.label)] = ok
    line = (f"6({part}) {cfg.label}: {base.upper()} {w:.3f} vs {new.upper()} {p:.3f}, "
            f"margin {w - p:+.3f} (need > {margin}), Rate {rate}, failed reps "
            f"{len(row.failed_replications)}, {mins:.1f} min")
    print(line)
    ACCEPTANCE_LINES.append("  " + line + (" PASS" if ok else " FAIL"))
    assert ok, line


def test_06_summary():
    expected = len(_table_rows())
    passed = sum(TABLE_RESULTS.values())
    ok = len(TABLE_RESULTS) == expected and passed == expected
    by_part = {k: sum(v for (p, _), v in TABLE_RESULTS.items() if p == k) for k in "abc"}
    tot = {k: sum(1 for (p, _) in TABLE_RESULTS if p == k) for k in "abc"}
    detail = ", ".join(f"({k}) {by_part[k]}/{tot[k]} rows" for k in "abc")
    assert verdict(6, ok, f"{passed}/{expected} table rows meet direction and margin: {detail}")


# ---------------------------------------------------------------------------
# 7. causal reduction
# ---------------------------------------------------------------------------


def test_07_causal_reduction():
    mismatches = 0
    for s in range(10):
        family = "normal" if s % 2 == 0 else "laplace"
        d = make_linear(70 + s, n=20, p=3)
        m = LikelihoodModel.linear_gaussian(1.0)
        prior = PriorSpec.shared(family, 3, 0.8, 20)
        cfg = SamplerConfig(chain_length=5_000, burn_in=1_000, seed=s)
        msm = MSMDataset(np.zeros(20, int), d.y, np.zeros((20, 1)), 1, features=d.X)
        ip = evaluate_ip(m, prior, ipw_setup(msm), cfg, with_xi_penalty=True)
        std = add_xi_penalty(evaluate(m, prior, d, cfg, criteria=("piic",)), d)
        mismatches += (ip.piic != std.piic) + (ip.piic2 != std.piic2)
    assert verdict(7, mismatches == 0, f"{mismatches} bitwise mismatches in PIIC/PIIC2 over 10 "
                                       "problems (normal and Laplace priors)")


# ---------------------------------------------------------------------------
# 8. rate bookkeeping and paired seeds
# ---------------------------------------------------------------------------


def test_08_rate_bookkeeping():
    fast = dict(M=500, search_one={"grid_points": 7, "simplex_budget": 20},
                search_three={"grid_points": 4, "simplex_budget": 20})
    cfgs = [ScenarioConfig(n=12, p=6, noise=("normal", 2.0), R=10, seed=8, **fast),
            ScenarioConfig(n=18, p=6, theta_pattern=(3, 2, 1), prior_family="laplace",
                           noise=("student_t", 2.0), R=6, seed=8,
                           sampler={"chain_length": 2_000, "burn_in": 500, "thin": 2}, **fast)]
    ok, notes = True, []
    for cfg in cfgs:
        row = run_comparison(cfg)
        R_used = cfg.R - len(row.failed_replications)
        sums = [sum(t) for t in (row.rate1, row.rate2) if t is not None]
        paired = all(len(set(rec["dataset_sha256"].values())) == 1 for rec in row.records
                     if "error" not in rec)
        ok &= all(v == R_used for v in sums) and paired and R_used == cfg.R
        notes.append(f"{cfg.label}: rate sums {sums} for R={cfg.R}, paired hashes {paired}")
    assert verdict(8, ok, "; ".join(notes))


# ---------------------------------------------------------------------------
# 9 and 10. diabetes workflow and determinism
# ---------------------------------------------------------------------------

DIABETES_CONFIG = {"seed": 1, "sampler": {"chain_length": 10_000, "burn_in": 2_000, "thin": 2}}


@pytest.fixture(scope="module")
def diabetes_run(tmp_path_factory, diabetes_csv):
    root = tmp_path_factory.mktemp("diabetes_cli")
    cfg = {**DIABETES_CONFIG, "data": {"path": str(diabetes_csv)}}
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    out = root / "run1"
    code = cli.run(["diabetes", "--config", str(path), "--out", str(out)])
    return code, out, cfg


def test_09_diabetes_workflow(diabetes_run, diabetes_csv):
    code, out, cfg = diabetes_run
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    with (out / "table.csv").open() as fh:
        lines = fh.read().strip().splitlines()
    shape = (len(lines) - 1, len(lines[0].split(",")) - 2)
    data, _ = ingest_csv(diabetes_csv, "y")
    splits = diabetes_splits(442, 13, cfg["seed"])
    zeros, kkt_worst = 0, -np.inf
    for rec, idx in zip(report["splits"], splits):
        sub = data.rows(np.sort(idx))
        X, y = sub.X - sub.X.mean(axis=0), sub.y - sub.y.mean()
        s2 = ols_noise_variance(Dataset(X, y))
        for label in ("WAIC2", "PIIC2"):
            th = np.array(rec[label]["theta_hat"])
            lam = np.array(rec[label]["xi_hat"])[[0, 0, 0, 0, 1, 1, 1, 1, 1, 1]]
            g = X.T @ (y - X @ th) / s2
            off = th == 0.0
            zeros += int(off.sum())
            # exact zeros must satisfy the subgradient condition of the sparse MAP
            if off.any():
                kkt_worst = max(kkt_worst, float(np.max(np.abs(g[off]) - lam[off])))
    differ = report["n_splits_differing"]
    ok = shape == (26, 10) and differ >= 8 and zeros > 0 and kkt_worst <= 1e-6
    assert verdict(9, ok, f"table {shape[0]}x{shape[1]}, active sets differ on {differ}/13 "
                          f"splits (need >= 8), {zeros} exact zeros, max KKT excess "
                          f"{kkt_worst:.1e}")


def test_10_determinism(diabetes_run, tmp_path):
    code, out, _ = diabetes_run
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    cfg_path = tmp_path / "replay.json"
    cfg_path.write_text(json.dumps(manifest["config"]))
    same = {}
    rerun = tmp_path / "diabetes2"
    cli.run([manifest["command"], "--config", str(cfg_path), "--out", str(rerun),
             "--seed", str(manifest["seed"])])
    same["diabetes"] = (rerun / "report.json").read_bytes() == (out / "report.json").read_bytes()
    small = {
        "simulate": {"seed": 3, "scenarios": [{"n": 18, "p": 6, "theta_pattern": [3, 2, 1],
                                               "prior_family": "laplace",
                                               "noise": ["student_t", 2.0]}],
                     "overrides": {"R": 2, "M": 500,
                                   "sampler": {"chain_length": 2000, "burn_in": 500},
                                   "search_one": {"grid_points": 5, "simplex_budget": 10},
                                   "search_three": {"grid_points": 3, "simplex_budget": 10}}},
        "causal-sim": {"seed": 4, "H": 2, "n": 120, "R": 2, "prior": {"family": "laplace"},
                       "sampler": {"chain_length": 3000, "burn_in": 1000},
                       "search": {"grid_points": 5, "simplex_budget": 10}},
    }
    for cmd, cfg in small.items():
        p = tmp_path / f"{cmd}.json"
        p.write_text(json.dumps(cfg))
        blobs = []
        for k in range(2):
            o = tmp_path / f"{cmd}_{k}"
            cli.run([cmd, "--config", str(p), "--out", str(o)])
            blobs.append(((o / "report.json").read_bytes(), (o / "table.csv").read_bytes()))
        same[cmd] = blobs[0] == blobs[1]
    assert verdict(10, all(same.values()), "byte-identical reruns: " +
                   ", ".join(f"{k} {v}" for k, v in same.items()))
