"""End-to-end workflows behind the command line: CSV ingestion, analyze, diabetes splits."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .criteria import add_xi_penalty, evaluate
from .hyperopt import XiSearchSpace, minimize_criterion
from .inference import SamplerConfig, is_conjugate
from .models import Dataset, LikelihoodModel, ModelError, PriorSpec


class ConfigError(ValueError):
    """Invalid run configuration or input file."""


CRITERIA = ("dic", "waic", "piic", "piic2")


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def ingest_csv(path, response: str, covariates=None, standardize: bool = True,
               kind: str = "gaussian", trials=None):
    """Read a numeric CSV into a :class:`Dataset`.

    Covariates are optionally standardised to mean 0 and unit (population)
    variance. Returns ``(dataset, info)``; ``info`` records the column names
    and standardisation constants.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise ConfigError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise ConfigError(f"{path} has a header but no data rows")
    if response not in header:
        raise ConfigError(f"response column {response!r} not in {header}")
    covariates = [h for h in header if h != response] if covariates is None else list(covariates)
    missing_cols = [c for c in covariates if c not in header]
    if missing_cols:
        raise ConfigError(f"covariate columns {missing_cols} not in {header}")
    cols = [header.index(c) for c in [response] + covariates]
    missing, bad = [], []
    values = np.empty((len(body), len(cols)))
    for i, r in enumerate(body, start=2):
        for k, c in enumerate(cols):
            cell = r[c].strip() if c < len(r) else ""
            if cell == "" or cell.lower() in ("na", "nan"):
                missing.append(i)
                break
            try:
                values[i - 2, k] = float(cell)
            except ValueError:
                bad.append((i, header[c], cell))
                break
    if missing:
        raise ConfigError(f"missing values in rows {sorted(set(missing))}")
    if bad:
        raise ConfigError(f"non-numeric cells: {bad[:5]}")
    y, X = values[:, 0], values[:, 1:]
    info = {"response": response, "covariates": covariates, "standardized": bool(standardize)}
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        zero = [covariates[j] for j in np.flatnonzero(sd == 0)]
        if zero:
            raise ConfigError(f"zero variance column(s) {zero}")
        X = (X - mu) / sd
        info["means"] = mu.tolist()
        info["scales"] = sd.tolist()
    return Dataset(X, y, kind, trials), info


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _space(q, search: dict | None) -> XiSearchSpace:
    return XiSearchSpace.from_dict(q, search)


def select_xi(model, prior, data, criterion: str, config: SamplerConfig, search=None,
              analytic=True):
    """``argmin`` of WAIC, DIC or PIIC over ``xi`` (PIIC2 reuses the PIIC minimiser)."""
    name = "piic" if criterion == "piic2" else criterion
    if name not in ("dic", "waic", "piic"):
        raise ConfigError(f"unknown criterion {criterion!r}")

    def objective(xi):
        rep = evaluate(model, prior.with_xi(xi), data, config, criteria=(name,),
                       analytic=analytic)
        return getattr(rep, name)

    return minimize_criterion(objective, _space(prior.q, search))


def report_at(model, prior, data, config, criteria, analytic=True, xi_penalty=False):
    rep = evaluate(model, prior, data, config, criteria=tuple(c for c in criteria if c != "piic2")
                   + (("piic",) if "piic2" in criteria else ()), analytic=analytic)
    if xi_penalty:
        add_xi_penalty(rep, data)
    return rep


def model_from_config(cfg: dict, data: Dataset) -> LikelihoodModel:
    kind = cfg.get("likelihood", "linear_gaussian")
    if kind == "linear_gaussian":
        sigma2 = cfg.get("sigma2", "ols")
        if sigma2 == "ols":
            sigma2 = ols_noise_variance(data)
        return LikelihoodModel.linear_gaussian(float(sigma2))
    if kind == "logistic_binomial":
        return LikelihoodModel.logistic_binomial(int(cfg["trials"]))
    raise ConfigError(f"unknown likelihood {kind!r}")


def prior_from_config(cfg: dict, p: int, n: int) -> PriorSpec:
    family = cfg.get("family", "normal")
    groups = cfg.get("groups")
    if groups is None:
        groups = [0] * p
    if len(groups) != p:
        raise ConfigError(f"prior groups have length {len(groups)}, expected {p}")
    q = max(groups) + 1
    xi = cfg.get("xi", [1.0] * q)
    return PriorSpec(family, tuple(groups), tuple(xi), int(cfg.get("n0", n)))


def ols_noise_variance(data: Dataset) -> float:
    """Residual variance ``RSS / (n - p - 1)`` of least squares with an intercept."""
    n, p = data.X.shape
    if n - p - 1 < 1:
        raise ConfigError("too few rows for the least-squares noise variance")
    Z = np.hstack([np.ones((n, 1)), data.X])
    beta, *_ = np.linalg.lstsq(Z, data.y, rcond=None)
    r = data.y - Z @ beta
    return float(r @ r / (n - p - 1))


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def analyze(config: dict, criteria=None, cross_check: bool = False) -> dict:
    """Select ``xi`` by each requested criterion and report every criterion there."""
    data_cfg = config.get("data")
    if not data_cfg:
        raise ConfigError("analyze needs a 'data' section")
    data, info = ingest_csv(data_cfg["path"], data_cfg["response"], data_cfg.get("covariates"),
                            data_cfg.get("standardize", True),
                            data_cfg.get("kind", "gaussian"), data_cfg.get("trials"))
    if data_cfg.get("center_response", False):
        data = Dataset(data.X, data.y - data.y.mean(), data.kind, data.trials)
    model = model_from_config(config.get("model", {}), data)
    prior = prior_from_config(config.get("prior", {}), data.p, data.n)
    sampler = SamplerConfig.from_dict({**config.get("sampler", {}), "seed": config["seed"]})
    criteria = list(criteria or config.get("criteria", ["waic", "piic"]))
    out = {"data": {**info, "n": data.n, "p": data.p, "sha256": data.digest()},
           "model": {"kind": model.kind, "sigma2": model.sigma2, "trials": model.trials},
           "prior": {"family": prior.family, "groups": list(prior.groups), "n0": prior.n0},
           "selections": {}}
    for crit in criteria:
        res = select_xi(model, prior, data, crit, sampler, config.get("search"))
        rep = report_at(model, prior.with_xi(res.xi_hat), data, sampler, CRITERIA,
                        xi_penalty=True)
        entry = {"xi_hat": [float(v) for v in res.xi_hat], "objective": res.value,
                 "evaluations": res.n_evals, "report": rep.to_dict(),
                 "theta_hat": [float(v) for v in rep.fit.theta_hat]}
        if cross_check and is_conjugate(model, prior):
            mc = evaluate(model, prior.with_xi(res.xi_hat), data, sampler,
                          criteria=("dic", "waic", "piic"), analytic=False)
            diffs = {k: abs(getattr(mc, k) - getattr(rep, k)) / abs(getattr(rep, k))
                     for k in ("dic", "waic", "piic")}
            entry["cross_check"] = {"relative_difference": diffs,
                                    "agree": bool(max(diffs.values()) < 1e-2)}
        out["selections"][crit] = entry
    return out


def analyze_table(result: dict):
    header = ["criterion", "xi_hat", "dic", "waic", "piic", "piic2", "active_set"]
    rows = []
    for crit, e in result["selections"].items():
        r = e["report"]
        rows.append([crit, ";".join(f"{v:.6g}" for v in e["xi_hat"])]
                    + [_fmt(r[k]) for k in ("dic", "waic", "piic", "piic2")]
                    + ["" if r["active_set"] is None else ";".join(str(j + 1) for j in r["active_set"])])
    return header, rows


def _fmt(v, digits=3):
    return "" if v is None or (isinstance(v, float) and not math.isfinite(v)) else f"{v:.{digits}f}"


# ---------------------------------------------------------------------------
# diabetes
# ---------------------------------------------------------------------------

DIABETES_COLUMNS = ("age", "sex", "bmi", "map", "tc", "ldl", "hdl", "tch", "ltg", "glu")


def diabetes_splits(n: int, n_splits: int, seed: int) -> np.ndarray:
    """Seeded partition of ``range(n)`` into equal disjoint splits, shape (n_splits, size)."""
    if n % n_splits:
        raise ConfigError(f"{n} rows do not split evenly into {n_splits}")
    perm = np.random.default_rng(seed).permutation(n)
    return perm.reshape(n_splits, n // n_splits)


def diabetes_workflow(config: dict) -> dict:
    """WAIC2- and PIIC2-selected sparse fits on each of 13 disjoint splits of 34 rows.

    Two Laplace groups: the four demographic/physical covariates share one
    rate, the six serum measurements another. Responses and covariates are
    centred within each split (the intercept is absorbed) and the noise
    variance is the split's least-squares residual variance.
    """
    d = config.get("data", {})
    covs = d.get("covariates", list(DIABETES_COLUMNS))
    data, info = ingest_csv(d["path"], d.get("response", "y"), covs,
                            d.get("standardize", True))
    n_splits = int(config.get("n_splits", 13))
    if data.n != 442:
        raise ConfigError(f"diabetes data must have 442 rows, got {data.n}")
    if data.p != 10:
        raise ConfigError(f"diabetes data must have 10 covariates, got {data.p}")
    seed = int(config["seed"])
    splits = diabetes_splits(data.n, n_splits, seed)
    groups = tuple(config.get("groups", [0, 0, 0, 0, 1, 1, 1, 1, 1, 1]))
    sampler_cfg = config.get("sampler", {})
    search = config.get("search")
    records = []
    for k, idx in enumerate(splits):
        sub = data.rows(np.sort(idx))
        X = sub.X - sub.X.mean(axis=0)
        y = sub.y - sub.y.mean()
        split = Dataset(X, y)
        model = LikelihoodModel.linear_gaussian(ols_noise_variance(split))
        prior = PriorSpec("laplace", groups, (1.0,) * (max(groups) + 1), split.n)
        cfg = SamplerConfig.from_dict({**sampler_cfg, "seed": seed * 1000 + k})
        rec = {"split": k + 1, "rows": [int(i) for i in np.sort(idx)], "sigma2": model.sigma2,
               "sha256": split.digest()}
        for crit, label in (("waic", "WAIC2"), ("piic2", "PIIC2")):
            res = select_xi(model, prior, split, crit, cfg, search)
            rep = report_at(model, prior.with_xi(res.xi_hat), split, cfg,
                            ("waic", "piic2") if crit == "waic" else ("piic2",),
                            xi_penalty=crit == "piic2")
            theta = rep.fit.theta_hat
            rec[label] = {
                "xi_hat": [float(v) for v in res.xi_hat],
                "criterion": res.value if crit == "waic" else rep.piic2,
                "theta_hat": [float(v) for v in theta],
                "active_set": [int(j) for j in np.flatnonzero(theta != 0.0)],
                "report": rep.to_dict(),
            }
        rec["active_sets_differ"] = rec["WAIC2"]["active_set"] != rec["PIIC2"]["active_set"]
        records.append(rec)
    return {"data": {**info, "n": data.n, "p": data.p, "sha256": data.digest()},
            "split_seed": seed, "splits": records,
            "n_splits_differing": int(sum(r["active_sets_differ"] for r in records))}


def diabetes_table(result: dict):
    """26 x 10 coefficient matrix (WAIC2 then PIIC2 per split) plus labels."""
    names = result["data"]["covariates"]
    header = ["split", "criterion"] + list(names)
    rows, matrix = [], []
    for rec in result["splits"]:
        for label in ("WAIC2", "PIIC2"):
            th = rec[label]["theta_hat"]
            matrix.append(th)
            rows.append([str(rec["split"]), label] + [f"{v:.2f}" for v in th])
    return header, rows, np.array(matrix)
