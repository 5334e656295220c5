"""Simulation harness: scenario generation, criterion-driven selection, KL risk.

Each replication draws one dataset and runs four selection arms on it:

* ``waic1`` / ``piic1``: one shared hyper-parameter, chosen by WAIC / PIIC;
* ``waic2``: one hyper-parameter per coordinate block, chosen by WAIC;
* ``piic2``: PIIC picks a hyper-parameter within each class (shared, per
  block) and PIIC2 picks the class.

Every arm is scored by the KL risk of its full posterior predictive, using
the same fresh draws from the true law.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .criteria import (
    UnderflowError,
    add_xi_penalty,
    evaluate,
    fit_at,
    fisher_pair,
    piic,
    predictive_logdens_all,
    waic,
)
from .hyperopt import ObjectiveError, XiSearchSpace, minimize_criterion
from .inference import ConvergenceError, SamplerConfig, SamplerDiagnosticError
from .models import Dataset, LikelihoodModel, ModelError, PriorSpec

EQUAL_TOL = 1e-9
ARMS = ("waic1", "piic1", "waic2", "piic2")


LINKS = ("logit", "probit", "probit_exp")

# Shorter chains than the single-analysis default: thousands of fits per replication.
EXPERIMENT_SAMPLER = {"chain_length": 10_000, "burn_in": 2_000, "thin": 2}


@dataclass(frozen=True)
class ScenarioConfig:
    """One table row.

    ``noise`` is ``("normal", variance)`` or ``("student_t", dof)`` for the
    linear model; ``link`` is ``"logit"``, ``"probit"`` (``Phi(eta)``) or
    ``"probit_exp"`` (``Phi(exp(eta))``) with ``trials`` for the binomial model
    (``noise`` ignored). ``classes`` picks the arm pairs:
    ``"one"`` runs waic1/piic1, ``"three"`` runs waic2/piic2.
    """

    n: int
    p: int
    theta_pattern: tuple = (2.0, 2.0, 2.0)
    response: str = "gaussian"
    noise: tuple = ("normal", 1.0)
    link: str = "logit"
    trials: int = 10
    prior_family: str = "normal"
    classes: tuple = ("one", "three")
    R: int = 100
    M: int = 10_000
    seed: int = 0
    sampler: dict = field(default_factory=lambda: dict(EXPERIMENT_SAMPLER))
    search_one: dict = field(default_factory=dict)
    search_three: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p % 3:
            raise ModelError("p must be divisible by 3")
        if self.R < 1 or self.M < 1 or self.n < 1:
            raise ModelError("n, R and M must be positive")
        if self.response not in ("gaussian", "binomial"):
            raise ModelError(f"unknown response {self.response!r}")
        if self.response == "gaussian" and self.noise[0] not in ("normal", "student_t"):
            raise ModelError(f"unknown noise {self.noise[0]!r}")
        if self.response == "binomial" and self.link not in LINKS:
            raise ModelError(f"unknown link {self.link!r}")
        object.__setattr__(self, "theta_pattern", tuple(float(v) for v in self.theta_pattern))
        object.__setattr__(self, "noise", (self.noise[0], float(self.noise[1])))
        object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        for k in ("theta_pattern", "noise", "classes"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def theta_star(self) -> np.ndarray:
        return np.repeat(np.asarray(self.theta_pattern), self.p // 3)

    @property
    def label(self) -> str:
        pat = ",".join(f"{v:g}" for v in self.theta_pattern)
        if self.response == "gaussian":
            kind, par = self.noise
            law = f"N(0,{par:g})" if kind == "normal" else f"t({par:g})"
            return f"n={self.n} p={self.p} ({pat}) {law}"
        return f"n={self.n} p={self.p} ({pat}) m={self.trials} {self.link}"

    def model(self) -> LikelihoodModel:
        if self.response == "binomial":
            return LikelihoodModel.logistic_binomial(self.trials)
        kind, par = self.noise
        if kind == "normal":
            return LikelihoodModel.linear_gaussian(par)
        # finite t variance dof/(dof-2); unit scale otherwise
        return LikelihoodModel.linear_gaussian(par / (par - 2.0) if par > 2 else 1.0)

    def prior(self, q: int, xi=None) -> PriorSpec:
        xi = [1.0] * q if xi is None else list(np.atleast_1d(xi))
        return PriorSpec.blocks(self.prior_family, self.p, xi, self.n)

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig.from_dict({**self.sampler, "seed": int(seed)})

    def space(self, q: int) -> XiSearchSpace:
        return XiSearchSpace.from_dict(q, self.search_one if q == 1 else self.search_three)


@dataclass(frozen=True, eq=False)
class TrueLaw:
    theta: np.ndarray
    response: str
    noise: tuple
    link: str
    trials: int

    def sample(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        eta = X @ self.theta
        if self.response == "gaussian":
            kind, par = self.noise
            if kind == "normal":
                eps = math.sqrt(par) * rng.standard_normal(X.shape[0])
            else:
                eps = rng.standard_t(par, size=X.shape[0])
            return eta + eps
        if self.link == "logit":
            prob = 1.0 / (1.0 + np.exp(-eta))
        elif self.link == "probit":
            prob = norm.cdf(eta)
        else:
            prob = norm.cdf(np.exp(np.minimum(eta, 700.0)))
        return rng.binomial(self.trials, prob).astype(float)

    def draw(self, M: int, p: int, seed) -> Dataset:
        """``M`` fresh rows; separate streams for ``x`` and noise keep prefixes stable."""
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        sx, sy = ss.spawn(2)
        X = np.random.default_rng(sx).standard_normal((M, p))
        y = self.sample(X, np.random.default_rng(sy))
        if self.response == "gaussian":
            return Dataset(X, y)
        return Dataset(X, y, "binomial", self.trials)


def _streams(config: ScenarioConfig, r: int):
    """(data seed, sampler seed, risk seed) for replication ``r``."""
    ss = np.random.SeedSequence([config.seed, r])
    data_ss, sampler_ss, risk_ss = ss.spawn(3)
    return data_ss, int(sampler_ss.generate_state(1)[0]), risk_ss


def true_law(config: ScenarioConfig) -> TrueLaw:
    return TrueLaw(config.theta_star, config.response, config.noise, config.link, config.trials)


def generate_dataset(config: ScenarioConfig, replication_index: int):
    """Dataset of replication ``r`` and the true generating law."""
    law = true_law(config)
    data_ss, _, _ = _streams(config, replication_index)
    return law.draw(config.n, config.p, data_ss), law


def kl_risk(law: TrueLaw, posterior, M: int, seed, p: int | None = None) -> float:
    """Monte-Carlo ``E[-log f(z_new | z; xi_hat)]`` over ``M`` fresh draws."""
    p = posterior.p if p is None else p
    fresh = law.draw(M, p, seed)
    lpd = predictive_logdens_all(posterior, fresh)
    return float(-np.mean(lpd))


# ---------------------------------------------------------------------------
# one replication
# ---------------------------------------------------------------------------

_SOFT_FAILURES = (SamplerDiagnosticError, ConvergenceError, UnderflowError,
                  np.linalg.LinAlgError, ModelError)


class _FitCache:
    """Fits keyed by (q, xi) so WAIC and PIIC objectives share work."""

    def __init__(self, config, model, data, sampler_cfg):
        self.config, self.model, self.data, self.cfg = config, model, data, sampler_cfg
        self.store = {}
        self.failures = 0

    def get(self, q, xi, need_full, need_restricted):
        key = (q, tuple(np.round(np.asarray(xi, dtype=float), 14).tolist()))
        fit = self.store.get(key)
        have_full = fit is not None and fit.full is not None
        have_restr = fit is not None and fit.restricted is not None
        if fit is None or (need_full and not have_full) or (need_restricted and not have_restr):
            fit = fit_at(self.model, self.config.prior(q, xi), self.data, self.cfg,
                         need_full=need_full or have_full,
                         need_restricted=need_restricted or have_restr)
            self.store[key] = fit
        return fit

    def waic(self, q, xi):
        try:
            return waic(self.get(q, xi, True, False).full, self.data)
        except _SOFT_FAILURES:
            self.failures += 1
            return math.inf

    def piic(self, q, xi):
        try:
            fit = self.get(q, xi, False, True)
            fp = fisher_pair(self.model, fit.prior, self.data, fit.theta_hat, active=fit.active)
            return piic(fit.restricted, self.data, fp)[0]
        except _SOFT_FAILURES:
            self.failures += 1
            return math.inf


def run_replication(config: ScenarioConfig, r: int) -> dict:
    """All requested arms on replication ``r``; returns a JSON-ready record."""
    data, law = generate_dataset(config, r)
    _, sampler_seed, risk_ss = _streams(config, r)
    model = config.model()
    cfg = config.sampler_config(sampler_seed)
    cache = _FitCache(config, model, data, cfg)
    rec = {"replication": r, "dataset_sha256": {}, "xi_hat": {}, "criterion": {}, "risk": {}}
    selected = {}

    def search(kind, q, initial=()):
        obj = (lambda xi: cache.waic(q, xi)) if kind == "waic" else (lambda xi: cache.piic(q, xi))
        return minimize_criterion(obj, config.space(q), initial_points=initial)

    if "one" in config.classes or "three" in config.classes:
        res_p1 = search("piic", 1)
    if "one" in config.classes:
        res_w1 = search("waic", 1)
        selected["waic1"] = (1, res_w1.xi_hat, res_w1.value)
        selected["piic1"] = (1, res_p1.xi_hat, res_p1.value)
    if "three" in config.classes:
        res_w1 = res_w1 if "one" in config.classes else search("waic", 1)
        diag1 = np.repeat(res_w1.xi_hat, 3)
        res_w3 = search("waic", 3, initial=[diag1])
        selected["waic2"] = (3, res_w3.xi_hat, res_w3.value)
        res_p3 = search("piic", 3, initial=[np.repeat(res_p1.xi_hat, 3)])
        # class choice by PIIC2 = PIIC(xi_hat) + tr(J1^{-1} J2)
        piic2_vals = {}
        for q, res in ((1, res_p1), (3, res_p3)):
            fit = cache.get(q, res.xi_hat, False, True)
            rep = evaluate(model, fit.prior, data, cfg, criteria=("piic",))
            add_xi_penalty(rep, data)
            piic2_vals[q] = (rep.piic2, res.xi_hat, rep.j_penalty)
        q_best = 1 if piic2_vals[1][0] <= piic2_vals[3][0] else 3
        selected["piic2"] = (q_best, piic2_vals[q_best][1], piic2_vals[q_best][0])
        rec["piic2_by_class"] = {str(q): [v[0], v[2]] for q, v in piic2_vals.items()}
    for arm, (q, xi_hat, value) in selected.items():
        arm_data, _ = generate_dataset(config, r)
        rec["dataset_sha256"][arm] = arm_data.digest()
        fit = cache.get(q, xi_hat, True, False)
        rec["xi_hat"][arm] = [float(v) for v in xi_hat]
        rec["criterion"][arm] = float(value)
        rec["risk"][arm] = kl_risk(law, fit.full, config.M, risk_ss, config.p)
    rec["objective_failures"] = cache.failures
    rec["fits"] = len(cache.store)
    return rec


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def rate_triple(a, b, tol: float = EQUAL_TOL):
    """(# a < b, # equal within ``tol``, # a > b) over paired values."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    eq = np.abs(a - b) <= tol
    return (int(np.sum((a < b) & ~eq)), int(np.sum(eq)), int(np.sum((a > b) & ~eq)))


@dataclass
class ComparisonRow:
    config: ScenarioConfig
    mean_risk: dict
    rate1: tuple | None
    rate2: tuple | None
    records: list
    failures: int = 0          # objective evaluations that returned +inf
    failed_replications: list = field(default_factory=list)

    def csv_header(self):
        return ["n", "p", "theta", "law", "WAIC1", "PIIC1", "Rate1", "WAIC2", "PIIC2", "Rate2"]

    def csv_cells(self):
        c = self.config
        law = (f"N(0,{c.noise[1]:g})" if c.noise[0] == "normal" else f"t({c.noise[1]:g})") \
            if c.response == "gaussian" else f"m={c.trials} {c.link}"

        def fmt(k):
            v = self.mean_risk.get(k)
            return "" if v is None else f"{v:.3f}"

        def trip(t):
            return "" if t is None else "({},{},{})".format(*t)

        pat = "(" + ",".join(f"{v:g}" for v in c.theta_pattern) + ")"
        return [str(c.n), str(c.p), pat, law, fmt("waic1"), fmt("piic1"), trip(self.rate1),
                fmt("waic2"), fmt("piic2"), trip(self.rate2)]

    def to_dict(self) -> dict:
        return {
            "scenario": self.config.to_dict(),
            "label": self.config.label,
            "mean_risk": self.mean_risk,
            "rate1": self.rate1,
            "rate2": self.rate2,
            "failures": self.failures,
            "failed_replications": self.failed_replications,
            "replications": self.records,
        }


def _run_one(args):
    config, r = args
    try:
        return run_replication(config, r)
    except (*_SOFT_FAILURES, ObjectiveError) as exc:
        return {"replication": r, "error": f"{type(exc).__name__}: {exc}"}


def run_comparison(config: ScenarioConfig, workers: int = 1, progress=None) -> ComparisonRow:
    """Replicate, aggregate mean risks and Rate triples (fold ordered by replication)."""
    jobs = [(config, r) for r in range(config.R)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = []
        for job in jobs:
            records.append(_run_one(job))
            if progress is not None:
                progress(len(records), config.R)
    records.sort(key=lambda rec: rec["replication"])
    failed = [rec["replication"] for rec in records if "error" in rec]
    records_all, records = records, [rec for rec in records if "error" not in rec]
    arms = [a for a in ARMS if all(a in rec["risk"] for rec in records)]
    mean_risk = {a: float(np.mean([rec["risk"][a] for rec in records])) for a in arms}
    rate1 = rate2 = None
    if "waic1" in arms and "piic1" in arms:
        rate1 = rate_triple([r["risk"]["waic1"] for r in records],
                            [r["risk"]["piic1"] for r in records])
    if "waic2" in arms and "piic2" in arms:
        rate2 = rate_triple([r["risk"]["waic2"] for r in records],
                            [r["risk"]["piic2"] for r in records])
    failures = int(sum(r["objective_failures"] for r in records))
    return ComparisonRow(config, mean_risk, rate1, rate2, records_all, failures, failed)


# ---------------------------------------------------------------------------
# scenario presets (one list per simulation setting)
# ---------------------------------------------------------------------------


def _lin(n, p, pat, noise, family):
    return dict(n=n, p=p, theta_pattern=pat, response="gaussian", noise=noise,
                prior_family=family)


def _bin(n, p, pat, m, link):
    return dict(n=n, p=p, theta_pattern=pat, response="binomial", trials=m, link=link,
                prior_family="laplace")


N05, N1, N2, T5, T2 = ("normal", 0.5), ("normal", 1.0), ("normal", 2.0), ("student_t", 5.0), \
    ("student_t", 2.0)

NORMAL_PRIOR_LINEAR = [
    _lin(12, 6, (2, 2, 2), N05, "normal"),
    _lin(12, 6, (2, 2, 2), N1, "normal"),
    _lin(12, 6, (2, 2, 2), N2, "normal"),
    _lin(12, 6, (2, 2, 2), T5, "normal"),
    _lin(12, 6, (2, 2, 2), T2, "normal"),
    _lin(12, 6, (3, 2, 1), N1, "normal"),
    _lin(12, 6, (3, 1, -1), N1, "normal"),
    _lin(12, 9, (2, 2, 2), N1, "normal"),
    _lin(18, 9, (2, 2, 2), N1, "normal"),
    _lin(18, 12, (2, 2, 2), N05, "normal"),
    _lin(18, 12, (2, 2, 2), N1, "normal"),
    _lin(18, 12, (2, 2, 2), N2, "normal"),
    _lin(18, 12, (2, 2, 2), T5, "normal"),
    _lin(18, 12, (2, 2, 2), T2, "normal"),
    _lin(18, 12, (3, 2, 1), N1, "normal"),
    _lin(18, 12, (3, 1, -1), N1, "normal"),
    _lin(18, 15, (2, 2, 2), N1, "normal"),
    _lin(24, 15, (2, 2, 2), N1, "normal"),
    _lin(24, 18, (2, 2, 2), N05, "normal"),
    _lin(24, 18, (2, 2, 2), N1, "normal"),
    _lin(24, 18, (2, 2, 2), N2, "normal"),
    _lin(24, 18, (2, 2, 2), T5, "normal"),
    _lin(24, 18, (2, 2, 2), T2, "normal"),
    _lin(24, 18, (3, 2, 1), N1, "normal"),
    _lin(24, 18, (3, 1, -1), N1, "normal"),
]

LAPLACE_PRIOR_LINEAR = [
    _lin(18, 12, (3, 2, 1), N05, "laplace"),
    _lin(18, 12, (3, 2, 1), N1, "laplace"),
    _lin(18, 12, (3, 2, 1), N2, "laplace"),
    _lin(18, 12, (3, 2, 1), T2, "laplace"),
    _lin(18, 12, (4, 2, 0), N1, "laplace"),
    _lin(18, 12, (4, 0, -2), N1, "laplace"),
    _lin(18, 12, (3, 1, -1), N1, "laplace"),
    _lin(18, 15, (3, 2, 1), N1, "laplace"),
    _lin(24, 12, (3, 2, 1), N1, "laplace"),
    _lin(24, 15, (3, 2, 1), N05, "laplace"),
    _lin(24, 15, (3, 2, 1), N1, "laplace"),
    _lin(24, 15, (3, 2, 1), N2, "laplace"),
    _lin(24, 15, (3, 2, 1), T2, "laplace"),
    _lin(24, 15, (4, 2, 0), N1, "laplace"),
    _lin(24, 15, (4, 0, -2), N1, "laplace"),
    _lin(24, 15, (3, 1, -1), N1, "laplace"),
    _lin(24, 18, (3, 2, 1), N1, "laplace"),
    _lin(30, 15, (3, 2, 1), N1, "laplace"),
    _lin(30, 18, (3, 2, 1), N05, "laplace"),
    _lin(30, 18, (3, 2, 1), N1, "laplace"),
    _lin(30, 18, (3, 2, 1), N2, "laplace"),
    _lin(30, 18, (3, 2, 1), T2, "laplace"),
    _lin(30, 18, (4, 2, 0), N1, "laplace"),
    _lin(30, 18, (4, 0, -2), N1, "laplace"),
    _lin(30, 18, (3, 1, -1), N1, "laplace"),
]

LAPLACE_PRIOR_LOGISTIC = [
    _bin(20, 6, (3, 2, 1), 5, "logit"),
    _bin(20, 6, (3, 2, 1), 10, "logit"),
    _bin(20, 6, (3, 2, 1), 15, "logit"),
    _bin(20, 6, (4, 2, 0), 10, "logit"),
    _bin(20, 6, (4, 0, -2), 10, "logit"),
    _bin(20, 6, (3, 2, 1), 10, "probit_exp"),
    _bin(20, 9, (3, 2, 1), 10, "logit"),
    _bin(20, 9, (3, 2, 1), 10, "probit_exp"),
    _bin(30, 6, (3, 2, 1), 10, "logit"),
    _bin(30, 6, (3, 2, 1), 10, "probit_exp"),
    _bin(30, 9, (3, 2, 1), 5, "logit"),
    _bin(30, 9, (3, 2, 1), 10, "logit"),
    _bin(30, 9, (3, 2, 1), 15, "logit"),
    _bin(30, 9, (4, 2, 0), 10, "logit"),
    _bin(30, 9, (4, 0, -2), 10, "logit"),
    _bin(30, 9, (3, 2, 1), 10, "probit_exp"),
    _bin(30, 12, (3, 2, 1), 10, "logit"),
    _bin(30, 12, (3, 2, 1), 10, "probit_exp"),
    _bin(40, 9, (3, 2, 1), 10, "logit"),
    _bin(40, 9, (3, 2, 1), 10, "probit_exp"),
    _bin(40, 12, (3, 2, 1), 5, "logit"),
    _bin(40, 12, (3, 2, 1), 10, "logit"),
    _bin(40, 12, (3, 2, 1), 15, "logit"),
    _bin(40, 12, (4, 2, 0), 10, "logit"),
    _bin(40, 12, (4, 0, -2), 10, "logit"),
    _bin(40, 12, (3, 2, 1), 10, "probit_exp"),
]

SCENARIO_SETS = {
    "normal_prior_linear": NORMAL_PRIOR_LINEAR,
    "laplace_prior_linear": LAPLACE_PRIOR_LINEAR,
    "laplace_prior_logistic": LAPLACE_PRIOR_LOGISTIC,
}


def scenario_set(name: str, **overrides) -> list:
    if name not in SCENARIO_SETS:
        raise KeyError(f"unknown scenario set {name!r}; have {sorted(SCENARIO_SETS)}")
    return [ScenarioConfig.from_dict({**row, **overrides}) for row in SCENARIO_SETS[name]]


__all__ = [
    "ARMS",
    "ComparisonRow",
    "EQUAL_TOL",
    "EXPERIMENT_SAMPLER",
    "LINKS",
    "SCENARIO_SETS",
    "ScenarioConfig",
    "TrueLaw",
    "generate_dataset",
    "kl_risk",
    "rate_triple",
    "run_comparison",
    "run_replication",
    "scenario_set",
    "true_law",
]
