"""Information criteria computed from a posterior.

Everything is on the "smaller is better" scale:

* ``waic = -sum log E[f_i] + sum Var[log f_i]``
* ``dic = sum log f(z_i | E theta) - 2 sum E[log f_i]``
* ``piic = -sum log E[f_i] + tr(I1^{-1} I2)`` with the empirical matrices
  of the intensified log-density at the MAP point (restricted to the active
  set under a Laplace prior)
* ``piic2 = piic(xi_hat) + tr(J1^{-1} J2)``

Posterior expectations are exact for analytic Gaussian posteriors and
(weighted) sample averages otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import kernels
from .inference import (
    ActiveSet,
    Posterior,
    SamplerConfig,
    active_set,
    conjugate_posterior,
    fit_posterior,
    map_estimate,
    restricted_posterior,
)
from .models import (
    Dataset,
    LikelihoodModel,
    ModelError,
    PriorSpec,
    log_const,
    log_likelihood_rows,
    log_prior_batch,
    row_scores,
    total_hessian,
    trials_vector,
)

COND_LIMIT = 1e10


class UnderflowError(FloatingPointError):
    """Every per-sample density of some row underflowed."""


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message, condition=float("inf")):
        super().__init__(f"{message} (condition number {condition:.3g})")
        self.condition = condition


# ---------------------------------------------------------------------------
# per-row posterior expectations
# ---------------------------------------------------------------------------


def _power(data: Dataset, power) -> np.ndarray:
    if power is None:
        return np.ones(data.n)
    power = np.asarray(power, dtype=float)
    if power.shape != (data.n,):
        raise ValueError("power must have one entry per row")
    return power


def _linear_moments(posterior: Posterior, X: np.ndarray):
    """Mean and variance of ``x' theta`` under an analytic posterior."""
    if not posterior.coords:
        return np.zeros(X.shape[0]), np.zeros(X.shape[0])
    Xa = X[:, list(posterior.coords)]
    mu = Xa @ posterior.mean
    v = np.einsum("ij,jk,ik->i", Xa, posterior.cov, Xa)
    return mu, np.maximum(v, 0.0)


def _sample_loglik(posterior: Posterior, data: Dataset) -> np.ndarray:
    model = posterior.model
    return kernels.loglik_matrix(
        posterior.samples, data.X[:, list(posterior.coords)], data.y,
        trials_vector(model, data.n), log_const(model, data), model.code, model.sigma2)


def predictive_logdens_all(posterior: Posterior, data: Dataset, power=None) -> np.ndarray:
    """``log E[f(z_i | theta)**a_i]`` for every row ``i`` (``a`` = ``power``, default 1)."""
    model = posterior.model
    model.check(data)
    a = _power(data, power)
    form = posterior.form
    if form == "point":
        out = a * log_likelihood_rows(model, data, posterior.map_point)
    elif form == "analytic_gaussian":
        mu, v = _linear_moments(posterior, data.X)
        s2 = model.sigma2
        s = s2 / a + v
        r = data.y - mu
        out = (0.5 * (1.0 - a) * math.log(2.0 * math.pi * s2) - 0.5 * np.log(a)
               - 0.5 * np.log(2.0 * math.pi * s) - r * r / (2.0 * s))
    else:
        out = kernels.predictive_logmeanexp(
            posterior.samples, posterior.logw(), data.X[:, list(posterior.coords)], data.y,
            trials_vector(model, data.n), log_const(model, data), model.code, model.sigma2, a)
    if np.any(np.isneginf(out)) or np.any(np.isnan(out)):
        bad = np.flatnonzero(~np.isfinite(out))
        raise UnderflowError(f"predictive density underflowed at rows {bad.tolist()}")
    return out


def predictive_logdens(posterior: Posterior, data: Dataset, row_index: int) -> float:
    """``log E[f(z_i | theta)]`` for one row."""
    return float(predictive_logdens_all(posterior, data.rows([row_index]))[0])


def loglik_moments(posterior: Posterior, data: Dataset):
    """Posterior mean and variance of ``log f(z_i | theta)`` for each row."""
    model = posterior.model
    model.check(data)
    form = posterior.form
    if form == "point":
        lf = log_likelihood_rows(model, data, posterior.map_point)
        return lf, np.zeros(data.n)
    if form == "analytic_gaussian":
        # residual r ~ N(y - mu, v); log f = -0.5 log(2 pi s2) - r^2 / (2 s2)
        mu, v = _linear_moments(posterior, data.X)
        s2 = model.sigma2
        d = data.y - mu
        mean = -0.5 * math.log(2.0 * math.pi * s2) - (d * d + v) / (2.0 * s2)
        var = (2.0 * v * v + 4.0 * d * d * v) / (4.0 * s2 * s2)
        return mean, var
    L = _sample_loglik(posterior, data)
    w = posterior.norm_weights()
    mean = w @ L
    var = w @ (L - mean) ** 2
    return mean, var


def waic(posterior: Posterior, data: Dataset) -> float:
    lpd = predictive_logdens_all(posterior, data)
    _, var = loglik_moments(posterior, data)
    return float(-np.sum(lpd) + np.sum(var))


def dic(posterior: Posterior, data: Dataset) -> float:
    mean_ll, _ = loglik_moments(posterior, data)
    plug = log_likelihood_rows(posterior.model, data, posterior.posterior_mean())
    return float(np.sum(plug) - 2.0 * np.sum(mean_ll))


# ---------------------------------------------------------------------------
# theta-space penalty
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FisherPair:
    I1_hat: np.ndarray
    I2_hat: np.ndarray
    evaluated_at: np.ndarray
    active: ActiveSet | None = None

    def restrict(self, active: ActiveSet) -> "FisherPair":
        """Extract the active block of full-size matrices."""
        idx = list(active.indices)
        ix = np.ix_(idx, idx)
        return FisherPair(self.I1_hat[ix], self.I2_hat[ix], self.evaluated_at, active)


def fisher_pair(model: LikelihoodModel, prior: PriorSpec, data: Dataset, theta_hat,
                active: ActiveSet | None = None, obs_weights=None, score_weights=None,
                prior_split: int = 1) -> FisherPair:
    """Empirical ``I1 = -H / n`` and ``I2 = sum r_i s_i s_i' / n`` at ``theta_hat``.

    ``obs_weights`` weight the likelihood rows of the Hessian, ``score_weights``
    (``r_i``) the outer products of the per-row scores ``s_i``. Under a Laplace
    prior, ``active`` selects the coordinates and the matrices are that block.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if prior.sparse and active is None:
        active = active_set(theta_hat)
    n = data.n
    H = total_hessian(model, prior, data, theta_hat, active=active, obs_weights=obs_weights)
    S = row_scores(model, prior, data, theta_hat, active=active, prior_split=prior_split)
    r = np.ones(n) if score_weights is None else np.asarray(score_weights, dtype=float)
    I1 = -H / n
    I2 = (S * r[:, None]).T @ S / n
    return FisherPair(0.5 * (I1 + I1.T), 0.5 * (I2 + I2.T), theta_hat, active)


def trace_penalty(A: np.ndarray, B: np.ndarray, label: str = "I1"):
    """``tr(A^{-1} B)`` for symmetric ``A`` via an equilibrated Cholesky solve.

    Falls back to the pseudo-inverse (with a warning) when ``A`` is not
    positive definite or its condition number exceeds ``COND_LIMIT``.
    Returns ``(value, diagnostics)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    k = A.shape[0]
    if k == 0:
        return 0.0, {"pinv_fallback": 0.0, "condition": 1.0}
    d = np.diag(A)
    scale = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 1.0)
    As = A * scale[:, None] * scale[None, :]
    Bs = B * scale[:, None] * scale[None, :]
    cond = np.linalg.cond(As)
    if np.all(d > 0) and np.isfinite(cond) and cond <= COND_LIMIT:
        try:
            cf = linalg.cho_factor(As, lower=True)
            val = float(np.trace(linalg.cho_solve(cf, Bs)))
            return val, {"pinv_fallback": 0.0, "condition": float(cond)}
        except linalg.LinAlgError:
            pass
    warnings.warn(f"{label} is singular or indefinite (condition {cond:.3g}); "
                  "using the pseudo-inverse", RuntimeWarning, stacklevel=2)
    val = float(np.trace(np.linalg.pinv(A, hermitian=True) @ B))
    return val, {"pinv_fallback": 1.0, "condition": float(cond)}


def piic(posterior: Posterior, data: Dataset, fisher: FisherPair, power=None):
    """``-sum log E[f_i] + tr(I1^{-1} I2)``.

    In the sparse case ``posterior`` is the restricted posterior and only the
    active block of ``fisher`` enters; full-size matrices are cut down here,
    so entries outside the active set never matter.

    Returns ``(value, penalty, lppd, diagnostics)``.
    """
    f = fisher
    if f.active is not None and f.I1_hat.shape[0] != len(f.active):
        f = f.restrict(f.active)
    if f.active is not None and tuple(posterior.coords) != tuple(f.active.indices):
        raise ModelError("posterior coordinates do not match the active set")
    lppd = float(np.sum(predictive_logdens_all(posterior, data, power)))
    pen, diag = trace_penalty(f.I1_hat, f.I2_hat, "I1")
    return -lppd + pen, pen, lppd, diag


# ---------------------------------------------------------------------------
# hyper-parameter scores
# ---------------------------------------------------------------------------


def prior_xi_gradient(prior: PriorSpec, Theta: np.ndarray, coords, mult: float) -> np.ndarray:
    """``u(theta) = d/dxi [mult * log pi(theta; xi)]`` per sample, shape (S, q).

    Only the coordinates in ``coords`` carry prior mass.
    """
    Theta = np.atleast_2d(Theta)
    q = prior.q
    if prior.frozen or not coords:
        return np.zeros((Theta.shape[0], q))
    groups = np.asarray(prior.groups)[list(coords)]
    xi = np.asarray(prior.xi)
    G = np.zeros((len(coords), q))
    G[np.arange(len(coords)), groups] = 1.0
    par = xi[groups]
    if prior.family == "normal":
        per = -0.5 / par + Theta**2 / (2.0 * par**2)
    else:
        per = 1.0 / par - np.abs(Theta)
    return mult * per @ G


def _prior_mult(posterior: Posterior, data: Dataset) -> float:
    return data.n / posterior.prior.n0


def _tilted_second_moments(posterior: Posterior, data: Dataset, a: np.ndarray):
    """Row-wise E[theta_j^2] under the posterior tilted by ``f_i**a_i`` (Gaussian case)."""
    idx = list(posterior.coords)
    Xa = data.X[:, idx]
    S, m = posterior.cov, posterior.mean
    c = a / posterior.model.sigma2
    Sx = Xa @ S  # (n, k)
    xSx = np.einsum("ik,ik->i", Sx, Xa)
    denom = 1.0 + c * xSx
    resid = data.y - Xa @ m
    m_t = m[None, :] + Sx * (c * resid / denom)[:, None]
    var_t = np.diag(S)[None, :] - (c / denom)[:, None] * Sx**2
    return m_t**2 + var_t, m**2 + np.diag(S)


def xi_score_all(posterior: Posterior, data: Dataset, power=None) -> np.ndarray:
    """``d/dxi log E[f(z_i|theta)**a_i]`` for every row, shape (n, q).

    Uses the posterior-covariance identity
    ``E[f_i (u - E u)] / E[f_i]``, ``u = d/dxi log pi_n(theta; xi)``.
    Exact for analytic Gaussian posteriors (the tilted law is Gaussian).
    """
    a = _power(data, power)
    prior = posterior.prior
    q = prior.q
    if prior.frozen or posterior.form == "point":
        return np.zeros((data.n, q))
    mult = _prior_mult(posterior, data)
    coords = list(posterior.coords)
    if posterior.form == "analytic_gaussian":
        if prior.family != "normal":
            raise ModelError("analytic posteriors require a normal prior")
        tilted, base = _tilted_second_moments(posterior, data, a)
        groups = np.asarray(prior.groups)[coords]
        xi = np.asarray(prior.xi)
        G = np.zeros((len(coords), q))
        G[np.arange(len(coords)), groups] = 1.0
        return mult * ((tilted - base[None, :]) / (2.0 * xi[groups] ** 2)) @ G
    U = prior_xi_gradient(prior, posterior.samples, coords, mult)
    L = _sample_loglik(posterior, data) * a[None, :]
    lw = posterior.logw()
    A = L + lw[:, None]
    A -= A.max(axis=0, keepdims=True)
    T = np.exp(A)
    T /= T.sum(axis=0, keepdims=True)
    w = posterior.norm_weights()
    return T.T @ U - (w @ U)[None, :]


def xi_score(posterior: Posterior, data: Dataset, row_index: int) -> np.ndarray:
    # the prior multiplier n / n0 needs the whole dataset, so no row slicing
    return xi_score_all(posterior, data)[row_index]


def xi_score_analytic(posterior: Posterior, data: Dataset, power=None) -> np.ndarray:
    """Direct differentiation of the closed-form Gaussian predictive, shape (n, q)."""
    if posterior.form != "analytic_gaussian":
        raise ModelError("analytic score needs an analytic posterior")
    a = _power(data, power)
    prior = posterior.prior
    if prior.frozen:
        return np.zeros((data.n, prior.q))
    idx = list(posterior.coords)
    Xa = data.X[:, idx]
    S, m = posterior.cov, posterior.mean
    mult = _prior_mult(posterior, data)
    groups = np.asarray(prior.groups)[idx]
    xi = np.asarray(prior.xi)
    mu = Xa @ m
    s = posterior.model.sigma2 / a + np.einsum("ij,jk,ik->i", Xa, S, Xa)
    r = data.y - mu
    Sx = Xa @ S
    out = np.zeros((data.n, prior.q))
    for k in range(prior.q):
        e = np.where(groups == k, mult / xi[groups] ** 2, 0.0)
        dmu = Sx @ (e * m)
        ds = np.einsum("ij,j,ij->i", Sx, e, Sx)
        out[:, k] = -ds / (2.0 * s) + r * dmu / s + r * r * ds / (2.0 * s * s)
    return out


def fd_steps(xi) -> np.ndarray:
    """Central-difference steps ``1e-3 (1 + |xi|)``, capped at ``xi / 2``."""
    xi = np.asarray(xi, dtype=float)
    return np.minimum(1e-3 * (1.0 + np.abs(xi)), 0.5 * xi)


def perturbed_posterior(posterior: Posterior, data: Dataset, new_xi, refit=None) -> Posterior:
    """Posterior at ``new_xi`` sharing the random numbers of ``posterior``.

    Analytic posteriors are recomputed exactly. Sample sets are reweighted
    by the ratio of intensified priors, which is exact importance sampling on
    the same draws; ``refit(prior) -> Posterior`` overrides this.
    """
    prior = posterior.prior
    new_prior = prior if prior.frozen else prior.with_xi(new_xi)
    if refit is not None:
        return refit(new_prior)
    if posterior.form == "point":
        return replace(posterior, prior=new_prior)
    if posterior.form == "analytic_gaussian":
        return conjugate_posterior(posterior.model, new_prior, data,
                                   obs_weights=posterior.obs_weights, coords=posterior.coords)
    if prior.frozen:
        return posterior
    mult = _prior_mult(posterior, data)
    coords = list(posterior.coords)
    sub_old = prior.restrict(coords)
    sub_new = new_prior.restrict(coords)
    delta = mult * (log_prior_batch(sub_new, posterior.samples)
                    - log_prior_batch(sub_old, posterior.samples))
    return replace(posterior, prior=new_prior, log_weights=posterior.logw() + delta)


def xi_score_fd(posterior: Posterior, data: Dataset, power=None, steps=None,
                refit=None) -> np.ndarray:
    """Central finite differences of ``log E[f_i**a_i]`` over ``xi``, shape (n, q)."""
    xi = np.asarray(posterior.prior.xi, dtype=float)
    h = fd_steps(xi) if steps is None else np.asarray(steps, dtype=float)
    out = np.zeros((data.n, xi.size))
    for k in range(xi.size):
        e = np.zeros_like(xi)
        e[k] = h[k]
        up = perturbed_posterior(posterior, data, xi + e, refit)
        dn = perturbed_posterior(posterior, data, xi - e, refit)
        out[:, k] = (predictive_logdens_all(up, data, power)
                     - predictive_logdens_all(dn, data, power)) / (2.0 * h[k])
    return out


@dataclass(frozen=True, eq=False)
class JPair:
    J1_hat: np.ndarray
    J2_hat: np.ndarray
    evaluated_at: np.ndarray
    fd_step: np.ndarray


def j_pair(posterior: Posterior, data: Dataset, power=None, hess_weights=None,
           score_weights=None, steps=None, refit=None) -> JPair:
    """``J1 = -sum a_i d2/dxi2 log E[f_i] / n`` and ``J2 = sum r_i s_i s_i' / n``.

    Scores come from :func:`xi_score_all`; second derivatives from central
    differences of those scores with common random numbers.
    """
    n = data.n
    xi = np.asarray(posterior.prior.xi, dtype=float)
    q = xi.size
    h = fd_steps(xi) if steps is None else np.asarray(steps, dtype=float)
    aw = np.ones(n) if hess_weights is None else np.asarray(hess_weights, dtype=float)
    rw = np.ones(n) if score_weights is None else np.asarray(score_weights, dtype=float)
    S0 = xi_score_all(posterior, data, power)
    J2 = (S0 * rw[:, None]).T @ S0 / n
    if posterior.prior.frozen:
        return JPair(np.zeros((q, q)), np.zeros((q, q)), xi, h)
    J1 = np.zeros((q, q))
    for k in range(q):
        e = np.zeros(q)
        e[k] = h[k]
        up = xi_score_all(perturbed_posterior(posterior, data, xi + e, refit), data, power)
        dn = xi_score_all(perturbed_posterior(posterior, data, xi - e, refit), data, power)
        J1[:, k] = -(aw @ ((up - dn) / (2.0 * h[k]))) / n
    J1 = 0.5 * (J1 + J1.T)
    return JPair(J1, 0.5 * (J2 + J2.T), xi, h)


def xi_penalty(jpair: JPair):
    """``tr(J1^{-1} J2)`` and diagnostics; zero when ``J2`` vanishes."""
    if not np.any(jpair.J2_hat):
        return 0.0, {"pinv_fallback": 0.0, "condition": 1.0}
    return trace_penalty(jpair.J1_hat, jpair.J2_hat, "J1")


def piic2(piic_at_xi_hat: float, jpair: JPair) -> float:
    pen, _ = xi_penalty(jpair)
    return float(piic_at_xi_hat + pen)


# ---------------------------------------------------------------------------
# one-stop evaluation
# ---------------------------------------------------------------------------


def _nan_to_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass
class CriterionReport:
    xi: np.ndarray
    dic: float = float("nan")
    waic: float = float("nan")
    piic: float = float("nan")
    piic_penalty: float = float("nan")
    piic2: float | None = None
    j_penalty: float | None = None
    lppd: float = float("nan")
    lppd_active: float = float("nan")
    active: ActiveSet | None = None
    diagnostics: dict = field(default_factory=dict)
    fit: object = field(default=None, repr=False)
    weighting: object = field(default=None, repr=False)
    jpair: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "dic": _nan_to_none(float(self.dic)),
            "waic": _nan_to_none(float(self.waic)),
            "piic": _nan_to_none(float(self.piic)),
            "piic2": None if self.piic2 is None else _nan_to_none(float(self.piic2)),
            "lppd": _nan_to_none(float(self.lppd)),
            "penalty_theta": _nan_to_none(float(self.piic_penalty)),
            "penalty_xi": None if self.j_penalty is None else _nan_to_none(float(self.j_penalty)),
            "active_set": None if self.active is None else [int(j) for j in self.active.indices],
            "xi": [float(v) for v in np.atleast_1d(self.xi)],
            "diagnostics": {k: _nan_to_none(float(v)) for k, v in sorted(self.diagnostics.items())},
        }


@dataclass(frozen=True, eq=False)
class Fit:
    """Posteriors and point estimates at one ``xi``."""

    prior: PriorSpec
    theta_hat: np.ndarray
    full: Posterior | None
    active: ActiveSet | None
    restricted: Posterior | None


def fit_at(model, prior, data, config=None, need_full=True, need_restricted=True,
           analytic=True, obs_weights=None) -> Fit:
    """MAP point plus the full and/or active-set posteriors at ``prior.xi``."""
    config = config or SamplerConfig()
    theta_hat = map_estimate(model, prior, data, obs_weights=obs_weights)
    full = None
    if need_full:
        full = fit_posterior(model, prior, data, config, obs_weights=obs_weights,
                             analytic=analytic)
    act, restricted = None, None
    if prior.sparse:
        act = active_set(theta_hat)
        if need_restricted and full is not None and len(act) == prior.p:
            restricted = full
        elif need_restricted:
            restricted = restricted_posterior(model, prior, data, act, config,
                                              obs_weights=obs_weights, analytic=analytic)
    else:
        restricted = full
        if restricted is None and need_restricted:
            restricted = fit_posterior(model, prior, data, config, obs_weights=obs_weights,
                                       analytic=analytic)
    return Fit(prior, theta_hat, full, act, restricted)


@dataclass(frozen=True, eq=False)
class Weighting:
    """Observation weights for the inverse-probability-weighted criteria.

    ``obs`` weights the likelihood rows of the posterior, of ``I1`` and of
    ``J1`` and is the exponent of the predictive density; ``fisher_scores``
    and ``xi_scores`` weight the outer products in ``I2`` and ``J2``;
    ``prior_split`` divides the per-row prior share. The default is the
    unweighted criterion.
    """

    obs: np.ndarray | None = None
    fisher_scores: np.ndarray | None = None
    xi_scores: np.ndarray | None = None
    prior_split: int = 1


UNWEIGHTED = Weighting()


def evaluate(model: LikelihoodModel, prior: PriorSpec, data: Dataset, config=None,
             criteria=("dic", "waic", "piic"), analytic=True,
             weighting: Weighting = UNWEIGHTED) -> CriterionReport:
    """All requested criteria at ``prior.xi`` (PIIC2 needs ``xi_hat``; see ``add_xi_penalty``)."""
    criteria = set(criteria)
    wt = weighting
    need_full = bool(criteria & {"dic", "waic"})
    need_piic = bool(criteria & {"piic", "piic2"})
    fit = fit_at(model, prior, data, config, need_full=need_full or not prior.sparse,
                 need_restricted=need_piic, analytic=analytic, obs_weights=wt.obs)
    rep = CriterionReport(xi=np.asarray(prior.xi))
    if need_full:
        post = fit.full
        rep.lppd = float(np.sum(predictive_logdens_all(post, data)))
        if "waic" in criteria:
            rep.waic = waic(post, data)
        if "dic" in criteria:
            rep.dic = dic(post, data)
        if post.acceptance is not None:
            rep.diagnostics["acceptance_full"] = post.acceptance
    if need_piic:
        fp = fisher_pair(model, prior, data, fit.theta_hat, active=fit.active,
                         obs_weights=wt.obs, score_weights=wt.fisher_scores,
                         prior_split=wt.prior_split)
        val, pen, lppd_a, diag = piic(fit.restricted, data, fp, power=wt.obs)
        rep.piic, rep.piic_penalty, rep.lppd_active = val, pen, lppd_a
        rep.active = fit.active
        rep.diagnostics["penalty_theta_pinv"] = diag["pinv_fallback"]
        rep.diagnostics["penalty_theta_condition"] = diag["condition"]
        if fit.active is not None:
            rep.diagnostics["empty_active_set"] = float(fit.active.empty)
        if fit.restricted.acceptance is not None:
            rep.diagnostics["acceptance_restricted"] = fit.restricted.acceptance
        if not need_full and not prior.sparse:
            rep.lppd = lppd_a
    rep.fit = fit
    rep.weighting = wt
    return rep


def add_xi_penalty(report: CriterionReport, data: Dataset, steps=None) -> CriterionReport:
    """Attach ``tr(J1^{-1} J2)`` and ``piic2`` to a report made at ``xi_hat``."""
    wt = report.weighting
    jp = j_pair(report.fit.restricted, data, hess_weights=wt.obs,
                score_weights=wt.xi_scores, steps=steps)
    pen, diag = xi_penalty(jp)
    report.j_penalty = pen
    report.piic2 = report.piic + pen
    report.jpair = jp
    report.diagnostics["penalty_xi_pinv"] = diag["pinv_fallback"]
    report.diagnostics["penalty_xi_condition"] = diag["condition"]
    return report
