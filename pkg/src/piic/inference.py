"""Posterior computation: MAP points, conjugate posteriors, Metropolis sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import kernels
from .models import (
    Dataset,
    LikelihoodModel,
    ModelError,
    PriorSpec,
    log_g_total,
    trials_vector,
)


class ConvergenceError(RuntimeError):
    """MAP optimiser ran out of iterations."""

    def __init__(self, message, grad_norm=float("nan")):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3g})")
        self.grad_norm = grad_norm


class NonIdentifiableError(ModelError):
    pass


class SamplerDiagnosticError(RuntimeError):
    """Post-adaptation acceptance rate outside the configured band."""

    def __init__(self, message, acceptance):
        super().__init__(message)
        self.acceptance = acceptance


@dataclass(frozen=True)
class SamplerConfig:
    chain_length: int = 50_000
    burn_in: int = 10_000
    thin: int = 4
    seed: int = 0
    target_accept: float = 0.44
    adapt_batch: int = 50
    accept_low: float = 0.1
    accept_high: float = 0.6

    def __post_init__(self):
        if self.chain_length <= self.burn_in:
            raise ValueError("chain_length must exceed burn_in")
        if self.thin < 1 or self.burn_in < 0:
            raise ValueError("thin must be >= 1 and burn_in >= 0")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SamplerConfig":
        if not d:
            return cls()
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def with_seed(self, seed: int) -> "SamplerConfig":
        return replace(self, seed=int(seed))

    @property
    def n_samples(self) -> int:
        return (self.chain_length - self.burn_in) // self.thin


@dataclass(frozen=True)
class ActiveSet:
    indices: tuple
    p: int
    tolerance: float = 0.0

    def __post_init__(self):
        idx = tuple(sorted(int(j) for j in self.indices))
        if idx and (idx[0] < 0 or idx[-1] >= self.p):
            raise ValueError("active indices out of range")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    @property
    def empty(self) -> bool:
        return not self.indices

    def mask(self) -> np.ndarray:
        m = np.zeros(self.p, dtype=bool)
        m[list(self.indices)] = True
        return m


def active_set(theta_hat, tol: float = 0.0) -> ActiveSet:
    """Coordinates with ``|theta_j| > tol``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return ActiveSet(tuple(np.flatnonzero(np.abs(theta_hat) > tol)), theta_hat.size, tol)


@dataclass(frozen=True, eq=False)
class Posterior:
    """Posterior law of ``theta`` at hyper-parameter ``prior.xi``.

    The law lives on ``coords``; every other coordinate is pinned at zero.
    Exactly one representation is populated: ``mean``/``cov`` (analytic
    Gaussian), ``samples`` (optionally weighted by ``log_weights``), or
    neither (a point mass at ``map_point``).
    """

    model: LikelihoodModel
    prior: PriorSpec
    map_point: np.ndarray
    coords: tuple
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    samples: np.ndarray | None = None
    log_weights: np.ndarray | None = None
    obs_weights: np.ndarray | None = None
    acceptance: float | None = None
    chain_meta: dict = field(default_factory=dict)

    @property
    def form(self) -> str:
        if self.mean is not None:
            return "analytic_gaussian"
        if self.samples is not None:
            return "sample_set"
        return "point"

    @property
    def xi_used(self) -> np.ndarray:
        return np.asarray(self.prior.xi)

    @property
    def p(self) -> int:
        return self.prior.p

    def logw(self) -> np.ndarray:
        S = self.samples.shape[0]
        return np.zeros(S) if self.log_weights is None else self.log_weights

    def norm_weights(self) -> np.ndarray:
        lw = self.logw()
        w = np.exp(lw - lw.max())
        return w / w.sum()

    def embed(self, sub: np.ndarray) -> np.ndarray:
        """Lift (..., k) coordinates to the full (..., p) parameter space."""
        sub = np.asarray(sub)
        full = np.zeros(sub.shape[:-1] + (self.p,))
        full[..., list(self.coords)] = sub
        return full

    def posterior_mean(self) -> np.ndarray:
        if self.form == "analytic_gaussian":
            return self.embed(self.mean)
        if self.form == "sample_set":
            return self.embed(self.norm_weights() @ self.samples)
        return np.array(self.map_point, dtype=float)

    def draw(self, size: int, seed: int) -> "Posterior":
        """I.i.d. sample-set version of an analytic posterior."""
        if self.form != "analytic_gaussian":
            raise ValueError("draw() needs an analytic posterior")
        rng = np.random.default_rng(seed)
        L = np.linalg.cholesky(self.cov)
        S = self.mean + rng.standard_normal((size, len(self.coords))) @ L.T
        return replace(self, mean=None, cov=None, samples=S, log_weights=None)


def _obs_weights(data: Dataset, obs_weights) -> np.ndarray:
    if obs_weights is None:
        return np.ones(data.n)
    w = np.asarray(obs_weights, dtype=float)
    if w.shape != (data.n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ModelError("observation weights must be finite, nonnegative, length n")
    return w


def _coords_of(prior: PriorSpec, coords) -> tuple:
    if coords is None:
        return tuple(range(prior.p))
    return tuple(int(j) for j in getattr(coords, "indices", coords))


# ---------------------------------------------------------------------------
# MAP estimation
# ---------------------------------------------------------------------------


def _penalised_objective(model, prior, data, w, theta):
    """Negative dataset-level log g with observation weights (up to constants)."""
    eta = data.X @ theta
    if model.kind == "linear_gaussian":
        nll = np.sum(w * (data.y - eta) ** 2) / (2.0 * model.sigma2)
    else:
        nll = -np.sum(w * (data.y * eta - model.trials * np.logaddexp(0.0, eta)))
    par = prior.coord_xi()
    c = data.n / prior.n0
    if prior.family == "normal":
        pen = c * np.sum(theta**2 / (2.0 * par))
    else:
        pen = c * np.sum(par * np.abs(theta))
    return nll + pen


def map_estimate(model: LikelihoodModel, prior: PriorSpec, data: Dataset, obs_weights=None,
                 coords=None, tol: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    """Maximiser of the dataset-level ``log g`` (optionally observation-weighted).

    Normal priors: ridge solve (gaussian) or damped Newton (binomial).
    Laplace priors: coordinate descent (gaussian) or proximal Newton with a
    coordinate-descent inner solver (binomial); both return exact zeros.
    Coordinates outside ``coords`` are held at zero.
    """
    model.check(data)
    if prior.p != data.p:
        raise ModelError(f"prior has p={prior.p}, data has p={data.p}")
    w = _obs_weights(data, obs_weights)
    idx = _coords_of(prior, coords)
    theta = np.zeros(data.p)
    if not idx:
        return theta
    sub_data = data.columns(idx)
    sub_prior = prior.restrict(idx)
    c = data.n / prior.n0
    par = sub_prior.coord_xi()
    X = sub_data.X
    if model.kind == "linear_gaussian":
        if prior.family == "normal":
            A = X.T @ (X * w[:, None]) / model.sigma2 + np.diag(c / par)
            b = X.T @ (w * data.y) / model.sigma2
            try:
                sub = linalg.cho_solve(linalg.cho_factor(A), b)
            except linalg.LinAlgError as exc:
                raise ModelError("singular normal equations") from exc
        else:
            _check_identifiable(X, c * par)
            sub, sweeps, converged, _ = kernels.wlasso_cd(
                X, data.y, w / model.sigma2, c * par, tol=tol, max_sweeps=max_iter)
            if not converged:
                raise ConvergenceError(
                    f"coordinate descent did not converge in {sweeps} sweeps",
                    _kkt_violation(model, sub_prior, sub_data, w, sub))
    else:
        if prior.family == "normal":
            sub = _newton_logistic(model, sub_prior, sub_data, w, tol, max_iter)
        else:
            _check_identifiable(X, c * par)
            sub = _prox_newton_logistic(model, sub_prior, sub_data, w, tol, max_iter)
    theta[list(idx)] = sub
    return theta


def _check_identifiable(X, lam):
    if np.min(lam) < 1e-10 and np.linalg.matrix_rank(X) < X.shape[1]:
        raise NonIdentifiableError("rank-deficient design with a vanishing Laplace rate")


def _lik_grad(model, data, w, theta):
    eta = data.X @ theta
    if model.kind == "linear_gaussian":
        return data.X.T @ (w * (data.y - eta)) / model.sigma2
    prob = 1.0 / (1.0 + np.exp(-eta))
    return data.X.T @ (w * (data.y - model.trials * prob))


def _kkt_violation(model, prior, data, w, theta):
    """Largest violation of the (sub)gradient optimality conditions."""
    g = _lik_grad(model, data, w, theta)
    lam = data.n / prior.n0 * prior.coord_xi()
    if prior.family == "normal":
        return float(np.max(np.abs(g - lam * theta)))
    on = theta != 0
    viol = np.where(on, np.abs(g - lam * np.sign(theta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(np.max(viol)) if viol.size else 0.0


def _newton_logistic(model, prior, data, w, tol, max_iter):
    X = data.X
    c = data.n / prior.n0
    prec = c / prior.coord_xi()
    theta = np.zeros(data.p)
    obj = _penalised_objective(model, prior, data, w, theta)
    for _ in range(max_iter):
        eta = X @ theta
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (w * (data.y - model.trials * prob)) - prec * theta
        H = X.T @ (X * (w * model.trials * prob * (1 - prob))[:, None]) + np.diag(prec)
        step = linalg.solve(H, grad, assume_a="pos")
        t = 1.0
        while True:
            cand = theta + t * step
            new_obj = _penalised_objective(model, prior, data, w, cand)
            if new_obj <= obj + 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        change = np.max(np.abs(cand - theta))
        theta, obj = cand, new_obj
        if change < tol:
            return theta
    raise ConvergenceError("Newton iterations exhausted", float(np.linalg.norm(grad)))


def _prox_newton_logistic(model, prior, data, w, tol, max_iter):
    X = data.X
    lam = data.n / prior.n0 * prior.coord_xi()
    theta = np.zeros(data.p)
    obj = _penalised_objective(model, prior, data, w, theta)
    for _ in range(max_iter):
        eta = X @ theta
        prob = 1.0 / (1.0 + np.exp(-eta))
        W = np.maximum(w * model.trials * prob * (1.0 - prob), 1e-12)
        work = eta + w * (data.y - model.trials * prob) / W
        cand, _, _, _ = kernels.wlasso_cd(X, work, W, lam, theta0=theta, tol=tol * 1e-2,
                                          max_sweeps=10_000)
        direction = cand - theta
        t = 1.0
        while True:
            trial = theta + t * direction
            new_obj = _penalised_objective(model, prior, data, w, trial)
            if new_obj <= obj + 1e-12 * max(abs(obj), 1.0) or t < 1e-10:
                break
            t *= 0.5
        # a fractional step can leave near-zeros; the prox step owns sparsity
        if t < 1.0:
            trial = np.where(cand == 0.0, 0.0, trial)
            new_obj = _penalised_objective(model, prior, data, w, trial)
        change = np.max(np.abs(trial - theta))
        theta, obj = trial, new_obj
        if change < tol:
            return theta
    raise ConvergenceError("proximal Newton iterations exhausted",
                           _kkt_violation(model, prior, data, w, theta))


# ---------------------------------------------------------------------------
# posteriors
# ---------------------------------------------------------------------------


def conjugate_posterior(model: LikelihoodModel, prior: PriorSpec, data: Dataset,
                        obs_weights=None, coords=None) -> Posterior:
    """Exact Gaussian posterior for the linear-gaussian model with normal prior."""
    if model.kind != "linear_gaussian" or prior.family != "normal":
        raise ModelError("conjugate posterior needs a linear-gaussian model and normal prior")
    model.check(data)
    w = _obs_weights(data, obs_weights)
    idx = _coords_of(prior, coords)
    if not idx:
        return Posterior(model, prior, np.zeros(data.p), (), obs_weights=w)
    X = data.X[:, list(idx)]
    par = prior.coord_xi()[list(idx)]
    c = data.n / prior.n0
    A = X.T @ (X * w[:, None]) / model.sigma2 + np.diag(c / par)
    b = X.T @ (w * data.y) / model.sigma2
    try:
        cf = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError as exc:
        raise ModelError("singular posterior precision") from exc
    cov = linalg.cho_solve(cf, np.eye(len(idx)))
    cov = 0.5 * (cov + cov.T)
    mean = linalg.cho_solve(cf, b)
    full = np.zeros(data.p)
    full[list(idx)] = mean
    return Posterior(model, prior, full, idx, mean=mean, cov=cov, obs_weights=w)


def _initial_scales(model, prior, data, w, theta, idx):
    X = data.X[:, list(idx)]
    eta = data.X @ theta
    if model.kind == "linear_gaussian":
        curv = np.full(data.n, 1.0 / model.sigma2)
    else:
        prob = 1.0 / (1.0 + np.exp(-eta))
        curv = model.trials * prob * (1 - prob)
    info = (X * X * (w * curv)[:, None]).sum(axis=0)
    c = data.n / prior.n0
    par = prior.coord_xi()[list(idx)]
    if prior.family == "normal":
        info = info + c / par
    else:
        info = info + 0.5 * (c * par) ** 2
    return 2.4 / np.sqrt(np.maximum(info, 1e-12))


def mcmc_sample(model: LikelihoodModel, prior: PriorSpec, data: Dataset,
                config: SamplerConfig | None = None, obs_weights=None, coords=None,
                init=None, check_acceptance: bool = True) -> Posterior:
    """Componentwise adaptive random-walk Metropolis.

    Targets ``exp{sum_i w_i log f(z_i|theta) + (n/n0) log pi(theta; xi)}`` on
    ``coords`` and starts at the MAP point. All randomness is drawn up front
    from ``config.seed``, so a fixed seed gives a bit-identical sample set
    and chains at different ``xi`` share their random numbers.
    """
    config = config or SamplerConfig()
    model.check(data)
    w = _obs_weights(data, obs_weights)
    idx = _coords_of(prior, coords)
    theta_map = map_estimate(model, prior, data, obs_weights=w, coords=idx)
    if not idx:
        return Posterior(model, prior, theta_map, (), obs_weights=w)
    theta0 = theta_map if init is None else np.asarray(init, dtype=float)
    if not math.isfinite(log_g_total(model, prior, data, theta0)):
        raise ModelError("non-finite log density at the initial point")
    k = len(idx)
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal((config.chain_length, k))
    logu = np.log(rng.random((config.chain_length, k)))
    scale0 = _initial_scales(model, prior, data, w, theta0, idx)
    samples, acc, scales = kernels.rwm(
        data.X[:, list(idx)], data.y, w, trials_vector(model, data.n), model.code,
        model.sigma2, prior.code, prior.coord_xi()[list(idx)], data.n / prior.n0,
        theta0[list(idx)], scale0, z, logu, config.burn_in, config.thin,
        config.adapt_batch, config.target_accept)
    rate = float(np.mean(acc))
    meta = {
        "acceptance_per_coord": acc.tolist(),
        "burn_in": config.burn_in,
        "thin": config.thin,
        "chain_length": config.chain_length,
        "seed": config.seed,
        "final_scales": scales.tolist(),
    }
    if check_acceptance and not (config.accept_low <= rate <= config.accept_high):
        raise SamplerDiagnosticError(
            f"acceptance rate {rate:.3f} outside [{config.accept_low}, {config.accept_high}]",
            rate)
    return Posterior(model, prior, theta_map, idx, samples=samples, obs_weights=w,
                     acceptance=rate, chain_meta=meta)


def is_conjugate(model: LikelihoodModel, prior: PriorSpec) -> bool:
    return model.kind == "linear_gaussian" and prior.family == "normal"


def fit_posterior(model, prior, data, config=None, obs_weights=None, coords=None,
                  analytic: bool = True) -> Posterior:
    """Analytic posterior when conjugate (and ``analytic``), Metropolis otherwise."""
    if analytic and is_conjugate(model, prior):
        return conjugate_posterior(model, prior, data, obs_weights=obs_weights, coords=coords)
    return mcmc_sample(model, prior, data, config, obs_weights=obs_weights, coords=coords)


def restricted_posterior(model, prior, data, active: ActiveSet, config=None,
                         obs_weights=None, analytic: bool = True) -> Posterior:
    """Posterior over the active coordinates with the rest pinned at zero.

    An empty active set gives the point mass at ``theta = 0`` (flagged in
    ``chain_meta``).
    """
    if active.empty:
        post = Posterior(model, prior, np.zeros(data.p), (),
                         obs_weights=_obs_weights(data, obs_weights),
                         chain_meta={"empty_active_set": True})
        return post
    return fit_posterior(model, prior, data, config, obs_weights=obs_weights,
                         coords=active.indices, analytic=analytic)
