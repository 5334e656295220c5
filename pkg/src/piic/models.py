"""Likelihoods, priors and the intensified joint log-density.

The prior on ``theta`` is raised to the power ``n / n0``; per observation this
is ``log g(z_i, theta) = log f(z_i | theta) + log pi(theta; xi) / n0``.

Hyper-parameters ``xi`` are in natural units: the variance of each normal
coordinate, or the *rate* of each Laplace coordinate (density
``(xi / 2) exp(-xi |theta|)``). A "Laplace(0, zeta)" scale maps to rate
``1 / zeta``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from . import kernels


class ModelError(ValueError):
    """Invalid model, prior or data specification."""


class KinkError(ModelError):
    """Derivative requested at a Laplace kink without an active-set mask."""


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Regression rows ``z_i = (y_i, x_i)``.

    ``kind`` is ``"gaussian"`` or ``"binomial"``; binomial rows carry
    ``trials`` (the common ``m``) and counts ``0 <= y <= m``.
    """

    X: np.ndarray
    y: np.ndarray
    kind: str = "gaussian"
    trials: int | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ModelError("X must be a 2-D array (n, p)")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ModelError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ModelError("need n >= 1 and p >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ModelError("non-finite values in data")
        if self.kind == "gaussian":
            if self.trials is not None:
                raise ModelError("gaussian data take no trials")
        elif self.kind == "binomial":
            if self.trials is None or int(self.trials) < 1:
                raise ModelError("binomial data need trials m >= 1")
            if np.any(y < 0) or np.any(y > self.trials) or np.any(y != np.round(y)):
                raise ModelError("binomial responses must be integers in [0, m]")
            object.__setattr__(self, "trials", int(self.trials))
        else:
            raise ModelError(f"unknown response kind {self.kind!r}")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[float, Sequence[float]]], kind="gaussian", trials=None):
        rows = list(rows)
        if not rows:
            raise ModelError("dataset needs at least one row")
        widths = {len(x) for _, x in rows}
        if len(widths) != 1:
            raise ModelError(f"rows have differing covariate lengths {sorted(widths)}")
        y = [r[0] for r in rows]
        X = [list(r[1]) for r in rows]
        return cls(np.array(X, dtype=float), np.array(y, dtype=float), kind, trials)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def columns(self, idx) -> "Dataset":
        return Dataset(self.X[:, list(idx)], self.y, self.kind, self.trials)

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.kind, self.trials)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.encode())
        h.update(str(self.trials).encode())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class LikelihoodModel:
    kind: str
    sigma2: float = 1.0
    trials: int = 1

    def __post_init__(self):
        if self.kind == "linear_gaussian":
            if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
                raise ModelError("sigma2 must be a positive finite number")
        elif self.kind == "logistic_binomial":
            if int(self.trials) < 1:
                raise ModelError("trials must be >= 1")
        else:
            raise ModelError(f"unknown likelihood kind {self.kind!r}")

    @classmethod
    def linear_gaussian(cls, sigma2: float) -> "LikelihoodModel":
        return cls("linear_gaussian", sigma2=float(sigma2))

    @classmethod
    def logistic_binomial(cls, m: int) -> "LikelihoodModel":
        return cls("logistic_binomial", trials=int(m))

    @property
    def code(self) -> int:
        return kernels.GAUSSIAN if self.kind == "linear_gaussian" else kernels.BINOMIAL

    def check(self, data: Dataset) -> None:
        if self.kind == "linear_gaussian" and data.kind != "gaussian":
            raise ModelError("linear-gaussian model needs gaussian data")
        if self.kind == "logistic_binomial":
            if data.kind != "binomial":
                raise ModelError("logistic-binomial model needs binomial data")
            if data.trials != self.trials:
                raise ModelError(f"data has m={data.trials}, model has m={self.trials}")


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean normal or Laplace prior with grouped hyper-parameters.

    ``groups[j]`` is the (0-based) group of coordinate ``j``; ``xi[g]`` the
    hyper-parameter of group ``g``. A ``frozen`` prior is treated as not
    depending on ``xi`` when differentiating with respect to it.
    """

    family: str
    groups: tuple
    xi: tuple
    n0: int
    frozen: bool = False

    def __post_init__(self):
        if self.family not in ("normal", "laplace"):
            raise ModelError(f"unknown prior family {self.family!r}")
        groups = tuple(int(g) for g in self.groups)
        xi = tuple(float(v) for v in np.atleast_1d(self.xi))
        if not groups:
            raise ModelError("prior needs at least one coordinate")
        if min(groups) < 0 or max(groups) >= len(xi):
            raise ModelError(f"group indices must lie in 0..{len(xi) - 1}")
        if not all(v > 0 and math.isfinite(v) for v in xi):
            raise ModelError(f"hyper-parameters must be positive and finite, got {xi}")
        if int(self.n0) < 1:
            raise ModelError("n0 must be >= 1")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "n0", int(self.n0))

    @classmethod
    def shared(cls, family: str, p: int, xi: float, n0: int) -> "PriorSpec":
        return cls(family, (0,) * p, (xi,), n0)

    @classmethod
    def blocks(cls, family: str, p: int, xi: Sequence[float], n0: int) -> "PriorSpec":
        """Equal contiguous blocks, one hyper-parameter per block."""
        q = len(xi)
        if p % q:
            raise ModelError(f"p={p} is not divisible into {q} blocks")
        size = p // q
        return cls(family, tuple(j // size for j in range(p)), tuple(xi), n0)

    @property
    def p(self) -> int:
        return len(self.groups)

    @property
    def q(self) -> int:
        return len(self.xi)

    @property
    def code(self) -> int:
        return kernels.NORMAL_PRIOR if self.family == "normal" else kernels.LAPLACE_PRIOR

    @property
    def sparse(self) -> bool:
        return self.family == "laplace"

    def coord_xi(self) -> np.ndarray:
        return np.asarray(self.xi)[np.asarray(self.groups)]

    def with_xi(self, xi) -> "PriorSpec":
        return PriorSpec(self.family, self.groups, tuple(np.atleast_1d(xi)), self.n0, self.frozen)

    def with_n0(self, n0: int) -> "PriorSpec":
        return PriorSpec(self.family, self.groups, self.xi, n0, self.frozen)

    def restrict(self, idx) -> "PriorSpec":
        """Prior over the coordinates ``idx``; the hyper-parameter vector is kept whole."""
        idx = list(idx)
        if not idx:
            raise ModelError("cannot restrict a prior to an empty coordinate set")
        return PriorSpec(self.family, tuple(self.groups[j] for j in idx), self.xi, self.n0,
                         self.frozen)

    def group_indicator(self) -> np.ndarray:
        """(p, q) 0/1 matrix of group membership."""
        G = np.zeros((self.p, self.q))
        G[np.arange(self.p), np.asarray(self.groups)] = 1.0
        return G


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _theta(theta, p) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (p,):
        raise ModelError(f"theta has shape {theta.shape}, expected ({p},)")
    if not np.all(np.isfinite(theta)):
        raise ModelError("theta has non-finite components")
    return theta


def log_const(model: LikelihoodModel, data: Dataset) -> np.ndarray:
    """Per-row additive constant of ``log f`` (binomial coefficient)."""
    if model.kind == "linear_gaussian":
        return np.zeros(data.n)
    m = model.trials
    return gammaln(m + 1.0) - gammaln(data.y + 1.0) - gammaln(m - data.y + 1.0)


def trials_vector(model: LikelihoodModel, n: int) -> np.ndarray:
    return np.full(n, float(model.trials if model.kind == "logistic_binomial" else 0))


def linear_predictor(X: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``X @ theta`` over the nonzero coordinates only.

    Skipping exact zeros keeps sparse fits bit-identical when all-zero or
    inactive columns are added to ``X``.
    """
    nz = np.flatnonzero(theta)
    # always gather, so the product sees the same contiguous operand either way
    return X[:, nz] @ theta[nz]


def log_likelihood_rows(model: LikelihoodModel, data: Dataset, theta) -> np.ndarray:
    model.check(data)
    theta = _theta(theta, data.p)
    eta = linear_predictor(data.X, theta)
    if model.kind == "linear_gaussian":
        out = -0.5 * math.log(2.0 * math.pi * model.sigma2) - (data.y - eta) ** 2 / (2.0 * model.sigma2)
    else:
        out = log_const(model, data) + data.y * eta - model.trials * np.logaddexp(0.0, eta)
    if not np.all(np.isfinite(out)):
        raise ModelError("non-finite log-likelihood")
    return out


def log_likelihood(model: LikelihoodModel, data: Dataset, theta) -> float:
    return float(np.sum(log_likelihood_rows(model, data, theta)))


def log_prior(prior: PriorSpec, theta) -> float:
    """``log pi(theta; xi)`` with normalising constants (not intensified)."""
    theta = _theta(theta, prior.p)
    par = prior.coord_xi()
    if prior.family == "normal":
        return float(np.sum(-0.5 * np.log(2.0 * math.pi * par) - theta**2 / (2.0 * par)))
    return float(np.sum(np.log(par / 2.0) - par * np.abs(theta)))


def log_prior_batch(prior: PriorSpec, Theta: np.ndarray, xi=None) -> np.ndarray:
    """``log pi(theta_s; xi)`` for each row of ``Theta``."""
    par = prior.coord_xi() if xi is None else np.asarray(xi, dtype=float)[np.asarray(prior.groups)]
    if prior.family == "normal":
        return np.sum(-0.5 * np.log(2.0 * math.pi * par) - Theta**2 / (2.0 * par), axis=1)
    return np.sum(np.log(par / 2.0) - par * np.abs(Theta), axis=1)


def log_g(model: LikelihoodModel, prior: PriorSpec, data: Dataset, row_index: int, theta) -> float:
    """Per-row intensified joint log-density."""
    lf = log_likelihood_rows(model, data.rows([row_index]), theta)[0]
    return float(lf + log_prior(prior, theta) / prior.n0)


def log_g_total(model: LikelihoodModel, prior: PriorSpec, data: Dataset, theta) -> float:
    """Dataset-level ``log g`` = sum of rows = ``log f(z|theta) + (n/n0) log pi``."""
    return log_likelihood(model, data, theta) + data.n / prior.n0 * log_prior(prior, theta)


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def _coords(prior: PriorSpec, theta: np.ndarray, active) -> np.ndarray:
    if active is None:
        idx = np.arange(prior.p)
        if prior.sparse and np.any(theta == 0.0):
            raise KinkError(
                "theta has exact zeros under a Laplace prior; pass an active-set mask")
        return idx
    idx = np.asarray(getattr(active, "indices", active), dtype=int)
    if prior.sparse and np.any(theta[idx] == 0.0):
        raise KinkError("active coordinates must be nonzero under a Laplace prior")
    return idx


def likelihood_row_derivs(model: LikelihoodModel, data: Dataset, theta):
    """Row scores (n, p) and row curvature factors.

    The Hessian of row ``i`` is ``-c_i x_i x_i'`` with ``c`` returned.
    """
    eta = linear_predictor(data.X, theta)
    if model.kind == "linear_gaussian":
        resid = (data.y - eta) / model.sigma2
        curv = np.full(data.n, 1.0 / model.sigma2)
    else:
        prob = 1.0 / (1.0 + np.exp(-eta))
        resid = data.y - model.trials * prob
        curv = model.trials * prob * (1.0 - prob)
    return data.X * resid[:, None], curv


def prior_derivs(prior: PriorSpec, theta: np.ndarray):
    """Gradient and Hessian diagonal of ``log pi`` (off the Laplace kink)."""
    par = prior.coord_xi()
    if prior.family == "normal":
        return -theta / par, -1.0 / par
    return -par * np.sign(theta), np.zeros_like(theta)


def row_scores(model, prior, data, theta, active=None, prior_split=1):
    """Per-row ``d/dtheta log g(z_i, theta)`` on the active coordinates, shape (n, k).

    ``prior_split`` divides the per-row prior share further (``1 / (n0 H)``
    for ``H`` treatment factors).
    """
    model.check(data)
    theta = _theta(theta, data.p)
    idx = _coords(prior, theta, active)
    s_lik, _ = likelihood_row_derivs(model, data, theta)
    g_pri, _ = prior_derivs(prior, theta)
    share = 1.0 / (prior.n0 * prior_split)
    return np.ascontiguousarray(s_lik[:, idx] + share * g_pri[idx][None, :])


def total_hessian(model, prior, data, theta, active=None, obs_weights=None):
    """Dataset-level Hessian of ``sum_i w_i log f(z_i|theta) + (n/n0) log pi``."""
    model.check(data)
    theta = _theta(theta, data.p)
    idx = _coords(prior, theta, active)
    _, curv = likelihood_row_derivs(model, data, theta)
    w = np.ones(data.n) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    Xa = data.X[:, idx]
    H = -(Xa * (w * curv)[:, None]).T @ Xa
    _, h_pri = prior_derivs(prior, theta)
    H[np.diag_indices_from(H)] += data.n / prior.n0 * h_pri[idx]
    return H


def score_and_hessian(model, prior, data, row_index, theta, active=None):
    """Gradient and Hessian of the per-row ``log g(z_i, theta)``.

    Under a Laplace prior the coordinates at the kink must be excluded via
    ``active``; the returned arrays then live on the active coordinates.
    """
    theta = _theta(theta, data.p)
    idx = _coords(prior, theta, active)
    row = data.rows([row_index])
    s_lik, curv = likelihood_row_derivs(model, row, theta)
    g_pri, h_pri = prior_derivs(prior, theta)
    grad = s_lik[0, idx] + g_pri[idx] / prior.n0
    x = row.X[0, idx]
    hess = -curv[0] * np.outer(x, x)
    hess[np.diag_indices_from(hess)] += h_pri[idx] / prior.n0
    return grad, hess
