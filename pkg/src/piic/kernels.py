"""Hot numeric kernels with numba and pure-numpy implementations.

Every public kernel dispatches on :data:`piic._accel.USE_NUMBA` at call time.
Both paths consume the same pre-drawn random numbers, so they target the
same chain; results agree to floating-point reassociation, not bitwise.

Likelihood codes: ``0`` gaussian, ``1`` binomial with logistic link.
Prior codes: ``0`` zero-mean normal (parameter = variance), ``1`` zero-mean
Laplace (parameter = rate).
"""

import math

import numpy as np
from scipy.special import logsumexp

from . import _accel
from ._accel import njit

GAUSSIAN = 0
BINOMIAL = 1
NORMAL_PRIOR = 0
LAPLACE_PRIOR = 1

TARGET_ACCEPT = 0.44


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------


@njit
def _log1pexp_nb(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _log1pexp_np(x):
    return np.logaddexp(0.0, x)


# ---------------------------------------------------------------------------
# componentwise adaptive random-walk Metropolis
# ---------------------------------------------------------------------------


@njit
def _rwm_nb(X, y, obs_w, trials, lik_kind, sigma2, prior_kind, prior_par,
            prior_mult, theta0, scale0, z, logu, burn_in, thin, adapt_batch,
            target):
    n, p = X.shape
    Xt = np.ascontiguousarray(X.T)  # coordinate updates walk one column at a time
    T = z.shape[0]
    n_keep = (T - burn_in) // thin
    out = np.empty((n_keep, p))
    theta = theta0.copy()
    scale = scale0.copy()
    eta = np.zeros(n)
    for i in range(n):
        s = 0.0
        for j in range(p):
            s += X[i, j] * theta[j]
        eta[i] = s
    # cached softplus(eta) for the binomial likelihood
    sp = np.zeros(n)
    sp_new = np.zeros(n)
    if lik_kind == 1:
        for i in range(n):
            sp[i] = _log1pexp_nb(eta[i])
    acc_batch = np.zeros(p)
    acc_post = np.zeros(p)
    batch = 0
    keep = 0
    for t in range(T):
        for j in range(p):
            old = theta[j]
            prop = old + scale[j] * z[t, j]
            d = prop - old
            ll = 0.0
            for i in range(n):
                xij = Xt[j, i]
                if xij == 0.0:
                    continue
                e_old = eta[i]
                e_new = e_old + xij * d
                if lik_kind == 0:
                    r_old = y[i] - e_old
                    r_new = y[i] - e_new
                    ll += obs_w[i] * (r_old * r_old - r_new * r_new) / (2.0 * sigma2)
                else:
                    v = _log1pexp_nb(e_new)
                    sp_new[i] = v
                    ll += obs_w[i] * (y[i] * (e_new - e_old) - trials[i] * (v - sp[i]))
            if prior_kind == 0:
                lp = -(prop * prop - old * old) / (2.0 * prior_par[j])
            else:
                lp = -prior_par[j] * (abs(prop) - abs(old))
            if logu[t, j] < ll + prior_mult * lp:
                theta[j] = prop
                for i in range(n):
                    xij = Xt[j, i]
                    if xij != 0.0:
                        eta[i] += xij * d
                        if lik_kind == 1:
                            sp[i] = sp_new[i]
                if t < burn_in:
                    acc_batch[j] += 1.0
                else:
                    acc_post[j] += 1.0
        if t < burn_in and (t + 1) % adapt_batch == 0:
            batch += 1
            delta = min(0.05, 1.0 / math.sqrt(batch))
            for j in range(p):
                if acc_batch[j] / adapt_batch > target:
                    scale[j] *= math.exp(delta)
                else:
                    scale[j] *= math.exp(-delta)
                acc_batch[j] = 0.0
        if t >= burn_in and (t - burn_in) % thin == 0 and keep < n_keep:
            for j in range(p):
                out[keep, j] = theta[j]
            keep += 1
    n_post = T - burn_in
    if n_post > 0:
        acc_post /= n_post
    return out, acc_post, scale


def _rwm_np(X, y, obs_w, trials, lik_kind, sigma2, prior_kind, prior_par,
            prior_mult, theta0, scale0, z, logu, burn_in, thin, adapt_batch,
            target):
    n, p = X.shape
    T = z.shape[0]
    n_keep = (T - burn_in) // thin
    out = np.empty((n_keep, p))
    theta = theta0.copy()
    scale = scale0.copy()
    eta = X @ theta
    acc_batch = np.zeros(p)
    acc_post = np.zeros(p)
    batch = 0
    keep = 0
    cols = [X[:, j] for j in range(p)]
    for t in range(T):
        for j in range(p):
            old = theta[j]
            prop = old + scale[j] * z[t, j]
            d = prop - old
            e_new = eta + cols[j] * d
            if lik_kind == 0:
                ll = np.sum(obs_w * ((y - eta) ** 2 - (y - e_new) ** 2)) / (2.0 * sigma2)
            else:
                ll = np.sum(obs_w * (y * (e_new - eta) - trials * (
                    _log1pexp_np(e_new) - _log1pexp_np(eta))))
            if prior_kind == 0:
                lp = -(prop * prop - old * old) / (2.0 * prior_par[j])
            else:
                lp = -prior_par[j] * (abs(prop) - abs(old))
            if logu[t, j] < ll + prior_mult * lp:
                theta[j] = prop
                eta = e_new
                if t < burn_in:
                    acc_batch[j] += 1.0
                else:
                    acc_post[j] += 1.0
        if t < burn_in and (t + 1) % adapt_batch == 0:
            batch += 1
            delta = min(0.05, 1.0 / math.sqrt(batch))
            up = acc_batch / adapt_batch > target
            scale = np.where(up, scale * math.exp(delta), scale * math.exp(-delta))
            acc_batch[:] = 0.0
        if t >= burn_in and (t - burn_in) % thin == 0 and keep < n_keep:
            out[keep] = theta
            keep += 1
    n_post = T - burn_in
    if n_post > 0:
        acc_post /= n_post
    return out, acc_post, scale


def rwm(X, y, obs_w, trials, lik_kind, sigma2, prior_kind, prior_par, prior_mult,
        theta0, scale0, z, logu, burn_in, thin, adapt_batch=50, target=TARGET_ACCEPT):
    """Componentwise random-walk Metropolis over ``theta``.

    ``z`` (T x p) are standard-normal proposal increments and ``logu``
    (T x p) log-uniforms for the accept step. Proposal scales adapt in
    batches of ``adapt_batch`` iterations during burn-in only.

    Returns ``(samples, acceptance_per_coordinate, final_scales)``.
    """
    args = (
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(obs_w, dtype=np.float64),
        np.ascontiguousarray(trials, dtype=np.float64),
        int(lik_kind), float(sigma2), int(prior_kind),
        np.ascontiguousarray(prior_par, dtype=np.float64),
        float(prior_mult),
        np.ascontiguousarray(theta0, dtype=np.float64),
        np.ascontiguousarray(scale0, dtype=np.float64),
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(logu, dtype=np.float64),
        int(burn_in), int(thin), int(adapt_batch), float(target),
    )
    if _accel.USE_NUMBA:
        return _rwm_nb(*args)
    return _rwm_np(*args)


# ---------------------------------------------------------------------------
# weighted lasso by cyclic coordinate descent
# ---------------------------------------------------------------------------


@njit
def _wlasso_cd_nb(X, y, wts, lam, theta0, tol, max_sweeps, history):
    n, p = X.shape
    theta = theta0.copy()
    r = y.copy()
    for i in range(n):
        s = 0.0
        for j in range(p):
            s += X[i, j] * theta[j]
        r[i] -= s
    curv = np.zeros(p)
    for j in range(p):
        c = 0.0
        for i in range(n):
            c += wts[i] * X[i, j] * X[i, j]
        curv[j] = c
    hist = np.empty(max_sweeps + 1) if history else np.empty(0)
    if history:
        obj = 0.0
        for i in range(n):
            obj += 0.5 * wts[i] * r[i] * r[i]
        for j in range(p):
            obj += lam[j] * abs(theta[j])
        hist[0] = obj
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for j in range(p):
            if curv[j] == 0.0:
                if theta[j] != 0.0:
                    max_change = max(max_change, abs(theta[j]))
                    theta[j] = 0.0
                continue
            rho = 0.0
            for i in range(n):
                rho += wts[i] * X[i, j] * r[i]
            rho += curv[j] * theta[j]
            if rho > lam[j]:
                new = (rho - lam[j]) / curv[j]
            elif rho < -lam[j]:
                new = (rho + lam[j]) / curv[j]
            else:
                new = 0.0
            d = new - theta[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= X[i, j] * d
                theta[j] = new
                max_change = max(max_change, abs(d))
        if history:
            obj = 0.0
            for i in range(n):
                obj += 0.5 * wts[i] * r[i] * r[i]
            for j in range(p):
                obj += lam[j] * abs(theta[j])
            hist[sweeps] = obj
        if max_change < tol:
            converged = True
            break
    if history:
        hist = hist[: sweeps + 1]
    return theta, sweeps, converged, hist


def _wlasso_cd_np(X, y, wts, lam, theta0, tol, max_sweeps, history):
    n, p = X.shape
    theta = theta0.copy()
    r = y - X @ theta
    curv = (wts[:, None] * X * X).sum(axis=0)
    hist = [] if history else None

    def objective():
        return 0.5 * np.sum(wts * r * r) + np.sum(lam * np.abs(theta))

    if history:
        hist.append(objective())
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for j in range(p):
            if curv[j] == 0.0:
                if theta[j] != 0.0:
                    max_change = max(max_change, abs(theta[j]))
                    theta[j] = 0.0
                continue
            rho = np.dot(wts * X[:, j], r) + curv[j] * theta[j]
            new = np.sign(rho) * max(abs(rho) - lam[j], 0.0) / curv[j]
            d = new - theta[j]
            if d != 0.0:
                r -= X[:, j] * d
                theta[j] = new
                max_change = max(max_change, abs(d))
        if history:
            hist.append(objective())
        if max_change < tol:
            converged = True
            break
    return theta, sweeps, converged, np.asarray(hist if history else [], dtype=float)


def wlasso_cd(X, y, wts, lam, theta0=None, tol=1e-8, max_sweeps=10_000, history=False):
    """Minimise ``0.5 * sum(wts * (y - X theta)**2) + sum(lam * |theta|)``.

    Returns ``(theta, sweeps, converged, objective_history)``. Exact zeros
    come out of the soft-threshold step.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    p = X.shape[1]
    theta0 = np.zeros(p) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    args = (
        X,
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(wts, dtype=np.float64),
        np.ascontiguousarray(lam, dtype=np.float64),
        np.ascontiguousarray(theta0),
        float(tol), int(max_sweeps), bool(history),
    )
    if _accel.USE_NUMBA:
        return _wlasso_cd_nb(*args)
    return _wlasso_cd_np(*args)


# ---------------------------------------------------------------------------
# per-sample log-likelihoods and predictive log-mean-exp
# ---------------------------------------------------------------------------


@njit
def _loglik_matrix_nb(Theta, X, y, trials, lconst, lik_kind, sigma2):
    S, p = Theta.shape
    n = X.shape[0]
    out = np.empty((S, n))
    half_log = 0.5 * math.log(2.0 * math.pi * sigma2)
    for s in range(S):
        for i in range(n):
            eta = 0.0
            for j in range(p):
                eta += X[i, j] * Theta[s, j]
            if lik_kind == 0:
                r = y[i] - eta
                out[s, i] = -half_log - r * r / (2.0 * sigma2)
            else:
                out[s, i] = lconst[i] + y[i] * eta - trials[i] * _log1pexp_nb(eta)
    return out


def _loglik_matrix_np(Theta, X, y, trials, lconst, lik_kind, sigma2):
    eta = Theta @ X.T
    if lik_kind == 0:
        return -0.5 * math.log(2.0 * math.pi * sigma2) - (y - eta) ** 2 / (2.0 * sigma2)
    return lconst + y * eta - trials * _log1pexp_np(eta)


def loglik_matrix(Theta, X, y, trials, lconst, lik_kind, sigma2):
    """``log f(z_i | theta_s)`` as an (S, n) array."""
    args = (
        np.ascontiguousarray(np.atleast_2d(Theta), dtype=np.float64),
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(trials, dtype=np.float64),
        np.ascontiguousarray(lconst, dtype=np.float64),
        int(lik_kind), float(sigma2),
    )
    if _accel.USE_NUMBA:
        return _loglik_matrix_nb(*args)
    return _loglik_matrix_np(*args)


@njit
def _predictive_lme_nb(Theta, logw, X, y, trials, lconst, lik_kind, sigma2, power):
    S, p = Theta.shape
    M = X.shape[0]
    out = np.empty(M)
    half_log = 0.5 * math.log(2.0 * math.pi * sigma2)
    buf = np.empty(S)
    # normaliser of the sample weights
    wmax = -np.inf
    for s in range(S):
        if logw[s] > wmax:
            wmax = logw[s]
    wsum = 0.0
    for s in range(S):
        wsum += math.exp(logw[s] - wmax)
    lognorm = wmax + math.log(wsum)
    for m in range(M):
        vmax = -np.inf
        for s in range(S):
            eta = 0.0
            for j in range(p):
                eta += X[m, j] * Theta[s, j]
            if lik_kind == 0:
                r = y[m] - eta
                v = -half_log - r * r / (2.0 * sigma2)
            else:
                v = lconst[m] + y[m] * eta - trials[m] * _log1pexp_nb(eta)
            v = power[m] * v + logw[s]
            buf[s] = v
            if v > vmax:
                vmax = v
        acc = 0.0
        for s in range(S):
            acc += math.exp(buf[s] - vmax)
        out[m] = vmax + math.log(acc) - lognorm
    return out


def _predictive_lme_np(Theta, logw, X, y, trials, lconst, lik_kind, sigma2, power, chunk=512):
    M = X.shape[0]
    out = np.empty(M)
    lognorm = logsumexp(logw)
    for start in range(0, M, chunk):
        sl = slice(start, start + chunk)
        L = _loglik_matrix_np(Theta, X[sl], y[sl], trials[sl], lconst[sl], lik_kind, sigma2)
        out[sl] = logsumexp(power[sl] * L + logw[:, None], axis=0) - lognorm
    return out


def predictive_logmeanexp(Theta, logw, X, y, trials, lconst, lik_kind, sigma2, power=None):
    """``log sum_s w_s f(z_m | theta_s)**a_m / sum_s w_s`` for each new point m.

    ``power`` holds the exponents ``a_m`` (default 1). Streams over points so
    the (M, S) likelihood table is never stored.
    """
    if power is None:
        power = np.ones(np.shape(y)[0])
    args = (
        np.ascontiguousarray(np.atleast_2d(Theta), dtype=np.float64),
        np.ascontiguousarray(logw, dtype=np.float64),
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(trials, dtype=np.float64),
        np.ascontiguousarray(lconst, dtype=np.float64),
        int(lik_kind), float(sigma2),
        np.ascontiguousarray(power, dtype=np.float64),
    )
    if _accel.USE_NUMBA:
        return _predictive_lme_nb(*args)
    return _predictive_lme_np(*args)
