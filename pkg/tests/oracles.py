"""Independent reference computations used by the tests.

Nothing here imports the package's criteria code: the conjugate posterior is
re-derived with plain linear algebra and the per-row expectations over the
Gaussian linear predictor use 50-node Gauss-Hermite quadrature.
"""

import math

import numpy as np

GH_NODES, GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(50)
GH_WEIGHTS = GH_WEIGHTS / math.sqrt(2.0 * math.pi)  # expectations under N(0, 1)


def conjugate(X, y, sigma2, zeta, n0=None):
    """Posterior mean/cov under theta ~ N(0, zeta) raised to the power n/n0."""
    n, p = X.shape
    n0 = n if n0 is None else n0
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (p,))
    prec = X.T @ X / sigma2 + np.diag(n / n0 / zeta)
    cov = np.linalg.inv(prec)
    return cov @ X.T @ y / sigma2, cov


def gauss_logpdf(y, mu, s2):
    return -0.5 * np.log(2.0 * np.pi * s2) - (y - mu) ** 2 / (2.0 * s2)


def _eta_nodes(X, mean, cov):
    mu = X @ mean
    sd = np.sqrt(np.einsum("ij,jk,ik->i", X, cov, X))
    return mu[:, None] + sd[:, None] * GH_NODES[None, :]


def predictive_quadrature(X, y, sigma2, mean, cov):
    """log E f(y_i | theta) per row by quadrature over eta_i = x_i' theta."""
    lf = gauss_logpdf(y[:, None], _eta_nodes(X, mean, cov), sigma2)
    return np.log(np.exp(lf) @ GH_WEIGHTS)


def loglik_moments_quadrature(X, y, sigma2, mean, cov):
    lf = gauss_logpdf(y[:, None], _eta_nodes(X, mean, cov), sigma2)
    m = lf @ GH_WEIGHTS
    v = (lf - m[:, None]) ** 2 @ GH_WEIGHTS
    return m, v


def waic_quadrature(X, y, sigma2, mean, cov):
    _, v = loglik_moments_quadrature(X, y, sigma2, mean, cov)
    return float(-np.sum(predictive_quadrature(X, y, sigma2, mean, cov)) + np.sum(v))


def dic_quadrature(X, y, sigma2, mean, cov):
    m, _ = loglik_moments_quadrature(X, y, sigma2, mean, cov)
    return float(np.sum(gauss_logpdf(y, X @ mean, sigma2)) - 2.0 * np.sum(m))


def fisher_normal_prior(X, y, sigma2, zeta, theta, n0=None):
    """Hand-coded I1, I2 for the linear model with a N(0, zeta) prior."""
    n, p = X.shape
    n0 = n if n0 is None else n0
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (p,))
    I1 = X.T @ X / (n * sigma2) + np.diag(1.0 / (n0 * zeta))
    S = X * ((y - X @ theta) / sigma2)[:, None] - theta / (n0 * zeta)
    return I1, S.T @ S / n


def log_predictive_closed_form(X, y, sigma2, zeta, n0=None):
    """Closed-form log N(y_i; x_i'm, sigma2 + x_i'S x_i) as a function of zeta."""
    m, S = conjugate(X, y, sigma2, zeta, n0)
    return gauss_logpdf(y, X @ m, sigma2 + np.einsum("ij,jk,ik->i", X, S, X))


def richardson(f, x, h):
    """Fourth-order central first derivative."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def richardson2(f, x, h):
    """Fourth-order central second derivative."""
    return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h)
