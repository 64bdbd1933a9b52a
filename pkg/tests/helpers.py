"""Shared test oracles: dense-grid likelihoods and small utilities.

The grid filter discretizes the latent AR(1) on a fine grid and runs the
exact HMM forward recursion; it is an independent route to the likelihood
used to validate the particle filter's unbiasedness and filtered moments.
"""

import math

import numpy as np
from scipy.stats import norm


def ar1_grid_filter(y, init_mean, init_sd, const, phi, sigma, n_grid=800, span=8.0):
    """Exact HMM filter on a z-grid for an AR(1) latent SV model.

    The latent recursion is z' = const + phi * z + N(0, sigma^2) with
    z_1 ~ N(init_mean, init_sd^2); the measurement is N(0, e^z).
    Returns (loglik, filtered_means).
    """
    width = span * max(init_sd, sigma / math.sqrt(1.0 - phi * phi))
    grid = np.linspace(init_mean - width, init_mean + width, n_grid)
    dz = grid[1] - grid[0]
    trans = norm.pdf(grid[None, :], loc=const + phi * grid[:, None], scale=sigma) * dz
    alpha = norm.pdf(grid, loc=init_mean, scale=init_sd) * dz
    loglik = 0.0
    means = np.empty(y.size)
    for t in range(y.size):
        g = norm.pdf(y[t], loc=0.0, scale=np.exp(0.5 * grid))
        alpha = alpha * g if t == 0 else (alpha @ trans) * g
        c = alpha.sum()
        loglik += math.log(c)
        alpha = alpha / c
        means[t] = float(alpha @ grid)
    return loglik, means


def sv_grid_filter(params, y, n_grid=800, span=8.0):
    """Grid filter matched to the SV parameterization (stationary start)."""
    sd_stat = math.sqrt(params.sigma2 / (1.0 - params.phi**2))
    return ar1_grid_filter(
        y,
        init_mean=params.mu,
        init_sd=sd_stat,
        const=params.mu * (1.0 - params.phi),
        phi=params.phi,
        sigma=math.sqrt(params.sigma2),
        n_grid=n_grid,
        span=span,
    )


def lstmsv_beta1_zero_grid_filter(params, y, n_grid=800, span=10.0):
    """Grid filter for LSTM-SV with beta1 = 0: an AR(1) with intercept
    beta0 and the non-stationary start z_1 ~ N(beta0, sigma^2)."""
    assert params.beta1 == 0.0
    sigma = math.sqrt(params.sigma2)
    mean_stat = params.beta0 / (1.0 - params.phi)
    width = span * max(sigma / math.sqrt(1.0 - params.phi**2), sigma, 1e-3)
    center = 0.5 * (params.beta0 + mean_stat)
    width += abs(params.beta0 - mean_stat)
    grid = np.linspace(center - width, center + width, n_grid)
    dz = grid[1] - grid[0]
    trans = norm.pdf(grid[None, :], loc=params.beta0 + params.phi * grid[:, None], scale=sigma) * dz
    alpha = norm.pdf(grid, loc=params.beta0, scale=sigma) * dz
    loglik = 0.0
    for t in range(y.size):
        g = norm.pdf(y[t], loc=0.0, scale=np.exp(0.5 * grid))
        alpha = alpha * g if t == 0 else (alpha @ trans) * g
        c = alpha.sum()
        loglik += math.log(c)
        alpha = alpha / c
    return loglik
