"""Out-of-sample forecast scoring and in-sample residual diagnostics.

One filter pass over the full series supplies both the predictive score
(its per-step likelihood increments on the test slice) and the weighted
particle clouds from which one-step-ahead forecast distributions are
built. The predictive law at each test step is a zero-mean Gaussian
mixture: every weighted particle is propagated one step several times and
each propagated state contributes a N(0, variance(z)) component. Interval
endpoints and value-at-risk quantiles come from bisecting the mixture CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import chi2

from . import _kernels
from .data import ReturnSeries, kurtosis, skewness
from .filter import RandomField, particle_filter
from .models import LstmSvParams, NsvParams, SvParams
from .seeding import substream

__all__ = [
    "ForecastReport",
    "ResidualDiagnostics",
    "predictive_scores",
    "residual_diagnostics",
    "qq_points",
    "ljung_box",
    "ljung_box_stat",
    "gaussian_mixture_quantile",
    "count_violations",
    "hit_fraction",
    "quantile_score",
]


@dataclass(frozen=True)
class ForecastReport:
    """One-step-ahead forecast scores over the test slice."""

    pps: float
    violations: int
    qs: float
    hit_pct: float
    alpha: float
    intervals: np.ndarray  # (test_len, 2) lower/upper central-coverage bounds
    var_forecasts: np.ndarray  # (test_len,) alpha-quantile forecasts


@dataclass(frozen=True)
class ResidualDiagnostics:
    residuals: np.ndarray
    skew: float
    kurtosis: float
    lb_stat: float
    lb_pvalue: float
    lb_lags: int


def gaussian_mixture_quantile(sds, weights, p, tol=1e-8):
    """p-quantile of a zero-mean Gaussian scale mixture (CDF bisection)."""
    sds = np.ascontiguousarray(sds, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    if sds.shape != w.shape or sds.ndim != 1 or sds.size == 0:
        raise ValueError("sds and weights must be equal-length nonempty vectors")
    if np.any(sds <= 0.0):
        raise ValueError("component sds must be positive")
    if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must be nonnegative and sum to 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    return float(_kernels.mixture_quantile(sds, w, p, tol))


def count_violations(y, lower, upper):
    """Observations falling strictly outside their forecast interval."""
    y = np.asarray(y, dtype=float)
    return int(np.sum((y < np.asarray(lower)) | (y > np.asarray(upper))))


def hit_fraction(y, var_forecasts):
    """Fraction of observations at or below their VaR forecast."""
    y = np.asarray(y, dtype=float)
    return float(np.mean(y <= np.asarray(var_forecasts)))


def quantile_score(y, var_forecasts, alpha):
    """Mean pinball loss (alpha - 1{y <= q})(y - q); nonnegative by construction."""
    y = np.asarray(y, dtype=float)
    q = np.asarray(var_forecasts, dtype=float)
    return float(np.mean((alpha - (y <= q)) * (y - q)))


def _propagated_sds(params, hist, t, eps):
    """Sds of the one-step-ahead mixture components built from the time-t
    cloud; eps has shape (N, S). Invalid Box-Cox components get sd 0."""
    zp = hist.z[t]
    sigma = math.sqrt(params.sigma2)
    if isinstance(params, LstmSvParams):
        w = params.lstm
        ep = hist.eta[t]
        hp = hist.h[t]
        cp = hist.c[t]
        g_f = _expit(w.v_f * ep + w.w_f * hp + w.b_f)
        g_i = _expit(w.v_i * ep + w.w_i * hp + w.b_i)
        x_d = _expit(w.v_d * ep + w.w_d * hp + w.b_d)
        g_o = _expit(w.v_o * ep + w.w_o * hp + w.b_o)
        c_new = g_f * cp + g_i * x_d
        h_new = g_o * np.tanh(c_new)
        eta_new = params.beta0 + params.beta1 * h_new[:, None] + sigma * eps
        z_next = eta_new + params.phi * zp[:, None]
    else:
        z_next = params.mu + params.phi * (zp[:, None] - params.mu) + sigma * eps
    if isinstance(params, NsvParams) and abs(params.delta) >= 1e-8:
        wv = 1.0 + params.delta * z_next
        sds = np.where(wv > 0.0, np.power(np.maximum(wv, 1e-300), 0.5 / params.delta), 0.0)
    else:
        sds = np.exp(0.5 * z_next)
    return sds.ravel()


def _expit(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def predictive_scores(
    params,
    returns,
    train_len=None,
    alpha=0.01,
    n_particles=200,
    n_propagate=10,
    seed=0,
    coverage=0.99,
    quantile_tol=1e-8,
):
    """Score one-step-ahead forecasts at a fixed parameter point.

    ``returns`` is a ReturnSeries (its split is used) or a plain vector
    with ``train_len`` giving the in-sample length. One filter pass over
    the full series yields the predictive score
    PPS = -mean of the test-slice per-step log-likelihood increments; at
    each test step the weighted time t-1 particles are propagated
    ``n_propagate`` times to form the forecast mixture, from which the
    central ``coverage`` interval and the ``alpha``-quantile VaR forecast
    are extracted. Violations count observations strictly outside their
    interval; the hit percentage is the fraction at or below the VaR.
    """
    if isinstance(returns, ReturnSeries):
        y = returns.values
        if train_len is None:
            train_len = returns.train_len
    else:
        y = np.ascontiguousarray(returns, dtype=float)
    if train_len is None:
        raise ValueError("train_len is required for a plain return vector")
    train_len = int(train_len)
    T = y.size
    if not 1 <= train_len < T:
        raise ValueError(f"test segment is empty (train_len={train_len}, T={T})")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must lie in (0, 1)")
    if n_propagate < 1:
        raise ValueError("n_propagate must be at least 1")

    rng = substream(seed, "forecast")
    field = RandomField.sample(rng, T, n_particles, 1)
    res = particle_filter(params, y, field, return_history=True)
    if res.degenerate:
        raise RuntimeError("particle filter degenerated over the forecast series")
    hist = res.history

    test = y[train_len:]
    m = test.size
    pps = float(-np.mean(res.step_loglik[train_len:]))

    p_lo = 0.5 * (1.0 - coverage)
    p_hi = 1.0 - p_lo
    lower = np.empty(m)
    upper = np.empty(m)
    var_q = np.empty(m)
    base_w = np.repeat(1.0 / n_propagate, n_propagate)
    for j, t in enumerate(range(train_len, T)):
        eps = rng.standard_normal((n_particles, n_propagate))
        sds = _propagated_sds(params, hist, t - 1, eps)
        w = (hist.weights[t - 1][:, None] * base_w).ravel()
        valid = sds > 0.0
        if not np.all(valid):
            w = w[valid]
            total = w.sum()
            if total <= 0.0:
                raise RuntimeError("no valid forecast components at a test step")
            w = w / total
            sds = sds[valid]
        lower[j] = _kernels.mixture_quantile(sds, w, p_lo, quantile_tol)
        upper[j] = _kernels.mixture_quantile(sds, w, p_hi, quantile_tol)
        var_q[j] = _kernels.mixture_quantile(sds, w, alpha, quantile_tol)

    return ForecastReport(
        pps=pps,
        violations=count_violations(test, lower, upper),
        qs=quantile_score(test, var_q, alpha),
        hit_pct=hit_fraction(test, var_q),
        alpha=float(alpha),
        intervals=np.column_stack([lower, upper]),
        var_forecasts=var_q,
    )


def ljung_box_stat(autocorrs, n):
    """Ljung-Box statistic n(n+2) sum rho_k^2/(n-k) and chi-square p-value.

    Degrees of freedom equal the number of autocorrelations supplied; a
    series with zero autocorrelation at every lag gives (0, 1).
    """
    rho = np.asarray(autocorrs, dtype=float)
    lags = rho.size
    if lags < 1:
        raise ValueError("need at least one autocorrelation")
    if n <= lags:
        raise ValueError("sample size must exceed the number of lags")
    ks = np.arange(1, lags + 1)
    stat = float(n * (n + 2.0) * np.sum(rho**2 / (n - ks)))
    pvalue = float(chi2.sf(stat, lags))
    return stat, pvalue


def ljung_box(x, lags=10):
    """Ljung-Box portmanteau test of no autocorrelation up to ``lags``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    lags = int(lags)
    if lags < 1:
        raise ValueError("lags must be at least 1")
    if n <= lags + 1:
        raise ValueError("series too short for the requested lags")
    d = x - x.mean()
    g0 = float(d @ d) / n
    if g0 <= 0.0:
        raise ValueError("constant series has no autocorrelation")
    rho = np.array([float(d[:-k] @ d[k:]) / n / g0 for k in range(1, lags + 1)])
    return ljung_box_stat(rho, n)


def residual_diagnostics(params, y_train, n_particles=200, seed=0, lags=10):
    """Standardised in-sample residuals with moment and Ljung-Box checks.

    Residuals divide each observation by the filtered volatility scale,
    e^{z_hat/2} with z_hat the filtered mean of the log-variance (the
    Box-Cox scale for N-SV).
    """
    y = np.ascontiguousarray(y_train, dtype=float)
    if y.ndim != 1 or y.size < max(int(lags) + 2, 5):
        raise ValueError("training series too short for diagnostics")
    rng = substream(seed, "diagnose")
    field = RandomField.sample(rng, y.size, n_particles, 1)
    res = particle_filter(params, y, field)
    if res.degenerate:
        raise RuntimeError("particle filter degenerated over the training series")
    z_hat = res.filtered_mean
    if isinstance(params, NsvParams) and abs(params.delta) >= 1e-8:
        wv = 1.0 + params.delta * z_hat
        if np.any(wv <= 0.0):
            raise RuntimeError("filtered state left the Box-Cox support")
        residuals = y / np.power(wv, 0.5 / params.delta)
    else:
        residuals = y * np.exp(-0.5 * z_hat)
    stat, pvalue = ljung_box(residuals, lags)
    return ResidualDiagnostics(
        residuals=residuals,
        skew=skewness(residuals),
        kurtosis=kurtosis(residuals),
        lb_stat=stat,
        lb_pvalue=pvalue,
        lb_lags=int(lags),
    )


def qq_points(residuals):
    """Sorted residuals against matching standard-normal quantiles.

    Theoretical coordinates are Phi^{-1}((i - 0.5) / n) for i = 1..n.
    """
    r = np.sort(np.asarray(residuals, dtype=float))
    n = r.size
    if n < 2:
        raise ValueError("need at least 2 residuals")
    theoretical = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return theoretical, r
