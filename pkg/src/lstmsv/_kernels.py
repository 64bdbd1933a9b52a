"""Numba kernels behind the particle filters and the predictive quantiles.

One filter kernel covers the AR(1)-latent families (SV and N-SV, switched
by a Box-Cox flag) and one covers LSTM-SV; both share the sorted
multinomial resampling and the log-space weight handling. Kernels are
deterministic functions of their inputs (no RNG inside) and release the
GIL so independent passes can run on a thread pool.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@njit(cache=True, nogil=True)
def norm_cdf(x):
    return 0.5 * (1.0 + math.erf(x * _INV_SQRT2))


@njit(cache=True, nogil=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def resample_ancestors(z, w, uniforms, use_sort, out):
    """Multinomial ancestor indices via inverse CDF on sorted particles.

    Particles are ordered ascending in z (stable sort); ancestor k is the
    original index of the first sorted cumulative-weight cell reaching
    uniforms[k]. With use_sort False the original particle order is kept
    (plain multinomial resampling).
    """
    n = z.shape[0]
    if use_sort:
        order = np.argsort(z, kind="mergesort")
    else:
        order = np.arange(n)
    cum = np.empty(n)
    acc = 0.0
    for j in range(n):
        acc += w[order[j]]
        cum[j] = acc
    cum[n - 1] = 1.0  # guard rounding shortfall so every uniform lands
    for k in range(uniforms.shape[0]):
        u = uniforms[k]
        lo = 0
        hi = n - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if cum[mid] >= u:
                hi = mid
            else:
                lo = mid + 1
        out[k] = order[lo]


@njit(cache=True, nogil=True)
def _normalize(logw, w):
    """Normalize log weights in place into w.

    Returns (step_loglik, ess, ok); ok is False when every weight
    vanished (all log weights -inf).
    """
    n = logw.shape[0]
    m = -np.inf
    for k in range(n):
        if logw[k] > m:
            m = logw[k]
    if not np.isfinite(m):
        return -np.inf, 0.0, False
    s = 0.0
    for k in range(n):
        w[k] = math.exp(logw[k] - m)
        s += w[k]
    sq = 0.0
    for k in range(n):
        w[k] /= s
        sq += w[k] * w[k]
    return m + math.log(s / n), 1.0 / sq, True


@njit(cache=True, nogil=True)
def _weighted_mean_sd(z, w):
    n = z.shape[0]
    mean = 0.0
    for k in range(n):
        mean += w[k] * z[k]
    var = 0.0
    for k in range(n):
        d = z[k] - mean
        var += w[k] * d * d
    sd = math.sqrt(var) if var > 0.0 else 0.0
    return mean, sd


@njit(cache=True, nogil=True)
def pf_ar1(
    mu,
    phi,
    sigma2,
    delta,
    use_boxcox,
    y,
    up,
    ur,
    use_sort,
    want_hist,
    z_hist,
    w_hist,
):
    """Bootstrap filter for an AR(1) latent log-variance (SV / N-SV).

    up[t] drives the time t+1 proposal, ur[t-1] the resampling into
    time t+1 (0-based rows). Returns
    (loglik, step_loglik, filtered_mean, filtered_sd, ess, degenerate).
    """
    T = y.shape[0]
    N = up.shape[1]
    sigma = math.sqrt(sigma2)

    z = np.empty(N)
    z_new = np.empty(N)
    logw = np.empty(N)
    w = np.empty(N)
    anc = np.empty(N, np.int64)
    unif = np.empty(N)

    step_ll = np.full(T, -np.inf)
    fmean = np.full(T, np.nan)
    fsd = np.full(T, np.nan)
    ess = np.full(T, np.nan)

    sd_stat = sigma / math.sqrt(1.0 - phi * phi)
    for k in range(N):
        z[k] = mu + sd_stat * up[0, k]

    loglik = 0.0
    degenerate = False
    for t in range(T):
        if t > 0:
            for k in range(N):
                unif[k] = norm_cdf(ur[t - 1, k])
            resample_ancestors(z, w, unif, use_sort, anc)
            for k in range(N):
                zp = z[anc[k]]
                z_new[k] = mu + phi * (zp - mu) + sigma * up[t, k]
            for k in range(N):
                z[k] = z_new[k]
        yt = y[t]
        if use_boxcox:
            for k in range(N):
                wv = 1.0 + delta * z[k]
                if wv > 0.0:
                    logv = math.log(wv) / delta
                    logw[k] = -0.5 * LOG_2PI - 0.5 * logv - 0.5 * yt * yt * math.exp(-logv)
                else:
                    logw[k] = -np.inf
        else:
            for k in range(N):
                logw[k] = -0.5 * LOG_2PI - 0.5 * z[k] - 0.5 * yt * yt * math.exp(-z[k])
        sll, e, ok = _normalize(logw, w)
        if not ok:
            degenerate = True
            loglik = -np.inf
            break
        step_ll[t] = sll
        ess[t] = e
        m, s = _weighted_mean_sd(z, w)
        fmean[t] = m
        fsd[t] = s
        loglik += sll
        if want_hist:
            for k in range(N):
                z_hist[t, k] = z[k]
                w_hist[t, k] = w[k]
    return loglik, step_ll, fmean, fsd, ess, degenerate


@njit(cache=True, nogil=True)
def pf_lstm(
    beta0,
    beta1,
    phi,
    sigma2,
    v_f,
    w_f,
    b_f,
    v_i,
    w_i,
    b_i,
    v_d,
    w_d,
    b_d,
    v_o,
    w_o,
    b_o,
    y,
    up,
    ur,
    use_sort,
    want_hist,
    z_hist,
    w_hist,
    h_hist,
    c_hist,
    eta_hist,
):
    """Bootstrap filter for LSTM-SV.

    Particles carry (z, h, c, eta); the cell starts empty and time 1 uses
    z_1 = eta_1 = beta0 + sigma * up[0]. Resampling maps the whole
    particle state through the ancestor index.
    """
    T = y.shape[0]
    N = up.shape[1]
    sigma = math.sqrt(sigma2)

    z = np.empty(N)
    h = np.empty(N)
    c = np.empty(N)
    eta = np.empty(N)
    z_new = np.empty(N)
    h_new = np.empty(N)
    c_new = np.empty(N)
    eta_new = np.empty(N)
    logw = np.empty(N)
    w = np.empty(N)
    anc = np.empty(N, np.int64)
    unif = np.empty(N)

    step_ll = np.full(T, -np.inf)
    fmean = np.full(T, np.nan)
    fsd = np.full(T, np.nan)
    ess = np.full(T, np.nan)

    for k in range(N):
        h[k] = 0.0
        c[k] = 0.0
        eta[k] = beta0 + sigma * up[0, k]
        z[k] = eta[k]

    loglik = 0.0
    degenerate = False
    for t in range(T):
        if t > 0:
            for k in range(N):
                unif[k] = norm_cdf(ur[t - 1, k])
            resample_ancestors(z, w, unif, use_sort, anc)
            for k in range(N):
                a = anc[k]
                ep = eta[a]
                hp = h[a]
                g_f = _sigmoid(v_f * ep + w_f * hp + b_f)
                g_i = _sigmoid(v_i * ep + w_i * hp + b_i)
                x_d = _sigmoid(v_d * ep + w_d * hp + b_d)
                g_o = _sigmoid(v_o * ep + w_o * hp + b_o)
                cn = g_f * c[a] + g_i * x_d
                hn = g_o * math.tanh(cn)
                en = beta0 + beta1 * hn + sigma * up[t, k]
                z_new[k] = en + phi * z[a]
                h_new[k] = hn
                c_new[k] = cn
                eta_new[k] = en
            for k in range(N):
                z[k] = z_new[k]
                h[k] = h_new[k]
                c[k] = c_new[k]
                eta[k] = eta_new[k]
        yt = y[t]
        for k in range(N):
            logw[k] = -0.5 * LOG_2PI - 0.5 * z[k] - 0.5 * yt * yt * math.exp(-z[k])
        sll, e, ok = _normalize(logw, w)
        if not ok:
            degenerate = True
            loglik = -np.inf
            break
        step_ll[t] = sll
        ess[t] = e
        m, s = _weighted_mean_sd(z, w)
        fmean[t] = m
        fsd[t] = s
        loglik += sll
        if want_hist:
            for k in range(N):
                z_hist[t, k] = z[k]
                w_hist[t, k] = w[k]
                h_hist[t, k] = h[k]
                c_hist[t, k] = c[k]
                eta_hist[t, k] = eta[k]
    return loglik, step_ll, fmean, fsd, ess, degenerate


@njit(cache=True, nogil=True)
def mixture_cdf(x, sds, w):
    """CDF of a zero-mean Gaussian scale mixture at x."""
    total = 0.0
    for j in range(sds.shape[0]):
        total += w[j] * norm_cdf(x / sds[j])
    return total


@njit(cache=True, nogil=True)
def mixture_quantile(sds, w, p, tol):
    """p-quantile of a zero-mean Gaussian scale mixture by CDF bisection."""
    smax = 0.0
    for j in range(sds.shape[0]):
        if sds[j] > smax:
            smax = sds[j]
    hi = 10.0 * smax
    lo = -hi
    while mixture_cdf(lo, sds, w) > p:
        lo *= 2.0
    while mixture_cdf(hi, sds, w) < p:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mixture_cdf(mid, sds, w) >= p:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
