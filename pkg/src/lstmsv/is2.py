"""Marginal likelihood by importance sampling squared.

A Gaussian-mixture proposal is fitted to posterior draws in the
unconstrained space; each importance weight combines the prior, the
proposal density and an independent particle-filter likelihood estimate.
Weights are aggregated in log space, and the Monte Carlo standard error
is taken across repeated independent runs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .filter import RandomField, particle_filter
from .seeding import substream

__all__ = [
    "MixtureProposal",
    "MarglikEstimate",
    "fit_proposal",
    "is2_marglik",
    "ConjugateNormalToy",
]

LOG_2PI = math.log(2.0 * math.pi)


def _safe_cholesky(cov):
    """Cholesky factor, adding 1e-6 (escalating) to the diagonal if singular."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    ridge = 0.0
    for attempt in range(8):
        try:
            return np.linalg.cholesky(cov + ridge * np.eye(cov.shape[0])), cov + ridge * np.eye(cov.shape[0])
        except np.linalg.LinAlgError:
            ridge = 1e-6 * (10.0**attempt)
    raise np.linalg.LinAlgError("covariance cannot be regularized to positive definite")


@dataclass
class MixtureProposal:
    """Gaussian mixture over the unconstrained parameter space."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    converged: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        self.covs = covs
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covs.shape != (k, d, d):
            raise ValueError("component shapes are inconsistent")
        if np.any(self.weights <= 0.0) or abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be positive and sum to 1")
        chols = []
        fixed = []
        for j in range(k):
            chol, cov = _safe_cholesky(self.covs[j])
            chols.append(chol)
            fixed.append(cov)
        self.covs = np.stack(fixed)
        self._chols = chols
        self._logdets = np.array([2.0 * np.log(np.diag(c)).sum() for c in chols])
        self._cumw = np.cumsum(self.weights)

    @property
    def n_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def component_logpdfs(self, x):
        """(n, k) matrix of log w_j + log N(x_i; mean_j, cov_j)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        out = np.empty((n, self.n_components))
        for j in range(self.n_components):
            sol = solve_triangular(self._chols[j], (x - self.means[j]).T, lower=True)
            quad = (sol * sol).sum(axis=0)
            out[:, j] = (
                math.log(self.weights[j])
                - 0.5 * (d * LOG_2PI + self._logdets[j] + quad)
            )
        return out

    def logpdf(self, x):
        """Mixture log density at one point or at each row of a matrix."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        vals = logsumexp(self.component_logpdfs(x), axis=1)
        return float(vals[0]) if single else vals

    def sample_one(self, rng):
        j = int(np.searchsorted(self._cumw, rng.random()))
        j = min(j, self.n_components - 1)
        return self.means[j] + self._chols[j] @ rng.standard_normal(self.dim)

    def sample(self, rng, size):
        return np.stack([self.sample_one(rng) for _ in range(size)])


def fit_proposal(draws, n_components=2, seed=0, max_iter=500, tol=1e-9, inflation=1.2):
    """Fit a Gaussian mixture to posterior draws by EM.

    ``draws`` is a (n, d) matrix of unconstrained draws (or a chain object
    exposing ``retained_u()``); at least 500 draws are required. All
    fitted covariances are inflated (1.2 on the sd scale by default) to
    fatten the proposal tails; a component going singular gets 1e-6 added
    to its diagonal. If EM has not converged after ``max_iter`` sweeps the
    best fit so far is returned with ``converged=False``.
    """
    getter = getattr(draws, "retained_u", None)
    x = np.asarray(getter() if callable(getter) else draws, dtype=float)
    if x.ndim != 2:
        raise ValueError("draws must form a (n, d) matrix")
    n, d = x.shape
    if n < 500:
        raise ValueError(f"need at least 500 retained draws to fit the proposal, got {n}")
    k = int(n_components)
    if k < 1:
        raise ValueError("need at least one component")

    rng = substream(seed, "proposal-fit")
    base_cov = np.atleast_2d(np.cov(x, rowvar=False))
    base_cov += 1e-10 * max(float(np.trace(base_cov)) / d, 1e-12) * np.eye(d)
    means = x[rng.choice(n, size=k, replace=False)].copy()
    covs = np.stack([base_cov.copy() for _ in range(k)])
    weights = np.full(k, 1.0 / k)

    prev_objective = -math.inf
    converged = k == 1 and max_iter >= 1
    for sweep in range(max_iter):
        prop = MixtureProposal(weights, means, covs)
        comp = prop.component_logpdfs(x)
        norm = logsumexp(comp, axis=1)
        objective = float(norm.sum())
        resp = np.exp(comp - norm[:, None])

        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = np.maximum(nk / n, 1e-12)
        weights = weights / weights.sum()
        for j in range(k):
            means[j] = resp[:, j] @ x / nk[j]
            centered = x - means[j]
            covs[j] = (resp[:, j][:, None] * centered).T @ centered / nk[j]
            _, covs[j] = _safe_cholesky(covs[j])
        if sweep > 0 and abs(objective - prev_objective) <= tol * (1.0 + abs(objective)):
            converged = True
            break
        prev_objective = objective

    covs = covs * (inflation**2)
    return MixtureProposal(weights, means, covs, converged=converged)


@dataclass(frozen=True)
class MarglikEstimate:
    """Across-run mean of per-run log estimates with its standard error."""

    log_marglik: float
    mc_se: float
    M: int
    n_particles: int
    runs: int
    run_logs: np.ndarray


def is2_marglik(
    model,
    y,
    proposal,
    M=5000,
    n_particles=2000,
    runs=10,
    seed=0,
    loglik_fn=None,
    n_threads=1,
):
    """Estimate the log marginal likelihood by importance sampling squared.

    Each run draws M parameters i.i.d. from the proposal; every draw gets
    an independent likelihood estimate from a fresh-field particle-filter
    pass with ``n_particles`` particles (or from ``loglik_fn(u)`` when an
    exact likelihood is available). Per-run estimates are
    log-mean-exp of the log weights
    ``log p(theta) + log p_hat(y|theta) - log g(theta)``; the report is
    their mean with the across-run standard error (NaN for a single run).

    Every (run, sample) pair owns a derived substream, so the result does
    not depend on the worker count. A run in which every weight vanishes
    raises: the proposal is mis-specified for the posterior.
    """
    if M < 1:
        raise ValueError("M must be positive")
    if runs < 1:
        raise ValueError("runs must be positive")
    if y is not None:
        y = np.ascontiguousarray(y, dtype=float)

    def _one_logweight(run_idx, i):
        rng = substream(seed, "is2", run_idx, i)
        u = proposal.sample_one(rng)
        lp = model.log_prior_u(u)
        if not math.isfinite(lp):
            return -math.inf
        lg = proposal.logpdf(u)
        if loglik_fn is not None:
            ll = loglik_fn(u)
        else:
            field = RandomField.sample(rng, y.size, n_particles, 1)
            ll = particle_filter(model.params(model.constrain(u)), y, field).loglik
        if not math.isfinite(ll):
            return -math.inf
        return lp + ll - lg

    pairs = [(r, i) for r in range(runs) for i in range(M)]
    if n_threads and n_threads > 1:
        chunk = max(1, len(pairs) // (8 * n_threads))
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            vals = list(pool.map(lambda ri: _one_logweight(*ri), pairs, chunksize=chunk))
    else:
        vals = [_one_logweight(*ri) for ri in pairs]
    logw = np.array(vals).reshape(runs, M)

    run_logs = np.empty(runs)
    for r in range(runs):
        if not np.any(np.isfinite(logw[r])):
            raise RuntimeError(
                "every importance weight vanished in run "
                f"{r}: the proposal appears mis-specified for the posterior"
            )
        run_logs[r] = logsumexp(logw[r]) - math.log(M)

    log_marglik = float(run_logs.mean())
    mc_se = float(run_logs.std(ddof=1) / math.sqrt(runs)) if runs > 1 else math.nan
    return MarglikEstimate(
        log_marglik=log_marglik,
        mc_se=mc_se,
        M=int(M),
        n_particles=int(n_particles),
        runs=int(runs),
        run_logs=run_logs,
    )


class ConjugateNormalToy:
    """Conjugate check model: y_i | theta ~ N(theta, 1) i.i.d., theta ~ N(0, 1).

    Evidence and posterior are available in closed form, so the IS^2
    machinery can be validated end to end with the exact likelihood in
    place of the particle filter.
    """

    tag = "toy"
    param_names = ("theta",)

    def __init__(self, y):
        self.y = np.ascontiguousarray(y, dtype=float)
        if self.y.ndim != 1 or self.y.size < 1:
            raise ValueError("y must be a nonempty vector")
        self._n = self.y.size
        self._sum = float(self.y.sum())
        self._sumsq = float(self.y @ self.y)

    @property
    def dim(self):
        return 1

    def constrain(self, u):
        return np.asarray(u, dtype=float)

    def unconstrain(self, v):
        return np.asarray(v, dtype=float)

    def constrain_array(self, umat):
        return np.asarray(umat, dtype=float)

    def params(self, vector):
        return float(np.asarray(vector, dtype=float)[0])

    def log_prior_u(self, u):
        theta = float(np.asarray(u, dtype=float)[0])
        return -0.5 * LOG_2PI - 0.5 * theta * theta

    def loglik(self, u):
        theta = float(np.asarray(u, dtype=float)[0])
        return (
            -0.5 * self._n * LOG_2PI
            - 0.5 * (self._sumsq - 2.0 * theta * self._sum + self._n * theta * theta)
        )

    def log_evidence(self):
        n = self._n
        return (
            -0.5 * n * LOG_2PI
            - 0.5 * math.log(n + 1.0)
            - 0.5 * self._sumsq
            + 0.5 * self._sum**2 / (n + 1.0)
        )

    def posterior_mean_var(self):
        n = self._n
        return self._sum / (n + 1.0), 1.0 / (n + 1.0)

    def posterior_proposal(self):
        """Single-Gaussian proposal equal to the exact posterior."""
        mean, var = self.posterior_mean_var()
        return MixtureProposal(
            weights=np.array([1.0]),
            means=np.array([[mean]]),
            covs=np.array([[[var]]]),
        )

    def sample_posterior(self, rng, size):
        mean, var = self.posterior_mean_var()
        return mean + math.sqrt(var) * rng.standard_normal((size, 1))
