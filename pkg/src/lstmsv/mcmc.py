"""Block pseudo-marginal sampler with an adaptive random-walk proposal.

Each iteration proposes a joint move: a random-walk step in the
unconstrained parameter space together with a refresh of one uniformly
chosen block of the filter's random field. The pair is accepted or
rejected together and the current likelihood estimate is reused (never
recomputed) on rejection, so the chain targets the exact posterior. The
proposal scale follows a Robbins-Monro recursion toward the target
acceptance rate, the proposal covariance is refreshed from the chain
history during burn-in, and both are frozen when burn-in ends so the
retained draws form a time-homogeneous Markov chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .filter import RandomField, particle_filter
from .seeding import substream

__all__ = [
    "SamplerConfig",
    "ChainDraws",
    "ChainSummary",
    "ChainNumericError",
    "run_bpm",
    "propose",
    "adapt_scale",
    "iact",
    "summarize",
]

# covariance refresh cadence during burn-in
_COV_REFRESH = 500
# constant-step search phase of the scale recursion, then a 1/iter decay
_ADAPT_SEARCH_ITERS = 100
_ADAPT_STEP = 0.3


class ChainNumericError(RuntimeError):
    """Numeric failure mid-chain; carries the partial chain in ``partial``."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class SamplerConfig:
    iters: int = 100_000
    burnin: int = 10_000
    thin: int = 5
    n_particles: int = 200
    n_blocks: int = 200
    target_accept: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be positive")
        if not 0 <= self.burnin < self.iters:
            raise ValueError("burnin must satisfy 0 <= burnin < iters")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_particles < 1 or self.n_blocks < 1:
            raise ValueError("n_particles and n_blocks must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def n_retained(self):
        return (self.iters - self.burnin + self.thin - 1) // self.thin


@dataclass
class ChainDraws:
    """Full-resolution sampler output plus the final pseudo-marginal state.

    ``draws_u`` holds the unconstrained chain state after every iteration;
    constrained views are derived through the model family. ``final_field``
    and ``final_loglik`` allow replaying the filter at the final state to
    verify that rejected moves restored the random field.
    """

    model: object
    config: SamplerConfig
    draws_u: np.ndarray
    logliks: np.ndarray
    accepted: np.ndarray
    scale_trace: np.ndarray
    final_field: RandomField | None = None
    final_loglik: float = math.nan

    def __len__(self):
        return self.draws_u.shape[0]

    def constrained(self):
        return self.model.constrain_array(self.draws_u)

    def retained_u(self):
        cfg = self.config
        return self.draws_u[cfg.burnin :: cfg.thin]

    def retained(self):
        return self.model.constrain_array(self.retained_u())

    def retained_logliks(self):
        cfg = self.config
        return self.logliks[cfg.burnin :: cfg.thin]

    def retained_accepted(self):
        cfg = self.config
        return self.accepted[cfg.burnin :: cfg.thin]

    def accept_rate(self):
        return float(self.accepted.mean())


@dataclass(frozen=True)
class ChainSummary:
    names: tuple
    means: np.ndarray
    sds: np.ndarray
    iacts: np.ndarray
    accept_rate: float
    n_retained: int


def propose(theta_u, scale, cov, eps):
    """Random-walk proposal theta + scale * L eps with L the Cholesky root of cov.

    Raises on a covariance without a Cholesky factorization.
    """
    theta_u = np.asarray(theta_u, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("proposal covariance must be symmetric positive definite") from exc
    return theta_u + scale * (chol @ np.asarray(eps, dtype=float))


def adapt_scale(scale, accepted, iteration, target=0.25):
    """One Robbins-Monro update of the proposal scale on the log scale.

    A constant-step search covers the first iterations; afterwards the
    step decays like 1/iteration, so log-scale moves down when a move was
    rejected and up when accepted, settling where the acceptance rate
    matches the target. The sampler freezes the scale once burn-in ends.
    """
    if iteration < 1:
        raise ValueError("iteration count starts at 1")
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    step = _ADAPT_STEP * min(1.0, _ADAPT_SEARCH_ITERS / iteration)
    return float(scale * math.exp(step * (float(accepted) - target)))


def _regularized_cov(rows, fallback):
    if rows.shape[0] < 10:
        return fallback
    cov = np.atleast_2d(np.cov(rows, rowvar=False))
    diag_mean = float(np.trace(cov)) / cov.shape[0]
    if not (math.isfinite(diag_mean) and diag_mean > 0.0):
        return fallback
    ridge = 1e-6 * diag_mean
    for _ in range(12):
        try:
            np.linalg.cholesky(cov + ridge * np.eye(cov.shape[0]))
            return cov + ridge * np.eye(cov.shape[0])
        except np.linalg.LinAlgError:
            ridge *= 10.0
    return fallback


def run_bpm(model, y, config, loglik_fn=None, init_u=None):
    """Run one block pseudo-marginal chain; returns full-resolution draws.

    The chain starts from a prior draw (redrawn until the likelihood
    estimate is finite) and a fresh random field. ``loglik_fn(u) -> float``
    replaces the particle filter when given (exact-likelihood mode used in
    testing); the field machinery is skipped in that case.

    Proposals landing outside the prior support auto-reject without
    running the filter; a -inf likelihood estimate also auto-rejects.
    Numeric failures raise ChainNumericError carrying the partial chain.
    """
    cfg = config
    rng = substream(cfg.seed, "chain")
    d = model.dim
    use_filter = loglik_fn is None

    if use_filter:
        y = np.ascontiguousarray(y, dtype=float)
        if y.ndim != 1 or y.size < 1:
            raise ValueError("y must be a nonempty vector")
        field = RandomField.sample(rng, y.size, cfg.n_particles, cfg.n_blocks)

        def _loglik(u_vec):
            return particle_filter(model.params(model.constrain(u_vec)), y, field).loglik

    else:
        field = None
        _loglik = loglik_fn

    # initialize at a prior draw with a finite likelihood estimate
    if init_u is not None:
        u = np.asarray(init_u, dtype=float).copy()
        lp = model.log_prior_u(u)
        ll = _loglik(u)
        if not (math.isfinite(lp) and math.isfinite(ll)):
            raise ValueError("explicit initial point has non-finite posterior estimate")
    else:
        for attempt in range(200):
            u = model.unconstrain(model.sample_prior(rng))
            lp = model.log_prior_u(u)
            if not math.isfinite(lp):
                continue
            ll = _loglik(u)
            if math.isfinite(ll):
                break
        else:
            raise ChainNumericError("no prior draw produced a finite likelihood estimate")

    scale = 2.38 / math.sqrt(d)
    cov = np.eye(d)
    chol = np.linalg.cholesky(cov)

    draws = np.empty((cfg.iters, d))
    logliks = np.empty(cfg.iters)
    accepted = np.zeros(cfg.iters, dtype=bool)
    scale_trace = np.empty(cfg.iters)

    def _partial(i):
        return ChainDraws(
            model=model,
            config=cfg,
            draws_u=draws[:i].copy(),
            logliks=logliks[:i].copy(),
            accepted=accepted[:i].copy(),
            scale_trace=scale_trace[:i].copy(),
            final_field=field,
            final_loglik=ll,
        )

    for i in range(cfg.iters):
        try:
            eps = rng.standard_normal(d)
            u_prop = u + scale * (chol @ eps)
            lp_prop = model.log_prior_u(u_prop)

            saved = None
            block = -1
            if use_filter:
                block = int(rng.integers(cfg.n_blocks))
                saved = field.refresh_block(block, rng)

            flag = False
            if math.isfinite(lp_prop):
                ll_prop = _loglik(u_prop)
                if math.isfinite(ll_prop):
                    log_ratio = (ll_prop + lp_prop) - (ll + lp)
                    if math.log(rng.random()) < log_ratio:
                        u, lp, ll = u_prop, lp_prop, ll_prop
                        flag = True
            if use_filter and not flag:
                field.restore_block(block, saved)

            draws[i] = u
            logliks[i] = ll
            accepted[i] = flag

            if i < cfg.burnin:
                scale = adapt_scale(scale, flag, i + 1, cfg.target_accept)
                if (i + 1) % _COV_REFRESH == 0:
                    cov = _regularized_cov(draws[(i + 1) // 2 : i + 1], cov)
                    chol = np.linalg.cholesky(cov)

            scale_trace[i] = scale
        except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
            raise ChainNumericError(f"numeric failure at iteration {i}: {exc}", _partial(i)) from exc

    return ChainDraws(
        model=model,
        config=cfg,
        draws_u=draws,
        logliks=logliks,
        accepted=accepted,
        scale_trace=scale_trace,
        final_field=field,
        final_loglik=float(ll),
    )


def _autocorr(x):
    """Autocorrelation function by FFT (biased 1/n autocovariances)."""
    n = x.size
    d = x - x.mean()
    m = 1
    while m < 2 * n:
        m <<= 1
    f = np.fft.rfft(d, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    if acov[0] <= 0.0:
        raise ValueError("zero variance")
    return acov / acov[0]


def iact(series):
    """Integrated autocorrelation time 1 + 2 sum of autocorrelations.

    The sum is truncated by the initial-positive-sequence rule on pairwise
    sums of autocorrelations: pairs Gamma_m = rho_{2m} + rho_{2m+1} are
    accumulated while positive. White noise gives 1; an AR(1) chain with
    parameter rho gives (1 + rho) / (1 - rho).
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("need a vector of at least 100 points")
    if np.ptp(x) == 0.0:
        raise ValueError("constant series has no autocorrelation time")
    rho = _autocorr(x)
    total = 0.0
    m = 0
    while 2 * m + 1 < rho.size:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        total += pair
        m += 1
    return float(2.0 * total - 1.0)


def summarize(chain, config=None):
    """Posterior means, sds and IACTs of the retained constrained draws.

    Burn-in is discarded and the rest thinned per the config; IACT is
    computed on the retained series (NaN when it is too short or
    constant). The acceptance rate covers the full chain.
    """
    cfg = config if config is not None else chain.config
    retained_u = chain.draws_u[cfg.burnin :: cfg.thin]
    if retained_u.shape[0] == 0:
        raise ValueError("no draws retained; check burnin/thin against the chain length")
    vals = chain.model.constrain_array(retained_u)
    names = tuple(chain.model.param_names)
    means = vals.mean(axis=0)
    sds = vals.std(axis=0, ddof=1) if vals.shape[0] > 1 else np.zeros(vals.shape[1])
    iacts = np.full(vals.shape[1], np.nan)
    for j in range(vals.shape[1]):
        col = vals[:, j]
        if col.size >= 100 and np.ptp(col) > 0.0:
            iacts[j] = iact(col)
    return ChainSummary(
        names=names,
        means=means,
        sds=sds,
        iacts=iacts,
        accept_rate=float(chain.accepted.mean()) if len(chain) else math.nan,
        n_retained=int(vals.shape[0]),
    )
