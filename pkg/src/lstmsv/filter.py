"""Bootstrap particle filter on a fixed field of standard-normal draws.

The filter is a deterministic function of (parameters, data, random
field): all randomness lives in the field, whose draws are partitioned
into contiguous-in-time blocks so the block pseudo-marginal sampler can
refresh one block at a time. Resampling is multinomial with the particles
sorted ascending, which keeps nearby uniforms selecting nearby particles
and makes likelihood estimates move smoothly under small field changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .models import LstmSvParams, NsvParams, SvParams
from .seeding import as_generator

__all__ = [
    "RandomField",
    "FilterHistory",
    "FilterResult",
    "particle_filter",
    "sorted_multinomial_resample",
    "filtered_volatility",
]


@dataclass
class RandomField:
    """Standard-normal draws for one filter pass, in contiguous time blocks.

    ``proposal`` has shape (T, N): row t-1 drives the particle proposals
    at time t. ``resample`` has shape (T-1, N): row t-1 feeds the
    resampling between times t and t+1 (transformed to uniforms through
    the normal CDF). Time step t (1-based) belongs to block
    ceil(t * n_blocks / T); a block groups the proposal row and the
    resampling row of each of its steps, so block sizes differ by at most
    one per-step column group.
    """

    proposal: np.ndarray
    resample: np.ndarray
    n_blocks: int = 1

    def __post_init__(self):
        self.proposal = np.ascontiguousarray(self.proposal, dtype=float)
        self.resample = np.ascontiguousarray(self.resample, dtype=float)
        if self.proposal.ndim != 2:
            raise ValueError("proposal draws must be a (T, N) matrix")
        T, N = self.proposal.shape
        if self.resample.shape != (max(T - 1, 0), N):
            raise ValueError(
                f"resample draws must have shape ({T - 1}, {N}), got {self.resample.shape}"
            )
        if not 1 <= int(self.n_blocks):
            raise ValueError("n_blocks must be at least 1")
        self.n_blocks = int(self.n_blocks)

    @property
    def T(self):
        return self.proposal.shape[0]

    @property
    def N(self):
        return self.proposal.shape[1]

    @classmethod
    def sample(cls, rng, T, N, n_blocks=1):
        """Fresh field of i.i.d. standard normals (proposal rows first)."""
        rng = as_generator(rng)
        T = int(T)
        N = int(N)
        if T < 1 or N < 1:
            raise ValueError("T and N must be at least 1")
        proposal = rng.standard_normal((T, N))
        resample = rng.standard_normal((T - 1, N))
        return cls(proposal, resample, n_blocks)

    def block_of_step(self, t):
        """0-based block index of 1-based time step t."""
        if not 1 <= t <= self.T:
            raise ValueError(f"time step must be in [1, {self.T}]")
        return (t * self.n_blocks + self.T - 1) // self.T - 1

    def block_steps(self, k):
        """(first, last) 1-based time steps of block k; (1, 0)-style empty
        range when the block holds no steps (only possible for n_blocks > T)."""
        if not 0 <= k < self.n_blocks:
            raise ValueError(f"block index must be in [0, {self.n_blocks})")
        lo = (k * self.T) // self.n_blocks + 1
        hi = ((k + 1) * self.T) // self.n_blocks
        return lo, hi

    def _block_slices(self, k):
        lo, hi = self.block_steps(k)
        prop = slice(lo - 1, hi)
        resamp = slice(lo - 1, min(hi, self.T - 1))
        return prop, resamp

    def refresh_block(self, k, rng):
        """Redraw block k in place; returns the overwritten rows for restore."""
        rng = as_generator(rng)
        prop, resamp = self._block_slices(k)
        saved = (self.proposal[prop].copy(), self.resample[resamp].copy())
        self.proposal[prop] = rng.standard_normal(self.proposal[prop].shape)
        self.resample[resamp] = rng.standard_normal(self.resample[resamp].shape)
        return saved

    def restore_block(self, k, saved):
        """Undo a refresh_block using its saved rows."""
        prop, resamp = self._block_slices(k)
        self.proposal[prop] = saved[0]
        self.resample[resamp] = saved[1]

    def with_block_refreshed(self, k, rng):
        """Copy of the field with block k redrawn (the pure variant)."""
        out = self.copy()
        out.refresh_block(k, rng)
        return out

    def copy(self):
        return RandomField(self.proposal.copy(), self.resample.copy(), self.n_blocks)


@dataclass
class FilterHistory:
    """Per-time particle clouds: z values and normalized weights, plus the
    LSTM cell trajectories for the LSTM-SV family (None otherwise)."""

    z: np.ndarray
    weights: np.ndarray
    h: np.ndarray | None = None
    c: np.ndarray | None = None
    eta: np.ndarray | None = None


@dataclass
class FilterResult:
    """Likelihood estimate and filtered moments from one pass.

    ``loglik`` is the log of the unbiased likelihood estimate (the product
    of per-step weight means); ``step_loglik[t]`` holds the per-step
    increment log p(y_t | y_{1:t-1}). ``degenerate`` flags a step where
    every particle weight vanished, in which case loglik is -inf.
    """

    loglik: float
    step_loglik: np.ndarray
    filtered_mean: np.ndarray
    filtered_sd: np.ndarray
    ess: np.ndarray
    degenerate: bool
    history: FilterHistory | None = None


_DUMMY = np.zeros((1, 1))


def particle_filter(params, y, field, sorted_resampling=True, return_history=False):
    """Run the bootstrap filter for one model at one random field.

    The proposal is the model transition, so weights reduce to the
    measurement density. Identical inputs give bit-identical output; a
    step where every weight vanishes (possible for N-SV support
    violations) yields loglik = -inf with ``degenerate`` set instead of
    raising.
    """
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1 or y.size < 1:
        raise ValueError("y must be a nonempty vector")
    if field.T != y.size:
        raise ValueError(f"random field covers T={field.T} steps but y has {y.size}")
    T, N = field.T, field.N
    want = bool(return_history)
    z_hist = np.empty((T, N)) if want else _DUMMY
    w_hist = np.empty((T, N)) if want else _DUMMY

    if isinstance(params, (SvParams, NsvParams)):
        delta = params.delta if isinstance(params, NsvParams) else 0.0
        use_boxcox = abs(delta) >= 1e-8
        loglik, step_ll, fmean, fsd, ess, degen = _kernels.pf_ar1(
            params.mu,
            params.phi,
            params.sigma2,
            delta,
            use_boxcox,
            y,
            field.proposal,
            field.resample,
            bool(sorted_resampling),
            want,
            z_hist,
            w_hist,
        )
        hist = FilterHistory(z_hist, w_hist) if want else None
    elif isinstance(params, LstmSvParams):
        h_hist = np.empty((T, N)) if want else _DUMMY
        c_hist = np.empty((T, N)) if want else _DUMMY
        eta_hist = np.empty((T, N)) if want else _DUMMY
        loglik, step_ll, fmean, fsd, ess, degen = _kernels.pf_lstm(
            params.beta0,
            params.beta1,
            params.phi,
            params.sigma2,
            *params.lstm.as_tuple(),
            y,
            field.proposal,
            field.resample,
            bool(sorted_resampling),
            want,
            z_hist,
            w_hist,
            h_hist,
            c_hist,
            eta_hist,
        )
        hist = FilterHistory(z_hist, w_hist, h_hist, c_hist, eta_hist) if want else None
    else:
        raise TypeError(f"unsupported parameter record {type(params).__name__}")

    return FilterResult(
        loglik=float(loglik),
        step_loglik=step_ll,
        filtered_mean=fmean,
        filtered_sd=fsd,
        ess=ess,
        degenerate=bool(degen),
        history=hist,
    )


def sorted_multinomial_resample(z, weights, uniforms):
    """Ancestor indices of sorted multinomial resampling.

    Particles are sorted ascending in z (stable); ancestor k is the
    original index of the first particle whose cumulative sorted weight
    reaches uniforms[k].
    """
    z = np.ascontiguousarray(z, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    u = np.ascontiguousarray(uniforms, dtype=float)
    if z.shape != w.shape or z.ndim != 1:
        raise ValueError("z and weights must be equal-length vectors")
    if u.ndim != 1 or u.size < 1:
        raise ValueError("uniforms must form a nonempty vector (one per ancestor)")
    if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1 within 1e-9")
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("uniforms must lie strictly inside (0, 1)")
    out = np.empty(u.size, dtype=np.int64)
    _kernels.resample_ancestors(z, w, u, True, out)
    return out


def filtered_volatility(params, y, field, sorted_resampling=True):
    """Per-time weighted mean and sd of the log-variance particles."""
    res = particle_filter(params, y, field, sorted_resampling=sorted_resampling)
    return res.filtered_mean, res.filtered_sd
