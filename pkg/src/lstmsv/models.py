"""Stochastic volatility model families: SV, N-SV and LSTM-SV.

Each family bundles a parameter record, the priors, the latent transition
and measurement densities, an exact forward simulator, and the mapping
between the natural (constrained) parameter space and the unconstrained
space the samplers operate on.

The LSTM-SV family drives the mean of the volatility innovation with an
LSTM recurrence over past innovations. All four gates, including the data
input, use the logistic activation (not the tanh that is common for the
data input elsewhere); the cell output stays in (-1, 1), which keeps the
latent log-variance from exploding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as _dc_fields

import numpy as np
from scipy.special import betaln, gammaln

from .seeding import as_generator

__all__ = [
    "SvParams",
    "NsvParams",
    "LstmWeights",
    "LstmSvParams",
    "LstmState",
    "WEIGHT_NAMES",
    "sigmoid",
    "lstm_cell",
    "transition",
    "measurement_logdensity",
    "log_prior",
    "NormalPrior",
    "InverseGammaPrior",
    "BetaPersistencePrior",
    "PriorSet",
    "default_priors",
    "ModelFamily",
    "SvModel",
    "NsvModel",
    "LstmSvModel",
    "SV",
    "NSV",
    "LSTMSV",
    "MODEL_TAGS",
    "get_model",
    "simulate",
    "simulate_dgp",
    "dgp_drift",
]

LOG_2PI = math.log(2.0 * math.pi)

# Serialization order of the LSTM gate coefficients: per gate
# (input weight v, recurrent weight w, bias b), gates in f, i, d, o order.
WEIGHT_NAMES = (
    "v_f", "w_f", "b_f",
    "v_i", "w_i", "b_i",
    "v_d", "w_d", "b_d",
    "v_o", "w_o", "b_o",
)


def _check_phi_sigma2(phi, sigma2):
    if not (math.isfinite(phi) and abs(phi) < 1.0):
        raise ValueError(f"phi must satisfy |phi| < 1, got {phi}")
    # sigma2 == 0 is tolerated for noise-free simulation; the priors exclude it.
    if not (math.isfinite(sigma2) and sigma2 >= 0.0):
        raise ValueError(f"sigma2 must be nonnegative, got {sigma2}")


@dataclass(frozen=True)
class SvParams:
    """Basic SV: z_t = mu + phi (z_{t-1} - mu) + N(0, sigma2), y_t ~ N(0, e^z)."""

    mu: float
    phi: float
    sigma2: float

    def __post_init__(self):
        _check_phi_sigma2(self.phi, self.sigma2)


@dataclass(frozen=True)
class NsvParams:
    """SV with a Box-Cox observation variance (1 + delta z)^(1/delta)."""

    mu: float
    phi: float
    sigma2: float
    delta: float

    def __post_init__(self):
        _check_phi_sigma2(self.phi, self.sigma2)
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")


@dataclass(frozen=True)
class LstmWeights:
    """Gate coefficients: per gate an input weight v, recurrent weight w, bias b."""

    v_f: float = 0.0
    w_f: float = 0.0
    b_f: float = 0.0
    v_i: float = 0.0
    w_i: float = 0.0
    b_i: float = 0.0
    v_d: float = 0.0
    w_d: float = 0.0
    b_d: float = 0.0
    v_o: float = 0.0
    w_o: float = 0.0
    b_o: float = 0.0

    def __post_init__(self):
        for f in _dc_fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"LSTM weight {f.name} must be finite")

    def as_tuple(self):
        return tuple(getattr(self, name) for name in WEIGHT_NAMES)

    @classmethod
    def from_sequence(cls, values):
        values = tuple(float(v) for v in values)
        if len(values) != len(WEIGHT_NAMES):
            raise ValueError(f"expected {len(WEIGHT_NAMES)} weights, got {len(values)}")
        return cls(**dict(zip(WEIGHT_NAMES, values)))


@dataclass(frozen=True)
class LstmSvParams:
    """LSTM-SV: z_t = eta_t + phi z_{t-1}, eta_t = beta0 + beta1 h_t + N(0, sigma2)."""

    beta0: float
    beta1: float
    phi: float
    sigma2: float
    lstm: LstmWeights

    def __post_init__(self):
        _check_phi_sigma2(self.phi, self.sigma2)
        # beta1 == 0 is the exact SV reduction; the prior excludes it.
        if not (math.isfinite(self.beta1) and self.beta1 >= 0.0):
            raise ValueError(f"beta1 must be nonnegative, got {self.beta1}")
        if not math.isfinite(self.beta0):
            raise ValueError("beta0 must be finite")

    @property
    def scale_factor(self):
        """Measurement scale factor e^{beta0 / 2} implied by the intercept."""
        return math.exp(0.5 * self.beta0)


@dataclass(frozen=True)
class LstmState:
    """Cell output h, cell state c, and the previous innovation eta_prev."""

    h: float = 0.0
    c: float = 0.0
    eta_prev: float = 0.0

    def __post_init__(self):
        if not abs(self.h) <= 1.0:
            raise ValueError("cell output h must lie in [-1, 1]")


def sigmoid(x):
    """Overflow-safe logistic function."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def lstm_cell(eta_prev, state, weights):
    """Advance the LSTM cell one step on the input eta_prev.

    Gates (forget, input, data input, output) are logistic functions of
    ``v * eta_prev + w * h + b``; the cell state is
    ``c' = g_f c + g_i x_d`` and the output ``h' = g_o tanh(c')``. The
    returned state records the input it just consumed as ``eta_prev``;
    the innovation recursion that owns the cell overwrites it with the
    freshly generated innovation.
    """
    w = weights
    g_f = sigmoid(w.v_f * eta_prev + w.w_f * state.h + w.b_f)
    g_i = sigmoid(w.v_i * eta_prev + w.w_i * state.h + w.b_i)
    x_d = sigmoid(w.v_d * eta_prev + w.w_d * state.h + w.b_d)
    g_o = sigmoid(w.v_o * eta_prev + w.w_o * state.h + w.b_o)
    c = g_f * state.c + g_i * x_d
    h = g_o * math.tanh(c)
    return LstmState(h=h, c=c, eta_prev=eta_prev)


def transition(params, z_prev, eps, state=None):
    """One step of the latent log-variance recursion.

    SV / N-SV: ``z' = mu + phi (z_prev - mu) + sqrt(sigma2) eps``; the
    state is unused and returned as None. LSTM-SV: the cell advances on
    the innovation stored in ``state`` and
    ``z' = eta' + phi z_prev`` with ``eta' = beta0 + beta1 h' + sqrt(sigma2) eps``.

    Returns ``(z_next, next_state, eta)`` with ``next_state`` and ``eta``
    None for the SV family.
    """
    if isinstance(params, (SvParams, NsvParams)):
        z = params.mu + params.phi * (z_prev - params.mu) + math.sqrt(params.sigma2) * eps
        return z, None, None
    if isinstance(params, LstmSvParams):
        st = state if state is not None else LstmState()
        cell = lstm_cell(st.eta_prev, st, params.lstm)
        eta = params.beta0 + params.beta1 * cell.h + math.sqrt(params.sigma2) * eps
        z = eta + params.phi * z_prev
        return z, LstmState(h=cell.h, c=cell.c, eta_prev=eta), eta
    raise TypeError(f"unsupported parameter record {type(params).__name__}")


def measurement_logdensity(params, z, y):
    """Log density of an observation given the log-variance state z.

    SV and LSTM-SV share ``N(0, e^z)``:
    ``-log(2 pi)/2 - z/2 - y^2 / (2 e^z)``. N-SV uses the Box-Cox
    variance ``(1 + delta z)^(1/delta)``, continuously extended to
    ``e^z`` for |delta| < 1e-8; outside the Box-Cox support
    (1 + delta z <= 0) the density is zero and -inf is returned rather
    than raising. Accepts scalars or broadcastable arrays for z and y.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(params, NsvParams) and abs(params.delta) >= 1e-8:
        wv = 1.0 + params.delta * z
        valid = wv > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            logv = np.where(valid, np.log(np.where(valid, wv, 1.0)) / params.delta, 0.0)
            out = np.where(
                valid,
                -0.5 * LOG_2PI - 0.5 * logv - 0.5 * y * y * np.exp(-logv),
                -np.inf,
            )
    else:
        out = -0.5 * LOG_2PI - 0.5 * z - 0.5 * y * y * np.exp(-z)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class NormalPrior:
    """Normal prior given as (mean, variance)."""

    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0.0:
            raise ValueError("variance must be positive")

    def logpdf(self, x):
        return -0.5 * (LOG_2PI + math.log(self.var)) - 0.5 * (x - self.mean) ** 2 / self.var

    def sample(self, rng):
        return self.mean + math.sqrt(self.var) * rng.standard_normal()


@dataclass(frozen=True)
class InverseGammaPrior:
    """Inverse-Gamma IG(shape, scale): density proportional to x^{-a-1} e^{-b/x}."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0.0 and self.scale > 0.0):
            raise ValueError("shape and scale must be positive")

    def logpdf(self, x):
        if x <= 0.0:
            return -math.inf
        a, b = self.shape, self.scale
        return a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(x) - b / x

    def sample(self, rng):
        return self.scale / rng.gamma(self.shape)


@dataclass(frozen=True)
class BetaPersistencePrior:
    """Beta(a, b) prior on (phi + 1)/2, expressed as a density in phi."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0.0 and self.b > 0.0):
            raise ValueError("Beta hyperparameters must be positive")

    def logpdf(self, phi):
        if not -1.0 < phi < 1.0:
            return -math.inf
        x = 0.5 * (phi + 1.0)
        # change of variable phi -> (phi+1)/2 contributes a factor 1/2
        return (
            (self.a - 1.0) * math.log(x)
            + (self.b - 1.0) * math.log1p(-x)
            - betaln(self.a, self.b)
            + math.log(0.5)
        )

    def sample(self, rng):
        return 2.0 * rng.beta(self.a, self.b) - 1.0


@dataclass(frozen=True)
class PriorSet:
    """Per-parameter prior descriptors keyed by parameter name."""

    priors: dict

    def logpdf(self, names, values):
        total = 0.0
        for name, x in zip(names, values):
            lp = self.priors[name].logpdf(float(x))
            if lp == -math.inf:
                return -math.inf
            total += lp
        return total

    def sample(self, names, rng):
        return np.array([self.priors[name].sample(rng) for name in names])


def default_priors(tag):
    """Default priors: N(0,25) level, Beta(20,1.5) on (phi+1)/2, IG(2.5,0.25)
    variances, N(0,0.1) nonlinearity and gate weights, N(0,0.01) intercept."""
    phi_prior = BetaPersistencePrior(20.0, 1.5)
    var_prior = InverseGammaPrior(2.5, 0.25)
    if tag == "sv":
        return PriorSet({"mu": NormalPrior(0.0, 25.0), "phi": phi_prior, "sigma2": var_prior})
    if tag == "nsv":
        return PriorSet(
            {
                "mu": NormalPrior(0.0, 25.0),
                "phi": phi_prior,
                "sigma2": var_prior,
                "delta": NormalPrior(0.0, 0.1),
            }
        )
    if tag == "lstmsv":
        priors = {
            "beta0": NormalPrior(0.0, 0.01),
            "beta1": InverseGammaPrior(2.5, 0.25),
            "phi": phi_prior,
            "sigma2": var_prior,
        }
        for name in WEIGHT_NAMES:
            priors[name] = NormalPrior(0.0, 0.1)
        return PriorSet(priors)
    raise ValueError(f"unknown model tag {tag!r}")


# ---------------------------------------------------------------------------
# model families: vectors <-> records, unconstrained mapping, prior evaluation

_IDENTITY = "identity"
_TANH = "tanh"
_EXP = "exp"


class ModelFamily:
    """Shared machinery for a parametric family.

    Parameter vectors follow ``param_names`` order. The unconstrained map
    sends phi through arctanh and positive parameters through log; prior
    evaluation in the unconstrained space folds in the Jacobian so that a
    symmetric random walk needs no support bookkeeping.
    """

    tag: str = ""
    param_names: tuple = ()
    _transforms: tuple = ()

    def __init__(self, priors=None):
        self.priors = priors if priors is not None else default_priors(self.tag)

    @property
    def dim(self):
        return len(self.param_names)

    def params(self, vector):
        raise NotImplementedError

    def vector(self, params):
        raise NotImplementedError

    def params_from_mapping(self, mapping):
        missing = [n for n in self.param_names if n not in mapping]
        if missing:
            raise ValueError(f"missing parameters for {self.tag}: {', '.join(missing)}")
        extra = [n for n in mapping if n not in self.param_names]
        if extra:
            raise ValueError(f"unknown parameters for {self.tag}: {', '.join(extra)}")
        return self.params(np.array([float(mapping[n]) for n in self.param_names]))

    def unconstrain(self, vector):
        v = np.asarray(vector, dtype=float)
        out = np.empty(self.dim)
        for i, kind in enumerate(self._transforms):
            if kind == _TANH:
                out[i] = math.atanh(v[i])
            elif kind == _EXP:
                out[i] = math.log(v[i])
            else:
                out[i] = v[i]
        return out

    def constrain(self, uvec):
        u = np.asarray(uvec, dtype=float)
        out = np.empty(self.dim)
        for i, kind in enumerate(self._transforms):
            if kind == _TANH:
                out[i] = math.tanh(u[i])
            elif kind == _EXP:
                out[i] = math.exp(u[i])
            else:
                out[i] = u[i]
        return out

    def constrain_array(self, umat):
        """Columnwise constrain of a (draws, dim) matrix."""
        u = np.asarray(umat, dtype=float)
        out = np.empty_like(u)
        for i, kind in enumerate(self._transforms):
            if kind == _TANH:
                out[:, i] = np.tanh(u[:, i])
            elif kind == _EXP:
                out[:, i] = np.exp(u[:, i])
            else:
                out[:, i] = u[:, i]
        return out

    def unconstrain_array(self, vmat):
        v = np.asarray(vmat, dtype=float)
        out = np.empty_like(v)
        for i, kind in enumerate(self._transforms):
            if kind == _TANH:
                out[:, i] = np.arctanh(v[:, i])
            elif kind == _EXP:
                out[:, i] = np.log(v[:, i])
            else:
                out[:, i] = v[:, i]
        return out

    def log_prior(self, vector):
        """Log prior density of a constrained parameter vector."""
        return self.priors.logpdf(self.param_names, np.asarray(vector, dtype=float))

    def log_prior_u(self, uvec):
        """Log prior density in the unconstrained space (Jacobian included)."""
        v = self.constrain(uvec)
        lp = self.log_prior(v)
        if lp == -math.inf:
            return -math.inf
        jac = 0.0
        for i, kind in enumerate(self._transforms):
            if kind == _TANH:
                one_minus = 1.0 - v[i] * v[i]
                if one_minus <= 0.0:
                    return -math.inf
                jac += math.log(one_minus)
            elif kind == _EXP:
                jac += float(uvec[i])  # log of the positive parameter
        return lp + jac

    def sample_prior(self, rng):
        """Constrained parameter vector drawn from the prior."""
        return self.priors.sample(self.param_names, rng)


class SvModel(ModelFamily):
    tag = "sv"
    param_names = ("mu", "phi", "sigma2")
    _transforms = (_IDENTITY, _TANH, _EXP)

    def params(self, vector):
        mu, phi, sigma2 = (float(x) for x in vector)
        return SvParams(mu, phi, sigma2)

    def vector(self, params):
        return np.array([params.mu, params.phi, params.sigma2])


class NsvModel(ModelFamily):
    tag = "nsv"
    param_names = ("mu", "phi", "sigma2", "delta")
    _transforms = (_IDENTITY, _TANH, _EXP, _IDENTITY)

    def params(self, vector):
        mu, phi, sigma2, delta = (float(x) for x in vector)
        return NsvParams(mu, phi, sigma2, delta)

    def vector(self, params):
        return np.array([params.mu, params.phi, params.sigma2, params.delta])


class LstmSvModel(ModelFamily):
    tag = "lstmsv"
    param_names = ("beta0", "beta1", "phi", "sigma2") + WEIGHT_NAMES
    _transforms = (_IDENTITY, _EXP, _TANH, _EXP) + (_IDENTITY,) * len(WEIGHT_NAMES)

    def params(self, vector):
        v = np.asarray(vector, dtype=float)
        return LstmSvParams(
            beta0=float(v[0]),
            beta1=float(v[1]),
            phi=float(v[2]),
            sigma2=float(v[3]),
            lstm=LstmWeights.from_sequence(v[4:]),
        )

    def vector(self, params):
        head = [params.beta0, params.beta1, params.phi, params.sigma2]
        return np.array(head + list(params.lstm.as_tuple()))


SV = SvModel()
NSV = NsvModel()
LSTMSV = LstmSvModel()

MODEL_TAGS = ("sv", "nsv", "lstmsv")
_FAMILIES = {"sv": SV, "nsv": NSV, "lstmsv": LSTMSV}


def get_model(tag):
    """Default family instance for a model tag in {'sv', 'nsv', 'lstmsv'}."""
    try:
        return _FAMILIES[tag]
    except KeyError:
        raise ValueError(f"unknown model tag {tag!r}; expected one of {MODEL_TAGS}") from None


def family_of(params):
    """Family instance matching a parameter record."""
    if isinstance(params, SvParams):
        return SV
    if isinstance(params, NsvParams):
        return NSV
    if isinstance(params, LstmSvParams):
        return LSTMSV
    raise TypeError(f"unsupported parameter record {type(params).__name__}")


def log_prior(params):
    """Log prior density of a parameter record under the default priors."""
    fam = family_of(params)
    return fam.log_prior(fam.vector(params))


# ---------------------------------------------------------------------------
# simulators


def simulate(params, T, seed=None, z0=None):
    """Exact forward simulation of (y, z) for T steps.

    SV and N-SV draw z_1 from the stationary law
    ``N(mu, sigma2 / (1 - phi^2))``. LSTM-SV starts the cell empty
    (h = c = 0) and uses ``z_1 = eta_1 + phi * z0`` with z0 = 0 unless
    given. The noise layout (one latent-shock stream of length T followed
    by one measurement stream) is shared across families so matched
    parameter reductions can be compared path by path under one seed.
    """
    T = int(T)
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = as_generator(seed)
    eps_z = rng.standard_normal(T)
    eps_y = rng.standard_normal(T)
    z = np.empty(T)

    if isinstance(params, (SvParams, NsvParams)):
        sigma = math.sqrt(params.sigma2)
        sd_stat = sigma / math.sqrt(1.0 - params.phi * params.phi)
        z[0] = params.mu + sd_stat * eps_z[0]
        for t in range(1, T):
            z[t] = params.mu + params.phi * (z[t - 1] - params.mu) + sigma * eps_z[t]
        if isinstance(params, NsvParams) and abs(params.delta) >= 1e-8:
            wv = 1.0 + params.delta * z
            if np.any(wv <= 0.0):
                raise ValueError(
                    "Box-Cox variance undefined along the simulated path "
                    "(1 + delta * z <= 0); shrink |delta| or the latent scale"
                )
            y = wv ** (0.5 / params.delta) * eps_y
        else:
            y = np.exp(0.5 * z) * eps_y
        return y, z

    if isinstance(params, LstmSvParams):
        sigma = math.sqrt(params.sigma2)
        z_init = 0.0 if z0 is None else float(z0)
        # t = 1: the cell has no memory, h_1 = 0 by definition
        eta = params.beta0 + sigma * eps_z[0]
        z[0] = eta + params.phi * z_init
        state = LstmState(h=0.0, c=0.0, eta_prev=eta)
        for t in range(1, T):
            z[t], state, _ = transition(params, z[t - 1], eps_z[t], state)
        y = np.exp(0.5 * z) * eps_y
        return y, z

    raise TypeError(f"unsupported parameter record {type(params).__name__}")


def dgp_drift(z):
    """Deterministic part of the nonlinear benchmark volatility recursion."""
    z = np.asarray(z, dtype=float)
    out = 0.1 + 0.96 * z - 0.8 * z * z / (1.0 + z * z) + 1.0 / (1.0 + np.exp(-z))
    if out.ndim == 0:
        return float(out)
    return out


def simulate_dgp(T, seed=None):
    """Nonlinear benchmark generator used for the simulation experiments.

    z_1 ~ N(0, 1); z_t = drift(z_{t-1}) + sqrt(0.1) eps; y_t = e^{z/2} eps_y.
    """
    T = int(T)
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = as_generator(seed)
    eps_z = rng.standard_normal(T)
    eps_y = rng.standard_normal(T)
    sigma = math.sqrt(0.1)
    z = np.empty(T)
    z[0] = eps_z[0]
    for t in range(1, T):
        z[t] = dgp_drift(z[t - 1]) + sigma * eps_z[t]
    y = np.exp(0.5 * z) * eps_y
    return y, z
