"""Stochastic volatility with an LSTM-driven innovation mean.

The package covers the full workflow: return construction and long-memory
statistics, exact simulators for the SV, N-SV and LSTM-SV families (plus
the nonlinear benchmark generator), a deterministic bootstrap particle
filter over a blocked random field, the block pseudo-marginal sampler,
IS^2 marginal likelihood estimation, and out-of-sample forecast scoring.
"""

__version__ = "0.1.0"

from .data import (
    DescriptiveStats,
    LoTestResult,
    PriceSeries,
    ReturnSeries,
    demeaned_returns,
    descriptive_stats,
    kurtosis,
    log_squared,
    lo_modified_rs,
    read_series,
    skewness,
)
from .evaluate import (
    ForecastReport,
    ResidualDiagnostics,
    gaussian_mixture_quantile,
    ljung_box,
    predictive_scores,
    qq_points,
    residual_diagnostics,
)
from .filter import (
    FilterResult,
    RandomField,
    filtered_volatility,
    particle_filter,
    sorted_multinomial_resample,
)
from .is2 import (
    ConjugateNormalToy,
    MarglikEstimate,
    MixtureProposal,
    fit_proposal,
    is2_marglik,
)
from .mcmc import (
    ChainDraws,
    ChainSummary,
    SamplerConfig,
    adapt_scale,
    iact,
    propose,
    run_bpm,
    summarize,
)
from .models import (
    LSTMSV,
    NSV,
    SV,
    LstmState,
    LstmSvParams,
    LstmWeights,
    NsvParams,
    SvParams,
    get_model,
    log_prior,
    lstm_cell,
    measurement_logdensity,
    simulate,
    simulate_dgp,
    transition,
)
from .seeding import substream
