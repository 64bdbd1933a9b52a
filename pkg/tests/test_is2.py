import math

import numpy as np
import pytest
from scipy import integrate

from lstmsv.is2 import (
    ConjugateNormalToy,
    MixtureProposal,
    fit_proposal,
    is2_marglik,
)
from lstmsv.mcmc import SamplerConfig, run_bpm
from lstmsv.models import LSTMSV, LstmSvParams, LstmWeights, simulate


@pytest.fixture(scope="module")
def toy():
    y = np.random.default_rng(0).normal(0.7, 1.0, size=50)
    return ConjugateNormalToy(y)


class TestConjugateToy:
    def test_evidence_matches_quadrature(self, toy):
        mode = toy.posterior_mean_var()[0]
        peak = toy.loglik(np.array([mode])) + toy.log_prior_u(np.array([mode]))

        def integrand(theta):
            u = np.array([theta])
            return math.exp(toy.loglik(u) + toy.log_prior_u(u) - peak)

        val, _ = integrate.quad(integrand, -6.0, 6.0, limit=200)
        assert toy.log_evidence() == pytest.approx(math.log(val) + peak, abs=1e-9)

    def test_posterior_moments(self, toy):
        mean, var = toy.posterior_mean_var()
        draws = toy.sample_posterior(np.random.default_rng(1), 200_000)[:, 0]
        assert draws.mean() == pytest.approx(mean, abs=4 * math.sqrt(var / 200_000))
        assert draws.var() == pytest.approx(var, rel=0.02)


class TestFitProposal:
    def test_single_component_is_inflated_moment_match(self):
        rng = np.random.default_rng(2)
        x = rng.multivariate_normal([1.0, -2.0], [[2.0, 0.6], [0.6, 1.0]], size=3000)
        prop = fit_proposal(x, n_components=1, seed=3)
        assert prop.converged
        assert np.allclose(prop.means[0], x.mean(axis=0), atol=1e-8)
        # EM's maximum-likelihood covariance (1/n), inflated on the sd scale
        ml_cov = np.cov(x, rowvar=False, bias=True)
        assert np.allclose(prop.covs[0], ml_cov * 1.2**2, rtol=1e-6, atol=1e-8)

    def test_recovers_separated_two_component_mixture(self):
        rng = np.random.default_rng(4)
        n = 4000
        pick = rng.random(n) < 0.5
        x = np.where(pick[:, None],
                     rng.normal(-5.0, 1.0, (n, 1)),
                     rng.normal(5.0, 1.0, (n, 1)))
        x = np.hstack([x, rng.normal(0.0, 1.0, (n, 1))])
        prop = fit_proposal(x, n_components=2, seed=5)
        order = np.argsort(prop.means[:, 0])
        assert prop.weights[order] == pytest.approx([0.5, 0.5], abs=0.05)
        assert prop.means[order, 0] == pytest.approx([-5.0, 5.0], abs=0.1)

    def test_finite_logpdf_on_real_lstmsv_chain(self):
        # 16-dimensional chain from a short LSTM-SV fit
        params = LstmSvParams(0.2, 0.15, 0.9, 0.09, LstmWeights())
        y, _ = simulate(params, 120, seed=6)
        cfg = SamplerConfig(iters=900, burnin=200, thin=1, n_particles=16, n_blocks=10, seed=7)
        chain = run_bpm(LSTMSV, y, cfg)
        prop = fit_proposal(chain, n_components=2, seed=8)
        vals = prop.logpdf(chain.retained_u())
        assert np.all(np.isfinite(vals))

    def test_requires_enough_draws(self):
        with pytest.raises(ValueError, match="500"):
            fit_proposal(np.zeros((100, 2)), n_components=1)

    def test_singular_component_regularized(self):
        # a column with zero variance must not crash the fit
        rng = np.random.default_rng(9)
        x = np.hstack([rng.standard_normal((600, 1)), np.full((600, 1), 3.0)])
        prop = fit_proposal(x, n_components=1, seed=10)
        assert np.isfinite(prop.logpdf(x)).all()

    def test_mixture_proposal_validation(self):
        with pytest.raises(ValueError, match="weights"):
            MixtureProposal(np.array([0.7, 0.7]), np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_sampling_and_density_consistency(self):
        prop = MixtureProposal(
            weights=np.array([0.3, 0.7]),
            means=np.array([[-1.0], [2.0]]),
            covs=np.array([[[0.5]], [[1.5]]]),
        )
        rng = np.random.default_rng(11)
        draws = prop.sample(rng, 100_000)[:, 0]
        assert draws.mean() == pytest.approx(0.3 * -1.0 + 0.7 * 2.0, abs=0.02)
        # density integrates to 1 on a grid
        grid = np.linspace(-8, 10, 4001)
        dens = np.exp(prop.logpdf(grid[:, None]))
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-6)


class TestIs2Marglik:
    def test_matches_closed_form_evidence(self, toy):
        draws = toy.sample_posterior(np.random.default_rng(12), 2000)
        prop = fit_proposal(draws, n_components=1, seed=13)
        est = is2_marglik(toy, toy.y, prop, M=5000, runs=10, seed=14, loglik_fn=toy.loglik)
        assert est.runs == 10 and est.run_logs.size == 10
        assert abs(est.log_marglik - toy.log_evidence()) < 3.0 * est.mc_se

    def test_zero_variance_when_proposal_is_posterior(self, toy):
        est = is2_marglik(
            toy, toy.y, toy.posterior_proposal(), M=300, runs=4, seed=15, loglik_fn=toy.loglik
        )
        assert est.log_marglik == pytest.approx(toy.log_evidence(), abs=1e-8)
        assert est.mc_se == pytest.approx(0.0, abs=1e-9)

    def test_unbiasedness_of_natural_space_estimator(self, toy):
        # 200 independent small-M estimates average to the true evidence
        draws = toy.sample_posterior(np.random.default_rng(16), 1000)
        prop = fit_proposal(draws, n_components=1, seed=17)
        est = is2_marglik(toy, toy.y, prop, M=100, runs=200, seed=18, loglik_fn=toy.loglik)
        ratios = np.exp(est.run_logs - toy.log_evidence())
        se = ratios.std(ddof=1) / math.sqrt(ratios.size)
        assert abs(ratios.mean() - 1.0) < 3.0 * se

    def test_doubling_m_halves_variance(self, toy):
        draws = toy.sample_posterior(np.random.default_rng(19), 1000)
        prop = fit_proposal(draws, n_components=1, seed=20)
        small = is2_marglik(toy, toy.y, prop, M=50, runs=300, seed=21, loglik_fn=toy.loglik)
        large = is2_marglik(toy, toy.y, prop, M=100, runs=300, seed=22, loglik_fn=toy.loglik)
        var_small = np.exp(small.run_logs).var(ddof=1)
        var_large = np.exp(large.run_logs).var(ddof=1)
        assert 1.4 < var_small / var_large < 2.9

    def test_deterministic_and_thread_invariant(self, toy):
        draws = toy.sample_posterior(np.random.default_rng(23), 1000)
        prop = fit_proposal(draws, n_components=1, seed=24)
        kwargs = dict(M=400, runs=3, seed=25, loglik_fn=toy.loglik)
        a = is2_marglik(toy, toy.y, prop, **kwargs, n_threads=1)
        b = is2_marglik(toy, toy.y, prop, **kwargs, n_threads=4)
        c = is2_marglik(toy, toy.y, prop, **kwargs, n_threads=1)
        assert np.array_equal(a.run_logs, b.run_logs)
        assert np.array_equal(a.run_logs, c.run_logs)

    def test_all_vanishing_weights_raise(self, toy):
        draws = toy.sample_posterior(np.random.default_rng(26), 1000)
        prop = fit_proposal(draws, n_components=1, seed=27)
        with pytest.raises(RuntimeError, match="mis-specified"):
            is2_marglik(toy, toy.y, prop, M=50, runs=2, seed=28, loglik_fn=lambda u: -math.inf)

    def test_single_run_has_nan_se(self, toy):
        draws = toy.sample_posterior(np.random.default_rng(29), 1000)
        prop = fit_proposal(draws, n_components=1, seed=30)
        est = is2_marglik(toy, toy.y, prop, M=200, runs=1, seed=31, loglik_fn=toy.loglik)
        assert math.isnan(est.mc_se)

    def test_filter_backed_estimate_on_small_sv(self):
        # end to end with the particle filter: compare against the dense-grid
        # likelihood route on a short series
        import sys

        sys.path.insert(0, "tests")
        from helpers import sv_grid_filter

        from lstmsv.models import SV, SvParams

        p = SvParams(0.0, 0.9, 0.09)
        y, _ = simulate(p, 40, seed=32)

        def exact_loglik(u):
            vec = SV.constrain(u)
            return sv_grid_filter(SV.params(vec), y)[0]

        cfg = SamplerConfig(iters=1500, burnin=400, thin=1, n_particles=32, n_blocks=10, seed=33)
        chain = run_bpm(SV, y, cfg)
        prop = fit_proposal(chain, n_components=1, seed=34)
        pf_est = is2_marglik(SV, y, prop, M=400, n_particles=64, runs=6, seed=35)
        exact_est = is2_marglik(SV, y, prop, M=400, runs=6, seed=36, loglik_fn=exact_loglik)
        gap = abs(pf_est.log_marglik - exact_est.log_marglik)
        assert gap < 3.0 * math.sqrt(pf_est.mc_se**2 + exact_est.mc_se**2) + 0.05
