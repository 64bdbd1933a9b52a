import math

import numpy as np
import pytest

from lstmsv.data import (
    LO_5PCT_LOWER,
    LO_5PCT_UPPER,
    PriceSeries,
    ReturnSeries,
    demeaned_returns,
    descriptive_stats,
    kurtosis,
    lo_modified_rs,
    log_squared,
    read_series,
    skewness,
)


class TestDemeanedReturns:
    def test_constant_prices_give_zero_returns(self):
        rs = demeaned_returns([7.5, 7.5, 7.5])
        assert np.allclose(rs.values, [0.0, 0.0])
        assert rs.train_len == 2 and rs.test_len == 0

    def test_symmetric_two_step_path(self):
        # log ratios are +log(1.01) and -log(1.01); their mean is exactly 0
        rs = demeaned_returns([100.0, 101.0, 100.0])
        expected = 100.0 * math.log(1.01)
        assert rs.values == pytest.approx([expected, -expected], abs=1e-12)

    def test_length_and_split(self):
        rng = np.random.default_rng(0)
        prices = 100.0 * np.exp(np.cumsum(0.01 * rng.standard_normal(1613)))
        rs = demeaned_returns(prices, train_len=1000)
        assert len(rs) == 1612
        assert rs.train_len == 1000 and rs.test_len == 612
        assert rs.train.size == 1000 and rs.test.size == 612

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_mean_invariant(self, seed):
        rng = np.random.default_rng(seed)
        prices = np.exp(np.cumsum(0.03 * rng.standard_normal(400))) * 50.0
        rs = demeaned_returns(prices)
        scale = max(1.0, np.abs(rs.values).max())
        assert abs(rs.values.mean()) <= 1e-10 * scale

    def test_nonpositive_price_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            demeaned_returns([1.0, -2.0, 3.0])
        with pytest.raises(ValueError, match="positive"):
            demeaned_returns([1.0, 0.0, 3.0])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="at least 3"):
            demeaned_returns([1.0, 2.0])

    def test_bad_train_len_rejected(self):
        with pytest.raises(ValueError, match="train_len"):
            demeaned_returns([1.0, 2.0, 3.0], train_len=5)

    def test_return_series_split_invariant(self):
        with pytest.raises(ValueError, match="train_len"):
            ReturnSeries(np.zeros(5), train_len=3, test_len=3)

    def test_price_series_timestamps(self):
        ps = PriceSeries([1.0, 2.0, 3.0], timestamps=("a", "b", "c"))
        assert len(ps) == 3
        with pytest.raises(ValueError, match="timestamps"):
            PriceSeries([1.0, 2.0, 3.0], timestamps=("a", "b"))


class TestDescriptiveStats:
    def test_standard_normal_monte_carlo(self):
        y = np.random.default_rng(1).standard_normal(10**6)
        st = descriptive_stats(y)
        assert abs(st.skewness) < 0.01
        assert st.kurtosis == pytest.approx(3.0, abs=0.05)
        assert st.std == pytest.approx(1.0, abs=0.01)

    def test_two_point_sample(self):
        y = np.array([-1.0, 1.0] * 50)
        st = descriptive_stats(y)
        assert st.skewness == pytest.approx(0.0, abs=1e-12)
        assert st.kurtosis == pytest.approx(1.0, abs=1e-12)
        assert (st.min, st.max) == (-1.0, 1.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal(200)
        a = descriptive_stats(y)
        b = descriptive_stats(rng.permutation(y))
        # only float summation order differs
        assert (b.min, b.max) == (a.min, a.max)
        assert b.std == pytest.approx(a.std, rel=1e-12)
        assert b.skewness == pytest.approx(a.skewness, rel=1e-9, abs=1e-12)
        assert b.kurtosis == pytest.approx(a.kurtosis, rel=1e-12)

    def test_negation_symmetry(self):
        y = np.random.default_rng(3).gamma(2.0, size=500)
        a = descriptive_stats(y)
        b = descriptive_stats(-y)
        assert b.skewness == pytest.approx(-a.skewness, rel=1e-12)
        assert b.kurtosis == pytest.approx(a.kurtosis, rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_kurtosis_lower_bound(self, seed):
        y = np.random.default_rng(seed).exponential(size=50)
        assert kurtosis(y) >= 1.0 + skewness(y) ** 2 - 1e-12

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            descriptive_stats(np.full(10, 3.0))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="at least 4"):
            descriptive_stats([1.0, 2.0, 3.0])


class TestLoModifiedRS:
    def test_q0_matches_classical_rs(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(300)
        result = lo_modified_rs(x, 0)
        d = x - x.mean()
        cums = np.cumsum(d)
        classical = (cums.max() - cums.min()) / np.std(x)  # plain 1/n std
        assert result.statistic == pytest.approx(classical / math.sqrt(x.size), rel=1e-12)

    @pytest.mark.parametrize("q", [0, 5, 20])
    def test_affine_invariance(self, q):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(400)
        base = lo_modified_rs(x, q).statistic
        shifted = lo_modified_rs(3.7 * x - 11.0, q).statistic
        negated = lo_modified_rs(-2.0 * x + 4.0, q).statistic
        assert shifted == pytest.approx(base, rel=1e-9)
        assert negated == pytest.approx(base, rel=1e-9)

    def test_gaussian_null_sanity(self):
        # light version of the acceptance calibration (full run lives there)
        rng = np.random.default_rng(6)
        rejections = sum(
            lo_modified_rs(rng.standard_normal(5000), 5).reject_5pct for _ in range(100)
        )
        assert rejections <= 15

    def test_ar1_short_memory_not_flagged(self):
        # AR(1) is short memory: with Bartlett lag 20 the rejection rate stays low
        rng = np.random.default_rng(7)
        rejections = 0
        for _ in range(300):
            e = rng.standard_normal(5000)
            x = np.empty(5000)
            x[0] = e[0]
            for t in range(1, 5000):
                x[t] = 0.5 * x[t - 1] + e[t]
            rejections += lo_modified_rs(x, 20).reject_5pct
        assert rejections / 300 < 0.10

    def test_long_memory_is_flagged(self):
        # cumulative sum of noise (a random walk) is strongly persistent
        rng = np.random.default_rng(8)
        x = np.cumsum(rng.standard_normal(3000))
        result = lo_modified_rs(x, 5)
        assert result.statistic > LO_5PCT_UPPER
        assert result.reject_5pct

    def test_acceptance_region(self):
        assert (LO_5PCT_LOWER, LO_5PCT_UPPER) == (0.809, 1.862)

    def test_invalid_lag_rejected(self):
        x = np.random.default_rng(9).standard_normal(50)
        with pytest.raises(ValueError, match="lag"):
            lo_modified_rs(x, -1)
        with pytest.raises(ValueError, match="lag"):
            lo_modified_rs(x, 50)

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError):
            lo_modified_rs(np.ones(100), 5)

    def test_log_squared_guards_zeros(self):
        y = np.array([0.0, 1.0, -2.0])
        out = log_squared(y)
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(math.log(1e-12))


class TestReadSeries:
    def test_plain_column(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("1.5\n2.5\n-3.0\n")
        assert np.array_equal(read_series(path), [1.5, 2.5, -3.0])

    def test_header_and_timestamps(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("date,price\n2020-01-01,100.5\n2020-01-02,101.25\n")
        assert np.array_equal(read_series(path), [100.5, 101.25])

    def test_header_single_column(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("y\n0.25\n-0.5\n")
        assert np.array_equal(read_series(path), [0.25, -0.5])

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1.0\n2.0\noops\n")
        with pytest.raises(ValueError, match="line 3"):
            read_series(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("\n")
        with pytest.raises(ValueError, match="no numeric rows"):
            read_series(path)
