import math

import numpy as np
import pytest
from scipy import integrate

from upcross.exit_law import (
    DomainError, ExitTimeLaw, default_law, exit_time_cdf, fast_law, sample_exit_time,
    selftest_exit_law, step_from_uniform,
)

# P(tau <= t) for the exit time of BM from [-1, 1]; 40-digit mpmath sums of
# the spectral series, frozen here.
CDF_ORACLE = [
    (0.05, 1.5488432862088167275e-05),
    (0.2, 0.05069463731552963844),
    (0.45, 0.27205876779560685285),
    (1.0, 0.6292225702004760946),
    (2.0, 0.89202295555589098651),
    (5.0, 0.99733336599830646345),
]
MEDIAN = 0.75749567654279134233
PDF_AT_1 = 0.45736522563391993231


@pytest.fixture(scope="module")
def law():
    return default_law()


@pytest.mark.parametrize("t,expected", CDF_ORACLE)
def test_cdf_matches_high_precision_oracle(law, t, expected):
    assert law.cdf(t) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_cdf_edge_values(law):
    assert law.cdf(0.0) == 0.0
    assert law.cdf(60.0) == pytest.approx(1.0, abs=1e-15)
    assert exit_time_cdf(1.0) == law.cdf(1.0)


def test_cdf_rejects_negative_time(law):
    with pytest.raises(DomainError):
        law.cdf(-0.1)
    with pytest.raises(DomainError):
        law.cdf(np.nan)


def test_cdf_is_monotone(law):
    t = np.linspace(0.01, 6, 400)
    assert np.all(np.diff(law.cdf(t)) > 0)


def test_series_agree_on_overlap(law):
    t = np.linspace(0.3, 0.7, 100)
    gap = np.abs(law.cdf_small_series(t) - law.cdf_large_series(t))
    assert gap.max() <= 1e-10


def test_pdf_point_value_and_normalization(law):
    assert law.pdf(1.0) == pytest.approx(PDF_AT_1, rel=1e-12)
    total, _ = integrate.quad(law.pdf, 0, 40, limit=200, points=[0.45])
    assert total == pytest.approx(1.0, abs=1e-10)


def test_pdf_is_derivative_of_cdf(law):
    for t in (0.1, 0.44, 0.46, 0.9, 2.5):
        h = 1e-6
        fd = (law.cdf(t + h) - law.cdf(t - h)) / (2 * h)
        assert law.pdf(t) == pytest.approx(fd, rel=1e-6)


def test_quantile_median(law):
    assert law.quantile(0.5) == pytest.approx(MEDIAN, rel=1e-12)


@pytest.mark.parametrize("u", [1e-9, 1e-5, 1e-4, 0.01, 0.3, 0.5, 0.77, 0.99, 0.9999, 1 - 1e-9])
def test_quantile_round_trip(law, u):
    assert law.cdf(law.quantile(u)) == pytest.approx(u, rel=1e-10, abs=1e-14)


def test_quantile_rejects_out_of_range(law):
    for u in (0.0, 1.0, -0.2):
        with pytest.raises(DomainError):
            law.quantile(u)


def test_fast_law_is_close_to_reference():
    fast = fast_law()
    u = np.linspace(1e-4, 1 - 1e-4, 2001)
    assert np.max(np.abs(fast.cdf(fast.quantile(u)) - u)) < 1e-9
    assert fast_law() is fast


def test_sample_scales_with_barrier_squared(law):
    a = law.sample(np.random.default_rng(3), 1.0, 50)
    b = law.sample(np.random.default_rng(3), 0.25, 50)
    np.testing.assert_allclose(b, a / 16, rtol=1e-15)
    with pytest.raises(ValueError):
        law.sample(np.random.default_rng(0), 0.0, 1)


def test_sample_moments_moderate(law):
    x = sample_exit_time(np.random.default_rng(11), 0.5, 200_000)
    # E tau_h = h^2, E tau_h^2 = 5/3 h^4
    assert x.mean() == pytest.approx(0.25, abs=4 * math.sqrt(2 / 3) * 0.25 / math.sqrt(x.size))
    m2 = (x * x).mean()
    assert m2 == pytest.approx(5 / 48, abs=4 * (x * x).std() / math.sqrt(x.size))


def test_ks_of_samples_against_cdf(law):
    from scipy import stats
    x = law.sample(np.random.default_rng(5), 1.0, 20_000)
    assert stats.kstest(x, law.cdf).pvalue > 0.01


def test_step_from_uniform_split():
    args = fast_law().kernel_args
    s, d = step_from_uniform(0.25, 1.0, False, *args)
    assert s == 1 and d == pytest.approx(fast_law().quantile(0.5), rel=1e-12)
    s, d = step_from_uniform(0.75, 1.0, False, *args)
    assert s == -1 and d == pytest.approx(fast_law().quantile(0.5), rel=1e-12)
    s, d = step_from_uniform(0.9, 0.0625, True, *args)
    assert s == -1 and d == 0.0625


def test_selftest_small_sample_guard():
    with pytest.raises(ValueError):
        selftest_exit_law(10)


def test_bad_law_parameters():
    with pytest.raises(ValueError):
        ExitTimeLaw(quantile_table_size=1)
    with pytest.raises(ValueError):
        ExitTimeLaw(truncation_tolerance=0.0)
