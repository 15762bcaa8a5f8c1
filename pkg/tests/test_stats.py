import math

import numpy as np
import pytest

from nc_lab.errors import DomainError
from nc_lab.stats import ols_fit, regularized_incomplete_beta, t_cdf, t_ppf, t_sf


def test_incomplete_beta_basic_identities():
    assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
    # I_x(1,1) is the identity
    for x in (0.1, 0.37, 0.9):
        assert regularized_incomplete_beta(1.0, 1.0, x) == pytest.approx(x, abs=1e-14)
    # symmetry I_x(a,b) + I_{1-x}(b,a) = 1
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(0.2, 8.0, size=2)
        x = rng.uniform(0.01, 0.99)
        total = regularized_incomplete_beta(a, b, x) + regularized_incomplete_beta(b, a, 1.0 - x)
        assert total == pytest.approx(1.0, abs=1e-12)


def test_incomplete_beta_reference_value():
    # CDF of Beta(2,3) at 0.4: 1 - (1-x)^3 (1 + 3x) evaluated by hand
    assert regularized_incomplete_beta(2.0, 3.0, 0.4) == pytest.approx(
        0.5247999999999999, abs=1e-13
    )


def test_incomplete_beta_domain_errors():
    with pytest.raises(DomainError):
        regularized_incomplete_beta(0.0, 1.0, 0.5)
    with pytest.raises(DomainError):
        regularized_incomplete_beta(1.0, 1.0, 1.5)


def test_t_tail_reference_values():
    """Tail probabilities and quantiles against standard tables."""
    assert t_sf(0.0, 5) == pytest.approx(0.5, abs=1e-14)
    assert t_sf(2.0, 10) == pytest.approx(0.036694017385370196, abs=1e-12)
    assert t_sf(-1.5, 7) == pytest.approx(0.911350756505015, abs=1e-12)
    assert t_cdf(2.0, 10) == pytest.approx(1.0 - 0.036694017385370196, abs=1e-12)
    assert t_ppf(0.975, 10) == pytest.approx(2.2281388519649385, abs=1e-10)
    assert t_ppf(0.9, 3) == pytest.approx(1.6377443536962095, abs=1e-10)
    assert t_ppf(0.5, 4) == 0.0


def test_t_tail_symmetry_and_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(30):
        df = float(rng.integers(1, 40))
        t = float(rng.standard_normal() * 3.0)
        assert t_sf(t, df) + t_sf(-t, df) == pytest.approx(1.0, abs=1e-12)
        p = t_sf(abs(t), df)
        if 1e-8 < p < 0.5:
            assert t_ppf(1.0 - p, df) == pytest.approx(abs(t), rel=1e-9)


def test_t_tail_scipy_cross_check():
    ss = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(2)
    for _ in range(40):
        df = float(rng.integers(1, 60))
        t = float(rng.standard_normal() * 4.0)
        assert t_sf(t, df) == pytest.approx(float(ss.t.sf(t, df)), abs=1e-12)


def test_ols_exact_line():
    fit = ols_fit([1.0, 2.0, 3.0], [2.0, 4.0, 6.0])
    assert fit.slope == pytest.approx(2.0, abs=1e-14)
    assert fit.intercept == pytest.approx(0.0, abs=1e-14)
    assert fit.r_squared == 1.0
    assert fit.stderr == 0.0
    assert fit.p_value == 0.0
    assert math.isinf(fit.t_value)


def test_ols_five_point_fixture_vs_normal_equations():
    """Hand normal-equations computation, redone here with raw sums."""
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    y = x + np.array([0.1, -0.1, 0.0, 0.1, -0.1])
    n = 5
    sxx = np.sum((x - x.mean()) ** 2)
    sxy = np.sum((x - x.mean()) * (y - y.mean()))
    slope = sxy / sxx
    intercept = y.mean() - slope * x.mean()
    resid = y - slope * x - intercept
    sse = np.sum(resid**2)
    stderr = math.sqrt(sse / (n - 2) / sxx)
    t_value = slope / stderr
    fit = ols_fit(x, y)
    assert fit.slope == pytest.approx(slope, abs=1e-10)
    assert fit.intercept == pytest.approx(intercept, abs=1e-10)
    assert fit.stderr == pytest.approx(stderr, abs=1e-10)
    assert fit.t_value == pytest.approx(t_value, abs=1e-10)
    assert fit.f_statistic == pytest.approx(t_value**2, rel=1e-9)
    half = t_ppf(0.975, n - 2) * stderr
    assert fit.ci95 == (pytest.approx(slope - half, abs=1e-10),
                        pytest.approx(slope + half, abs=1e-10))
    assert fit.p_value == pytest.approx(2.0 * t_sf(abs(t_value), n - 2), abs=1e-12)


def test_ols_zero_covariance_cloud():
    # y arranged so sum((x - mean(x)) * y) is exactly zero
    fit = ols_fit([1.0, 2.0, 3.0, 4.0], [1.0, -1.0, -1.0, 1.0])
    assert fit.slope == 0.0
    assert fit.r_squared == pytest.approx(0.0, abs=1e-14)


def test_ols_shift_scale_equivariance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(20)
    y = 0.7 * x + rng.standard_normal(20) * 0.3
    base = ols_fit(x, y)
    scaled = ols_fit(4.0 * x + 11.0, y)
    assert scaled.slope == pytest.approx(base.slope / 4.0, rel=1e-10)


def test_ols_r_squared_is_squared_correlation():
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rng.standard_normal(15)
        y = rng.standard_normal(15) + 0.5 * x
        fit = ols_fit(x, y)
        r = np.corrcoef(x, y)[0, 1]
        assert fit.r_squared == pytest.approx(r**2, rel=1e-10)
        assert fit.f_statistic == pytest.approx(fit.t_value**2, rel=1e-9)
        assert 0.0 <= fit.r_squared <= 1.0


def test_ols_adj_r_squared():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(12)
    y = x + rng.standard_normal(12)
    fit = ols_fit(x, y)
    assert fit.adj_r_squared == pytest.approx(
        1.0 - (1.0 - fit.r_squared) * (12 - 1) / (12 - 2), rel=1e-12
    )


def test_ols_domain_errors():
    with pytest.raises(DomainError):
        ols_fit([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        ols_fit([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        ols_fit([1.0, 2.0, 3.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        ols_fit([1.0, 2.0, np.nan], [1.0, 2.0, 3.0])


def test_regression_fit_to_dict():
    fit = ols_fit([1.0, 2.0, 3.0, 4.0], [1.1, 1.9, 3.2, 3.8])
    d = fit.to_dict()
    assert d["n"] == 4
    assert d["ci95_low"] < d["slope"] < d["ci95_high"]
