import json
import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from drmech.dist import (
    DEFAULT_SYNTHETIC_PRIOR,
    CauchyPrior,
    CompoundPrior,
    ExponentialPrior,
    NormalPrior,
    UniformPrior,
    fit_compound_prior,
    fit_lognormal3,
    load_prior,
    lognorm_moments,
    norm_cdf,
    read_params_csv,
    sample_base_consumption,
    sample_user_types,
    save_prior,
    write_params_csv,
)
from drmech.errors import DomainError, FitError, PriorError
from drmech.model import ConsumptionParams


def test_norm_cdf_values():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-14)
    assert norm_cdf(-1.0) == pytest.approx(0.15865525393145705, abs=1e-14)
    # deep left tail must not underflow to garbage
    assert 0.0 < norm_cdf(-8.0) < 1e-14


def test_norm_cdf_against_scipy():
    xs = np.linspace(-10.0, 10.0, 201)
    ours = np.array([norm_cdf(x) for x in xs])
    ref = scipy.stats.norm.cdf(xs)
    assert np.max(np.abs(ours - ref)) < 1e-14


def test_moments_at_support_bound():
    m = lognorm_moments(ConsumptionParams(1.0, 1.0, 0.0), 0.0)
    assert m.cdf == 0.0
    assert m.mean == pytest.approx(math.exp(0.5), rel=1e-15)
    assert m.partial_expectation == 0.0


def test_moments_interior_point():
    m = lognorm_moments(ConsumptionParams(1.0, 1.0, 0.0), 1.0)
    assert m.cdf == pytest.approx(0.5, abs=1e-14)
    # E[X 1{X<=1}] = Phi(-1) e^{1/2} for the unit lognormal
    assert m.partial_expectation == pytest.approx(0.261578291865, abs=1e-10)
    shifted = lognorm_moments(ConsumptionParams(0.8, 1.5, 0.3), 1.0)
    assert shifted.cdf == pytest.approx(0.17037736545053375, abs=1e-12)
    assert shifted.partial_expectation == pytest.approx(0.13338743375119277, abs=1e-12)


def test_moments_full_support():
    m = lognorm_moments(ConsumptionParams(0.5, 2.0, 1.0), math.inf)
    assert m.cdf == 1.0
    assert m.mean == pytest.approx(1.0 + 2.0 * math.exp(0.125), rel=1e-15)
    assert m.partial_expectation == m.mean


def test_moments_against_quadrature():
    params = ConsumptionParams(0.7, 1.2, 0.4)
    dist = scipy.stats.lognorm(s=0.7, scale=1.2, loc=0.4)
    for a in (0.5, 1.0, 2.0, 5.0):
        m = lognorm_moments(params, a)
        assert m.cdf == pytest.approx(dist.cdf(a), abs=1e-12)
        pe, _ = scipy.integrate.quad(lambda x: x * dist.pdf(x), 0.4, a)
        assert m.partial_expectation == pytest.approx(pe, abs=1e-9)


def test_moments_rejects_nan():
    with pytest.raises(DomainError):
        lognorm_moments(ConsumptionParams(1.0, 1.0, 0.0), float("nan"))


@given(
    sigma=st.floats(0.1, 2.0),
    scale=st.floats(0.1, 5.0),
    loc=st.floats(0.0, 2.0),
    a1=st.floats(0.0, 20.0),
    a2=st.floats(0.0, 20.0),
)
@settings(max_examples=100)
def test_moments_monotone_in_a(sigma, scale, loc, a1, a2):
    params = ConsumptionParams(sigma, scale, loc)
    lo, hi = sorted((a1, a2))
    m_lo = lognorm_moments(params, lo)
    m_hi = lognorm_moments(params, hi)
    assert m_lo.cdf <= m_hi.cdf + 1e-15
    assert m_lo.partial_expectation <= m_hi.partial_expectation + 1e-12
    assert 0.0 <= m_lo.cdf <= 1.0
    assert m_lo.partial_expectation <= m_lo.mean + 1e-12


def test_sampler_empty_and_support():
    rng = np.random.default_rng(0)
    assert sample_base_consumption(ConsumptionParams(1.0, 1.0), 0, rng).size == 0
    x = sample_base_consumption(ConsumptionParams(0.5, 2.0, 1.0), 100_000, rng)
    assert x.min() > 1.0


def test_sampler_mean():
    rng = np.random.default_rng(42)
    params = ConsumptionParams(1.0, 1.0, 0.0)
    x = sample_base_consumption(params, 1_000_000, rng)
    se = math.sqrt(params.variance / x.size)
    assert abs(x.mean() - params.mean) < 3.0 * se


def test_sampler_reproducible():
    params = ConsumptionParams(0.9, 0.5, 0.1)
    a = sample_base_consumption(params, 1000, np.random.default_rng(7))
    b = sample_base_consumption(params, 1000, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_sampler_distribution_shape():
    rng = np.random.default_rng(11)
    params = ConsumptionParams(0.8, 1.5, 0.3)
    x = sample_base_consumption(params, 10_000, rng)
    stat = scipy.stats.kstest(x, scipy.stats.lognorm(s=0.8, scale=1.5, loc=0.3).cdf)
    assert stat.pvalue > 0.01


def test_fit_recovers_generator():
    rng = np.random.default_rng(0)
    truth = ConsumptionParams(0.8, 1.5, 0.3)
    fitted = fit_lognormal3(sample_base_consumption(truth, 100_000, rng))
    assert fitted.sigma == pytest.approx(truth.sigma, rel=0.05)
    assert fitted.scale == pytest.approx(truth.scale, rel=0.05)
    assert fitted.loc == pytest.approx(truth.loc, abs=0.05)


def test_fit_scale_equivariance():
    # scaling the data by c scales (scale, loc) by c and leaves sigma alone;
    # the profile search maps exactly, so this holds to roundoff
    rng = np.random.default_rng(3)
    x = sample_base_consumption(ConsumptionParams(0.6, 1.0, 0.2), 5000, rng)
    f1 = fit_lognormal3(x)
    f2 = fit_lognormal3(2.0 * x)
    assert f2.sigma == pytest.approx(f1.sigma, rel=1e-6)
    assert f2.scale == pytest.approx(2.0 * f1.scale, rel=1e-6)
    assert f2.loc == pytest.approx(2.0 * f1.loc, abs=1e-6)


def test_fit_rejects_degenerate_input():
    with pytest.raises(FitError):
        fit_lognormal3([2.0] * 50)
    with pytest.raises(FitError):
        fit_lognormal3(list(range(1, 20)))  # 19 samples
    with pytest.raises(DomainError):
        fit_lognormal3([1.0] * 30 + [-1.0])


def test_prior_samples_respect_domains():
    rng = np.random.default_rng(5)
    users = sample_user_types(DEFAULT_SYNTHETIC_PRIOR, 500, rng)
    assert len(users) == 500
    for u in users:
        assert 0.05 <= u.alpha <= 0.06
        assert u.params.sigma > 0
        assert 0 < u.params.scale <= DEFAULT_SYNTHETIC_PRIOR.cap_s
        assert u.params.loc >= 0


def test_rejection_gives_up():
    hopeless = CompoundPrior(
        sigma_prior=NormalPrior(-100.0, 1e-3),  # essentially never positive
        scale_prior=CauchyPrior(0.45, 0.1),
        loc_prior=ExponentialPrior(8.0),
        alpha_prior=UniformPrior(0.05, 0.06),
    )
    with pytest.raises(PriorError):
        sample_user_types(hopeless, 1, np.random.default_rng(0))


def test_fit_prior_location_recovery():
    rng = np.random.default_rng(1)
    params = [
        ConsumptionParams(
            0.5 + 1e-3 * rng.standard_normal(),
            1.0 + 0.1 * rng.random(),
            0.1 * rng.random(),
        )
        for _ in range(100)
    ]
    prior = fit_compound_prior(params)
    assert prior.sigma_prior.mean == pytest.approx(0.5, abs=1e-3)


def test_fit_prior_normal_recovery():
    rng = np.random.default_rng(2)
    sigmas = rng.normal(1.2, 0.3, size=5000)
    params = [
        ConsumptionParams(abs(s) + 1e-9, 1.0 + 0.1 * rng.random(), 0.1 * rng.random())
        for s in sigmas
    ]
    prior = fit_compound_prior(params)
    assert prior.sigma_prior.mean == pytest.approx(1.2, rel=0.03)
    assert prior.sigma_prior.std == pytest.approx(0.3, rel=0.03)


def test_fit_prior_cauchy_and_exponential():
    rng = np.random.default_rng(8)
    n = 5000
    scales = np.abs(0.45 + 0.1 * rng.standard_cauchy(n))
    locs = rng.exponential(1.0 / 8.0, n)
    params = [
        ConsumptionParams(1.0 + 0.1 * rng.standard_normal(), s, l)
        for s, l in zip(scales, locs)
    ]
    prior = fit_compound_prior(params, alphas=[0.051, 0.059, 0.055])
    assert isinstance(prior.scale_prior, CauchyPrior)
    assert isinstance(prior.loc_prior, ExponentialPrior)
    assert prior.scale_prior.loc == pytest.approx(0.45, rel=0.10)
    assert prior.scale_prior.scale == pytest.approx(0.1, rel=0.15)
    assert prior.loc_prior.rate == pytest.approx(8.0, rel=0.10)
    assert prior.alpha_prior.lo == 0.051
    assert prior.alpha_prior.hi == 0.059

    swapped = fit_compound_prior(params, cauchy_param="loc")
    assert isinstance(swapped.scale_prior, ExponentialPrior)
    assert isinstance(swapped.loc_prior, CauchyPrior)


def test_fit_prior_needs_enough_users():
    params = [ConsumptionParams(0.5 + 0.01 * i, 1.0, 0.1) for i in range(29)]
    with pytest.raises(FitError):
        fit_compound_prior(params)


def test_prior_json_round_trip(tmp_path):
    path = tmp_path / "prior.json"
    save_prior(DEFAULT_SYNTHETIC_PRIOR, path)
    loaded = load_prior(path)
    assert loaded == DEFAULT_SYNTHETIC_PRIOR
    # file is plain JSON with one object per parameter
    doc = json.loads(path.read_text())
    assert doc["sigma_prior"]["dist"] == "normal"


def test_params_csv_round_trip(tmp_path):
    rows = [
        ("u001", 17, ConsumptionParams(0.8123456789012345, 1.5, 0.3)),
        ("u002", 17, ConsumptionParams(1.1, 0.4567890123456789, 0.0)),
    ]
    path = tmp_path / "params.csv"
    write_params_csv(path, rows)
    assert read_params_csv(path) == rows
