import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from oprisk_windows.severity import SeverityError, SeveritySpec, cdf, moments, pdf, ppf, sample, validate


def quad_moments(spec):
    """Raw moments by adaptive quadrature of x·f and x²·f."""
    f = lambda x: pdf(spec, x)  # noqa: E731
    m0 = integrate.quad(f, 0, np.inf, limit=400)[0]
    m1 = integrate.quad(lambda x: x * f(x), 0, np.inf, limit=400)[0]
    m2 = integrate.quad(lambda x: x * x * f(x), 0, np.inf, limit=400)[0]
    return m0, m1, m2


def test_gamma_moments_match_quadrature():
    spec = SeveritySpec.gamma(20, 3)
    m = moments(spec)
    _, m1, m2 = quad_moments(spec)
    assert m.mean == pytest.approx(60.0)
    assert m.variance == pytest.approx(180.0)
    assert m.second_moment == pytest.approx(3780.0)
    assert m1 == pytest.approx(60.0, rel=1e-8)
    assert m2 == pytest.approx(3780.0, rel=1e-8)


def test_lognormal_mean_two():
    spec = SeveritySpec.lognormal(math.sqrt(2 * math.log(2)))
    assert moments(spec).mean == pytest.approx(2.0, rel=1e-12)
    assert quad_moments(spec)[1] == pytest.approx(2.0, rel=1e-7)


def test_gpd_exponential_limit():
    m = moments(SeveritySpec.gpd(0.0, 1.0))
    assert (m.mean, m.variance) == (1.0, 1.0)


def test_weibull_mean():
    spec = SeveritySpec.weibull(5, 0.4)
    assert moments(spec).mean == pytest.approx(16.6167, abs=1e-3)
    assert quad_moments(spec)[1] == pytest.approx(moments(spec).mean, rel=1e-6)


@pytest.mark.parametrize(
    "family,params",
    [
        ("gpd", {"k": 0.6, "sigma": 1.0}),
        ("gpd", {"k": -0.1, "sigma": 1.0}),
        ("burr", {"alpha": 1.0, "c": 1.0, "k": 1.5}),
        ("gamma", {"alpha": 0.0, "beta": 1.0}),
        ("weibull", {"a": 1.0, "b": -1.0}),
        ("lognormal", {"mu": 0.0, "sigma": 0.0}),
        ("constant", {"value": 0.0}),
    ],
)
def test_invalid_specs_raise(family, params):
    spec = SeveritySpec(family, params)
    with pytest.raises(SeverityError):
        validate(spec)
    with pytest.raises(SeverityError):
        moments(spec)


def test_valid_fig_spec():
    validate(SeveritySpec.gpd(0.15, 50))


def test_unknown_family_and_missing_param():
    with pytest.raises(SeverityError):
        SeveritySpec("pareto", {"k": 1.0})
    with pytest.raises(SeverityError):
        SeveritySpec("gamma", {"alpha": 1.0})


def test_pdf_values():
    assert pdf(SeveritySpec.gamma(1, 2), 1e-12) == pytest.approx(0.5, rel=1e-9)
    assert pdf(SeveritySpec.burr(1, 2, 2), 1.0) == pytest.approx(0.5)
    total = integrate.quad(lambda x: pdf(SeveritySpec.gpd(0.15, 50), x), 0, np.inf, limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


def test_pdf_rejects_nonpositive():
    with pytest.raises(ValueError):
        pdf(SeveritySpec.gamma(2, 1), [1.0, 0.0])


def test_serialization_round_trip():
    spec = SeveritySpec.burr(50, 2, 3)
    assert SeveritySpec.from_dict(spec.to_dict()) == spec
    assert SeveritySpec.from_dict({"family": "lognormal", "params": {"sigma": 1.0}})["mu"] == 0.0


def test_gamma_sample_mean():
    x = sample(SeveritySpec.gamma(20, 3), np.random.default_rng(11), 10**6)
    assert abs(x.mean() - 60) < 4 * math.sqrt(180 / 1e6)


def test_gpd_sample_variance():
    spec = SeveritySpec.gpd(0.15, 50)
    v = moments(spec).variance
    assert v == pytest.approx(2500 / (0.85**2 * 0.7))
    x = sample(spec, np.random.default_rng(5), 10**6)
    # bootstrap SE of the sample variance
    rng = np.random.default_rng(9)
    boots = [x[rng.integers(0, x.size, x.size)].var(ddof=1) for _ in range(30)]
    assert abs(x.var(ddof=1) - v) < 5 * np.std(boots, ddof=1)


def test_sampling_deterministic():
    spec = SeveritySpec.weibull(5, 0.4)
    a = sample(spec, np.random.default_rng(3), 1000)
    b = sample(spec, np.random.default_rng(3), 1000)
    assert np.array_equal(a, b)


def test_constant_family():
    spec = SeveritySpec.constant(7.0)
    m = moments(spec)
    assert (m.mean, m.variance, m.second_moment) == (7.0, 0.0, 49.0)
    assert np.all(sample(spec, np.random.default_rng(0), 5) == 7.0)
    assert cdf(spec, [6.9, 7.0]).tolist() == [0.0, 1.0]
    with pytest.raises(SeverityError):
        pdf(spec, 1.0)


KS_SPECS = [
    SeveritySpec.gamma(2.5, 3.0),
    SeveritySpec.lognormal(1.2, 0.5),
    SeveritySpec.gpd(0.3, 10.0),
    SeveritySpec.weibull(5.0, 0.4),
    SeveritySpec.burr(50.0, 2.0, 3.0),
]


@pytest.mark.parametrize("spec", KS_SPECS, ids=lambda s: s.family)
def test_sampler_matches_cdf(spec):
    n = 10**5
    x = sample(spec, np.random.default_rng(2024), n)
    d = stats.kstest(x, lambda t: cdf(spec, t)).statistic
    assert d < 1.628 / math.sqrt(n)  # asymptotic 1% critical value


@pytest.mark.parametrize("spec", KS_SPECS, ids=lambda s: s.family)
def test_ppf_inverts_cdf(spec):
    u = np.linspace(0.001, 0.999, 41)
    assert np.allclose(cdf(spec, ppf(spec, u)), u, rtol=1e-9, atol=1e-12)


def _spec_strategy():
    gamma = st.builds(SeveritySpec.gamma, st.floats(0.5, 30), st.floats(0.1, 10))
    logn = st.builds(SeveritySpec.lognormal, st.floats(0.1, 1.2), st.floats(-1, 2))
    gpd = st.builds(SeveritySpec.gpd, st.floats(0.0, 0.3), st.floats(0.5, 50))
    weib = st.builds(SeveritySpec.weibull, st.floats(0.5, 10), st.floats(0.5, 3))
    burr = st.builds(
        lambda a, c, extra: SeveritySpec.burr(a, c, 4.0 / c + extra),
        st.floats(0.5, 10),
        st.floats(1.0, 4.0),
        st.floats(0.2, 3.0),
    )
    return st.one_of(gamma, logn, gpd, weib, burr)


@settings(max_examples=100, deadline=None)
@given(_spec_strategy())
def test_quadrature_moments_property(spec):
    m = moments(spec)
    m0, m1, m2 = quad_moments(spec)
    assert m0 == pytest.approx(1.0, rel=1e-4)
    assert m1 == pytest.approx(m.mean, rel=1e-4)
    assert m2 == pytest.approx(m.second_moment, rel=1e-4)
    assert m.mean > 0 and m.variance >= 0
    assert m.second_moment - m.mean**2 == pytest.approx(m.variance, rel=1e-12, abs=1e-12 * m.second_moment)
