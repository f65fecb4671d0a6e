import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gmcb.distributions import (
    GaussianByPrecision,
    StructuredGaussianSpec,
    TiltedStableParams,
    exp_power_logdensity,
    exp_power_rvs,
    sample_gaussian_by_precision,
    sample_gaussian_structured,
    sample_tilted_stable,
    sample_two_component_gamma,
    tilted_stable_rvs,
    two_gamma_log_weights,
)
from gmcb.errors import NotPositiveDefiniteError, ParameterDomainError

from oracles import energy_pvalue, ep_logdensity_ref


def laplace_check(w, t, expected):
    v = np.exp(-t * w)
    se = v.std() / math.sqrt(v.size)
    return abs(v.mean() - expected) / se


# ---------------------------------------------------------------- tilted stable


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_untilted_laplace_transform(rng, t):
    w = sample_tilted_stable(TiltedStableParams(0.5, 0.0), rng, size=10**6)
    assert laplace_check(w, t, math.exp(-t ** 0.5)) < 4.0


def test_untilted_laplace_at_one_is_exp_minus_one(rng):
    w = sample_tilted_stable(TiltedStableParams(0.5, 0.0), rng, size=10**6)
    assert abs(np.exp(-w).mean() - math.exp(-1.0)) < 4 * 0.5 / 1000


@pytest.mark.parametrize("a,lam", [(0.5, 4.0), (0.3, 0.2), (0.9, 10.0), (0.75, 1.0)])
def test_tilted_laplace_transform(rng, a, lam):
    w = tilted_stable_rvs(a, np.full(10**6, lam), rng)
    assert laplace_check(w, 1.0, math.exp(lam ** a - (lam + 1.0) ** a)) < 4.0


def test_near_boundary_stability_is_finite(rng):
    w = sample_tilted_stable(TiltedStableParams(0.999, 1.0), rng, size=10**5)
    assert np.all(np.isfinite(w)) and np.all(w > 0)


@pytest.mark.parametrize("a", [0.0, 1.0, 1.5, -0.2])
def test_invalid_stability_rejected(a):
    with pytest.raises(ParameterDomainError):
        TiltedStableParams(a, 1.0)


def test_invalid_tilt_rejected(rng):
    with pytest.raises(ParameterDomainError):
        TiltedStableParams(0.5, -1.0)
    with pytest.raises(ParameterDomainError):
        tilted_stable_rvs(0.5, np.inf, rng)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_generators_deterministic(seed):
    draws = []
    for _ in range(2):
        g = np.random.default_rng(seed)
        draws.append(np.concatenate([
            tilted_stable_rvs(0.4, np.linspace(0, 3, 7), g),
            exp_power_rvs(1.0, 0.7, 1.0, g, size=5),
            sample_gaussian_by_precision(GaussianByPrecision([1.0, 0.0], [[2, 1], [1, 2]]), g),
        ]))
    assert np.array_equal(draws[0], draws[1])


# ---------------------------------------------------------------- Gaussians


def gaussian_draws(spec, rng, n):
    return np.array([sample_gaussian_by_precision(spec, rng) for _ in range(n)])


def test_precision_sampler_standard_normal(rng):
    x = gaussian_draws(GaussianByPrecision(np.zeros(2), np.eye(2)), rng, 10**5)
    assert np.all(np.abs(x.mean(axis=0)) < 3 / math.sqrt(10**5) * 1.5)


def test_precision_sampler_two_by_two(rng):
    Q = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = gaussian_draws(GaussianByPrecision([1.0, 1.0], Q), rng, 10**5)
    cov = np.linalg.inv(Q)
    se = np.sqrt(np.diag(cov) / 10**5)
    assert np.all(np.abs(x.mean(axis=0) - 1.0 / 3.0) < 4 * se)
    assert np.allclose(np.cov(x.T), cov, atol=0.01)


def test_precision_sampler_scalar(rng):
    x = gaussian_draws(GaussianByPrecision([8.0], [[4.0]]), rng, 20000)[:, 0]
    assert stats.kstest(x, stats.norm(2.0, 0.5).cdf).pvalue > 0.01


def test_precision_sampler_reports_pivot(rng):
    Q = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError) as info:
        sample_gaussian_by_precision(GaussianByPrecision(np.zeros(3), Q), rng)
    assert info.value.pivot == 3


def test_precision_symmetry_tolerance():
    Q = np.array([[2.0, 1.0], [1.0 + 1e-13, 2.0]])
    spec = GaussianByPrecision([0.0, 0.0], Q)
    assert np.array_equal(spec.precision, spec.precision.T)
    with pytest.raises(ParameterDomainError):
        GaussianByPrecision([0.0, 0.0], [[2.0, 1.0], [1.1, 2.0]])


def test_structured_without_data_rows_is_prior(rng):
    A = np.array([0.5, 2.0, 3.0])
    spec = StructuredGaussianSpec(rhs=np.empty(0), design=np.empty((0, 3)), prior_cov_diag=A)
    x = np.array([sample_gaussian_structured(spec, rng) for _ in range(40000)])
    assert np.allclose(x.var(axis=0), A, rtol=0.04)
    assert np.all(np.abs(x.mean(axis=0)) < 4 * np.sqrt(A / 40000))


def structured_target():
    Phi = np.array([[0.7, -1.2, 0.4]])
    A = np.array([1.5, 0.6, 2.2])
    alpha = np.array([0.9])
    Q = Phi.T @ Phi + np.diag(1.0 / A)
    return Phi, A, alpha, Q, np.linalg.solve(Q, Phi.T @ alpha)


def test_structured_moments_match_dense(rng):
    Phi, A, alpha, Q, mean = structured_target()
    spec = StructuredGaussianSpec(rhs=alpha, design=Phi, prior_cov_diag=A)
    x = np.array([sample_gaussian_structured(spec, rng) for _ in range(10**5)])
    cov = np.linalg.inv(Q)
    se = np.sqrt(np.diag(cov) / 10**5)
    assert np.all(np.abs(x.mean(axis=0) - mean) < 4 * se)
    assert np.allclose(np.cov(x.T), cov, atol=0.02)


def test_structured_with_square_factor(rng):
    K = np.array([[1.0, 0.0], [0.5, 0.8]])
    Phi = np.array([[1.0, 2.0], [0.3, -0.4], [2.0, 1.0]])
    alpha = np.array([0.5, -1.0, 2.0])
    spec = StructuredGaussianSpec(rhs=alpha, design=Phi, prior_cov_factor=K)
    Q = Phi.T @ Phi + np.linalg.inv(K @ K.T)
    x = np.array([sample_gaussian_structured(spec, rng) for _ in range(40000)])
    assert np.allclose(x.mean(axis=0), np.linalg.solve(Q, Phi.T @ alpha), atol=0.02)
    assert np.allclose(np.cov(x.T), np.linalg.inv(Q), atol=0.01)


def test_structured_and_precision_samplers_agree(rng):
    Phi, A, alpha, Q, _ = structured_target()
    spec_s = StructuredGaussianSpec(rhs=alpha, design=Phi, prior_cov_diag=A)
    spec_p = GaussianByPrecision(Phi.T @ alpha, Q)
    passes = 0
    for _ in range(20):
        xs = np.array([sample_gaussian_structured(spec_s, rng) for _ in range(300)])
        xp = gaussian_draws(spec_p, rng, 300)
        passes += energy_pvalue(xs, xp, rng) > 0.01
    assert passes >= 19


# ---------------------------------------------------------------- exponential power


def test_exp_power_alpha_two_is_unit_normal():
    # a=2, s=1, g=1 gives exp(-x^2/2) with constant 1/sqrt(2 pi)
    x = np.array([0.0, 1.0, -3.0])
    assert np.allclose(exp_power_logdensity(x, 1.0, 2.0, 1.0), stats.norm.logpdf(x), atol=1e-13)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("g", [0.5, 1.0, 4.0])
def test_exp_power_normalised(lam, alpha, g):
    f = (lambda x: math.exp(exp_power_logdensity(x, lam, alpha, g)))
    # integrate both halves to the point where the tail is below 1e-16
    hi = (2 * g / lam * 60.0) ** (1.0 / alpha)
    val = 2.0 * integrate.quad(f, 0.0, hi, epsabs=1e-13, epsrel=1e-12, limit=500)[0]
    assert abs(val - 1.0) < 1e-8


def test_exp_power_normalised_on_window():
    # (0.5, 1.3, 2.0) still has about 1.2e-7 of mass beyond |x| = 40
    f = (lambda x: math.exp(exp_power_logdensity(x, 0.5, 1.3, 2.0)))
    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=500)
    window = integrate.quad(f, -40, 40, points=[0.0], **opts)[0]
    tail = 2.0 * integrate.quad(f, 40, np.inf, **opts)[0]
    line = 2.0 * integrate.quad(f, 0, np.inf, **opts)[0]
    assert abs(line - 1.0) < 1e-8
    assert abs(window + tail - 1.0) < 1e-8


@given(st.floats(-50, 50), st.floats(0.05, 20), st.floats(0.3, 4.0), st.floats(0.05, 20))
@settings(max_examples=100, deadline=None)
def test_exp_power_symmetric_and_matches_reference(x, lam, alpha, g):
    a = exp_power_logdensity(x, lam, alpha, g)
    assert a == exp_power_logdensity(-x, lam, alpha, g)
    assert math.isfinite(a)
    assert abs(a - ep_logdensity_ref(x, lam, alpha, g)) < 1e-9 * max(1.0, abs(a))


def test_exp_power_domain():
    with pytest.raises(ParameterDomainError):
        exp_power_logdensity(1.0, 0.0, 1.0, 1.0)


@pytest.mark.parametrize("lam,alpha,g", [(1.0, 0.6, 1.0), (3.0, 1.7, 0.5)])
def test_exp_power_rvs_matches_density(rng, lam, alpha, g):
    x = exp_power_rvs(lam, alpha, g, rng, size=50000)
    # |x|^a is Gamma(1/a, rate lam/(2g)); compare against the quadrature cdf
    f = (lambda t: math.exp(exp_power_logdensity(t, lam, alpha, g)))

    def cdf(v):
        return np.array([0.5 + math.copysign(integrate.quad(f, 0, abs(t))[0], t) for t in v])

    xs = np.sort(x)[::250]
    emp = (np.arange(x.size)[::250] + 1) / x.size
    assert np.max(np.abs(cdf(xs) - emp)) < 0.012


# ---------------------------------------------------------------- gamma mixtures


def test_two_gamma_identical_components(rng):
    x = sample_two_component_gamma(0.0, 2.0, 3.0, np.zeros(10**5), 2.0, 3.0, rng)
    assert abs(x.mean() - 2.0 / 3.0) < 4 * math.sqrt(2.0 / 9.0 / 10**5)
    assert stats.kstest(x, stats.gamma(2.0, scale=1 / 3.0).cdf).pvalue > 0.01


def test_two_gamma_degenerate_weight(rng):
    x = sample_two_component_gamma(-1e9, 1e4, 1.0, np.zeros(10**4), 1.0, 1e4, rng)
    assert np.all(x < 0.1)
    y = sample_two_component_gamma(0.0, 1e4, 1.0, np.full(10**4, -np.inf), 1.0, 1e4, rng)
    assert np.all(y > 100)


def test_two_gamma_weights_match_quadrature(rng):
    # one lambda site: B=1, gamma=1, alpha=1, mixes (0.1, 1) / (2, 0.01)
    e1, f1, e2, f2 = 0.1, 1.0, 2.0, 0.01
    load = 0.5
    l1, l2 = two_gamma_log_weights(e1, f1, e2, f2, 1.0, load)
    w1 = 1.0 / (1.0 + math.exp(l2 - l1))
    mix_mean = w1 * (e1 + 1) / (f1 + load) + (1 - w1) * (e2 + 1) / (f2 + load)

    def prior(x):
        return 0.5 * (stats.gamma.pdf(x, e1, scale=1 / f1) + stats.gamma.pdf(x, e2, scale=1 / f2))

    k = (lambda x: prior(x) * x * math.exp(-x * load))
    opts = dict(limit=500, epsabs=0.0, epsrel=1e-11)
    z = sum(integrate.quad(k, a, b, **opts)[0] for a, b in ((0, 1), (1, 50), (50, np.inf)))
    m = sum(integrate.quad(lambda x: x * k(x), a, b, **opts)[0]
            for a, b in ((0, 1), (1, 50), (50, np.inf)))
    assert abs(mix_mean - m / z) < 5e-4 * abs(m / z)
    x = sample_two_component_gamma(l1, e1 + 1, f1 + load, np.full(10**6, l2), e2 + 1, f2 + load, rng)
    assert abs(x.mean() - mix_mean) < 4 * x.std() / 1000
