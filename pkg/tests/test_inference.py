import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from gmcb.errors import EstimatorSingularityError, ParameterDomainError, RankError
from gmcb.inference import (
    ChainOutput,
    batch_means_se,
    bayes_estimates,
    credible_intervals,
    interval_hits,
    losses,
    mle,
    multivariate_ess,
)
from gmcb.model import Dataset, build_cholesky_view


def random_chain(rng, S=50, p=2, q=3):
    return ChainOutput(rng.normal(size=(S, p, q)), rng.normal(0, 0.3, (S, q * (q - 1) // 2)),
                       rng.uniform(0.5, 2.0, (S, q)), rng.uniform(0.5, 2, S), rng.uniform(0.5, 2, S))


def frozen_chain(rng, S=5, p=2, q=3):
    B = np.repeat(rng.normal(size=(1, p, q)), S, axis=0)
    d = np.repeat(rng.normal(0, 0.3, (1, q * (q - 1) // 2)), S, axis=0)
    g = np.repeat(rng.uniform(0.5, 2.0, (1, q)), S, axis=0)
    return ChainOutput(B, d, g, np.ones(S), np.ones(S))


def random_pd(rng, q):
    A = rng.normal(size=(q, q))
    return A @ A.T + q * np.eye(q) * rng.uniform(0.1, 1)


def ar1(rng, S, rho, d=1):
    x = np.empty((S, d))
    x[0] = rng.standard_normal(d) / math.sqrt(1 - rho ** 2)
    e = rng.standard_normal((S, d))
    for t in range(1, S):
        x[t] = rho * x[t - 1] + e[t]
    return x


def test_two_sample_scalar_hand_case():
    ch = ChainOutput(np.zeros((2, 1, 1)), np.zeros((2, 0)), np.array([[1.0], [3.0]]),
                     np.ones(2), np.ones(2))
    est = bayes_estimates(ch)
    assert est.Omega_F[0, 0] == pytest.approx(2 / 3)
    assert est.Omega_S[0, 0] == pytest.approx(1 / 2)


def test_frozen_chain_estimators_coincide(rng):
    ch = frozen_chain(rng)
    est = bayes_estimates(ch)
    Om = build_cholesky_view(ch.delta_matrices()[0], ch.gamma[0]).Omega
    assert np.allclose(est.B_F, ch.B[0]) and np.allclose(est.B_Q, ch.B[0])
    assert np.allclose(est.Omega_F, Om) and np.allclose(est.Omega_S, Om)
    lo, hi = est.ci_B
    assert np.allclose(lo, hi) and np.allclose(lo, ch.B[0])


def test_omega_reconstruction_matches_cholesky_view(rng):
    ch = random_chain(rng, S=6, q=4)
    Om = ch.omega_samples()
    Sig = ch.covariance_samples()
    for s in range(ch.S):
        view = build_cholesky_view(ch.delta_matrices()[s], ch.gamma[s])
        assert np.allclose(Om[s], view.Omega, atol=1e-12)
        assert np.allclose(Sig[s] @ Om[s], np.eye(4), atol=1e-10)


def test_estimates_positive_definite(rng):
    est = bayes_estimates(random_chain(rng, q=4))
    for M in (est.Omega_F, est.Omega_S):
        assert np.allclose(M, M.T) and np.all(np.linalg.eigvalsh(M) > 0)
    assert np.all(est.ci_Omega[0] <= est.ci_Omega[1])


def test_singular_mean_reported():
    ch = ChainOutput(np.zeros((2, 1, 2)), np.zeros((2, 1)), np.array([[1.0, 1e-14]] * 2),
                     np.ones(2), np.ones(2))
    with pytest.raises(EstimatorSingularityError, match="cond"):
        bayes_estimates(ch)


def test_chain_needs_two_samples():
    with pytest.raises(ParameterDomainError):
        ChainOutput(np.zeros((1, 1, 1)), np.zeros((1, 0)), np.ones((1, 1)), np.ones(1), np.ones(1))


def test_losses_zero_at_truth(rng):
    B, Om = rng.normal(size=(2, 3)), random_pd(rng, 3)
    assert losses((B, Om), (B, Om)) == pytest.approx((0, 0, 0, 0), abs=1e-12)


def test_stein_loss_hand_case():
    v = losses((np.zeros((1, 2)), 2 * np.eye(2)), (np.zeros((1, 2)), np.eye(2)))
    assert v.L_S == pytest.approx(2 - math.log(4))
    assert v.frob_Omega == pytest.approx(2.0)


def test_quadratic_loss_hand_case():
    Om = np.array([[2.0, 0.5], [0.5, 1.0]])
    dB = np.array([[1.0, -1.0]])
    v = losses((dB, Om), (np.zeros((1, 2)), Om))
    assert v.L_Q == pytest.approx(2 - 1 + 1)
    assert v.frob_B == pytest.approx(2.0)


def test_stein_loss_nonnegative(rng):
    for _ in range(100):
        a, b = random_pd(rng, 4), random_pd(rng, 4)
        assert losses((np.zeros((1, 4)), a), (np.zeros((1, 4)), b)).L_S > 0


def test_stein_loss_orthogonal_invariance(rng):
    for _ in range(20):
        a, b = random_pd(rng, 4), random_pd(rng, 4)
        Q = ortho_group.rvs(4, random_state=rng)
        z = np.zeros((1, 4))
        l1 = losses((z, a), (z, b)).L_S
        l2 = losses((z, Q @ a @ Q.T), (z, Q @ b @ Q.T)).L_S
        assert l1 == pytest.approx(l2, rel=1e-9, abs=1e-12)


def test_losses_bundle_and_errors(rng):
    ch = random_chain(rng)
    out = losses(bayes_estimates(ch, level=None), (np.zeros((2, 3)), np.eye(3)))
    assert set(out) == {"F", "QS"}
    with pytest.raises(ParameterDomainError):
        losses((np.zeros((1, 2)), -np.eye(2)), (np.zeros((1, 2)), np.eye(2)))
    with pytest.raises(ParameterDomainError):
        losses((np.zeros((1, 3)), np.eye(3)), (np.zeros((1, 2)), np.eye(2)))


def test_intervals_normal_quantiles(rng):
    S = 10 ** 4
    ch = ChainOutput(rng.standard_normal((S, 1, 1)), np.zeros((S, 0)), np.ones((S, 1)),
                     np.ones(S), np.ones(S))
    lo, hi = credible_intervals(ch, 0.95)["B"]
    assert lo[0, 0] == pytest.approx(-1.96, abs=0.05) and hi[0, 0] == pytest.approx(1.96, abs=0.05)
    hits = interval_hits((lo, hi), np.array([[0.0]]))
    assert hits.dtype == bool and hits[0, 0]
    with pytest.raises(ParameterDomainError):
        credible_intervals(ch, 1.0)


def test_ess_iid(rng):
    x = rng.standard_normal((10 ** 4, 3))
    assert multivariate_ess(x).ess / 10 ** 4 == pytest.approx(1.0, rel=0.1)


def test_ess_ar1(rng):
    S = 10 ** 5
    vals = [multivariate_ess(ar1(rng, S, 0.5)).ess / S for _ in range(3)]
    assert np.mean(vals) == pytest.approx(1 / 3, rel=0.15)


def test_ess_affine_invariance(rng):
    x = ar1(rng, 20000, 0.3, d=3)
    base = multivariate_ess(x).ess
    for _ in range(5):
        A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        y = x @ A.T + rng.normal(size=3)
        assert multivariate_ess(y).ess == pytest.approx(base, rel=1e-6)


def test_ess_warning_paths(rng):
    with pytest.warns(RuntimeWarning, match="unreliable"):
        multivariate_ess(rng.standard_normal((50, 3)))
    # perfectly alternating pairs make every batch mean of one coordinate identical
    S = 400
    x = np.column_stack([np.tile([1.0, -1.0], S // 2), rng.standard_normal(S)])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = multivariate_ess(x)
    assert out.repaired and any("jitter" in str(w.message) for w in caught)


def test_ess_chain_selection(rng):
    ch = random_chain(rng, S=1200)
    assert ch.flat_summary().shape == (1200, 6 + 6)
    assert ch.flat_summary("B").shape == (1200, 6)
    assert multivariate_ess(ch).ess > 0


def test_batch_means_se(rng):
    x = rng.standard_normal((40000, 2))
    se = batch_means_se(x)
    assert se == pytest.approx(np.full(2, 1 / 200), rel=0.15)
    y = ar1(rng, 40000, 0.5)
    assert batch_means_se(y)[0] == pytest.approx(math.sqrt(4 / 40000), rel=0.2)


def test_mle_hand_case():
    B, Om = mle(Dataset(np.array([[1.0], [2.0], [3.0]]), np.ones((3, 1))))
    assert B[0, 0] == pytest.approx(2.0) and Om[0, 0] == pytest.approx(1.5)


def test_mle_exact_fit_is_rank_error(rng):
    X = rng.normal(size=(10, 2))
    with pytest.raises(RankError):
        mle(Dataset(X @ rng.normal(size=(2, 3)), X))
    with pytest.raises(RankError):
        mle(Dataset(rng.normal(size=(2, 3)), rng.normal(size=(2, 2))))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_mle_row_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    X, Y = r.normal(size=(12, 2)), r.normal(size=(12, 3))
    perm = r.permutation(12)
    B1, O1 = mle(Dataset(Y, X))
    B2, O2 = mle(Dataset(Y[perm], X[perm]))
    assert np.allclose(B1, B2, atol=1e-10) and np.allclose(O1, O2, rtol=1e-9)
