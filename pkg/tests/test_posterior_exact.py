from __future__ import annotations

import numpy as np
import pytest

from herdbandit.posterior_exact import (
    GaussianPosterior,
    NotPositiveDefiniteError,
    augmented_feature,
    recover_params,
)


def batch_posterior(prior_mean, prior_precision, noise_variance, features, values):
    """Independent oracle: direct batch Bayesian linear regression solve."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    values = np.asarray(values, dtype=float)
    precision = prior_precision + features.T @ features / noise_variance
    covariance = np.linalg.inv(precision)
    mean = covariance @ (features.T @ values / noise_variance
                         + prior_precision @ prior_mean)
    return mean, covariance


def test_init_identity_prior() -> None:
    post = GaussianPosterior(np.zeros(3), np.eye(3), 1.0)
    np.testing.assert_allclose(post.covariance, np.eye(3))
    np.testing.assert_allclose(post.mean, np.zeros(3))


def test_init_scaled_prior() -> None:
    post = GaussianPosterior(np.ones(2), 2.0 * np.eye(2), 1.0)
    np.testing.assert_allclose(post.covariance, 0.5 * np.eye(2))
    np.testing.assert_allclose(post.mean, np.ones(2))


def test_init_rejects_asymmetric_precision() -> None:
    bad = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError, match="symmetric"):
        GaussianPosterior(np.zeros(2), bad, 1.0)


def test_init_rejects_indefinite_precision() -> None:
    with pytest.raises(NotPositiveDefiniteError, match="positive-definite"):
        GaussianPosterior(np.zeros(2), np.diag([1.0, -1.0]), 1.0)


def test_init_rejects_nonpositive_noise() -> None:
    with pytest.raises(ValueError, match="noise variance"):
        GaussianPosterior(np.zeros(2), np.eye(2), 0.0)


def test_single_observation_matches_hand_solve() -> None:
    post = GaussianPosterior(np.zeros(2), np.eye(2), 1.0)
    post = post.update(np.array([1.0, 0.0]), 1.0)
    np.testing.assert_allclose(post.covariance, np.diag([0.5, 1.0]), atol=1e-12)
    np.testing.assert_allclose(post.mean, [0.5, 0.0], atol=1e-12)


def test_zero_observations_equals_init_state() -> None:
    post = GaussianPosterior(np.array([1.0, -2.0]), 3.0 * np.eye(2), 2.0)
    np.testing.assert_allclose(post.mean, [1.0, -2.0])
    np.testing.assert_allclose(post.covariance, np.eye(2) / 3.0)
    assert post.n_observations == 0


def test_update_is_nonmutating_value_semantics() -> None:
    post = GaussianPosterior(np.zeros(2), np.eye(2), 1.0)
    updated = post.update(np.array([1.0, 1.0]), 2.0)
    np.testing.assert_allclose(post.covariance, np.eye(2))
    assert updated.n_observations == 1 and post.n_observations == 0


def test_repeated_observation_matches_batch_of_two() -> None:
    x = np.array([0.7, -0.3])
    post = GaussianPosterior(np.zeros(2), np.eye(2), 1.0)
    post = post.update(x, 1.2).update(x, 1.2)
    mean, cov = batch_posterior(np.zeros(2), np.eye(2), 1.0, [x, x], [1.2, 1.2])
    np.testing.assert_allclose(post.mean, mean, atol=1e-10)
    np.testing.assert_allclose(post.covariance, cov, atol=1e-10)


@pytest.mark.parametrize("n_obs", [1, 7, 50])
def test_sequential_equals_batch(n_obs: int) -> None:
    rng = np.random.default_rng(42 + n_obs)
    dim = 5
    prior_mean = rng.normal(size=dim)
    raw = rng.normal(size=(dim, dim))
    prior_precision = raw @ raw.T + dim * np.eye(dim)
    noise_variance = 0.7
    features = rng.normal(size=(n_obs, dim))
    values = rng.normal(size=n_obs)

    post = GaussianPosterior(prior_mean, prior_precision, noise_variance)
    for x, v in zip(features, values):
        post = post.update(x, v)
    mean, cov = batch_posterior(prior_mean, prior_precision, noise_variance,
                                features, values)
    assert np.linalg.norm(post.mean - mean) < 1e-8
    assert np.linalg.norm(post.covariance - cov) < 1e-8


def test_posterior_contraction() -> None:
    rng = np.random.default_rng(3)
    post = GaussianPosterior(np.zeros(4), np.eye(4), 1.0)
    traces = [np.trace(post.covariance)]
    for _ in range(30):
        post = post.update(rng.normal(size=4), rng.normal())
        traces.append(np.trace(post.covariance))
    assert all(b <= a + 1e-12 for a, b in zip(traces, traces[1:]))


def test_permutation_invariance() -> None:
    rng = np.random.default_rng(11)
    features = rng.normal(size=(20, 3))
    values = rng.normal(size=20)
    order = rng.permutation(20)

    first = GaussianPosterior(np.zeros(3), np.eye(3), 1.0)
    second = GaussianPosterior(np.zeros(3), np.eye(3), 1.0)
    for i in range(20):
        first = first.update(features[i], values[i])
        second = second.update(features[order[i]], values[order[i]])
    assert np.linalg.norm(first.mean - second.mean) < 1e-8
    assert np.linalg.norm(first.covariance - second.covariance) < 1e-8


def test_sample_near_deterministic_with_tight_posterior() -> None:
    post = GaussianPosterior(np.array([5.0, 5.0]), 1e12 * np.eye(2), 1.0)
    draw = post.sample(np.random.default_rng(0))
    assert np.all(np.abs(draw - 5.0) < 1e-4)


def test_sample_monte_carlo_mean() -> None:
    rng = np.random.default_rng(5)
    post = GaussianPosterior(np.zeros(3), np.eye(3), 1.0)
    for _ in range(4):
        post = post.update(rng.normal(size=3), rng.normal())
    n = 100_000
    draws = np.stack([post.sample(rng) for _ in range(n)])
    tol = 4.0 * np.sqrt(np.max(np.diag(post.covariance))) / np.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - post.mean) < tol)


def test_sample_is_reproducible() -> None:
    post = GaussianPosterior(np.zeros(2), np.eye(2), 1.0)
    a = post.sample(np.random.default_rng(123))
    b = post.sample(np.random.default_rng(123))
    np.testing.assert_array_equal(a, b)


def test_sample_covariance_matches_posterior() -> None:
    rng = np.random.default_rng(17)
    post = GaussianPosterior(np.zeros(2), np.eye(2), 0.5)
    post = post.update(np.array([1.0, 0.5]), 0.3)
    draws = np.stack([post.sample(rng) for _ in range(50_000)])
    np.testing.assert_allclose(np.cov(draws.T), post.covariance, atol=0.02)


def test_augmented_feature_layout() -> None:
    out = augmented_feature(4.5, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(out, [4.5, 1.0, 2.0])


def test_augmented_feature_rejects_nan() -> None:
    with pytest.raises(ValueError, match="non-finite"):
        augmented_feature(np.nan, np.array([1.0]))


def test_recover_params_direct() -> None:
    alpha, theta = recover_params(np.array([0.5, 1.0, 2.0]))
    assert alpha == pytest.approx(0.5)
    np.testing.assert_allclose(theta, [2.0, 4.0])


def test_recover_params_zero_alpha_identity() -> None:
    alpha, theta = recover_params(np.array([0.0, 3.0, -1.0]))
    assert alpha == 0.0
    np.testing.assert_allclose(theta, [3.0, -1.0])


def test_recover_params_clamps_near_singularity() -> None:
    alpha, theta = recover_params(np.array([0.999999, 1.0, 1.0]), eps_singular=1e-3)
    assert alpha == pytest.approx(0.999)
    np.testing.assert_allclose(theta, [1000.0, 1000.0])


def test_recover_params_clamps_negative() -> None:
    alpha, theta = recover_params(np.array([-2.0, 1.0]))
    assert alpha == 0.0
    np.testing.assert_allclose(theta, [1.0])


def test_recover_params_error_when_clamping_disabled() -> None:
    with pytest.raises(ValueError, match="singular"):
        recover_params(np.array([0.9999, 1.0]), clamp=False)


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 0.75, 0.99])
def test_recover_params_round_trip(alpha: float) -> None:
    theta = np.array([0.3, -1.1, 2.2])
    theta_tilde = np.concatenate([[alpha], (1.0 - alpha) * theta])
    alpha_out, theta_out = recover_params(theta_tilde)
    assert alpha_out == pytest.approx(alpha)
    np.testing.assert_allclose(theta_out, theta, atol=1e-12)
