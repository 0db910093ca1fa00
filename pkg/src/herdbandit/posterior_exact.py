"""Closed-form Gaussian posterior over the augmented parameter [a; (1-a)*theta].

Stacking the historical rating on top of the feature vector makes the biased
feedback model linear in a single augmented parameter vector, so a Gaussian
prior stays Gaussian after every observation. The belief is maintained in
precision form (prior precision plus accumulated outer products), which keeps
sequential updates exactly equal to a batch solve and avoids inverse drift.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

EPS_SINGULAR = 1e-3
_SYMMETRY_TOL = 1e-9


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be symmetric positive-definite is not."""


def augmented_feature(historical_rating: float, features: np.ndarray) -> np.ndarray:
    """Stack an arm's visible rating on top of its feature vector."""
    features = np.asarray(features, dtype=float)
    out = np.empty(features.size + 1)
    out[0] = historical_rating
    out[1:] = features
    if not np.all(np.isfinite(out)):
        raise ValueError("augmented feature contains non-finite entries")
    return out


def _check_spd(matrix: np.ndarray, what: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NotPositiveDefiniteError(f"{what} must be a square matrix")
    asym = np.max(np.abs(matrix - matrix.T)) if matrix.size else 0.0
    if asym > _SYMMETRY_TOL:
        raise NotPositiveDefiniteError(
            f"{what} is not symmetric (max asymmetry {asym:.3e})"
        )
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive-definite") from exc
    return matrix


class GaussianPosterior:
    """Sequentially updated Gaussian belief, exposed as (mean, covariance).

    Parameters
    ----------
    prior_mean : array of shape (p,)
        Mean of the Gaussian prior.
    prior_precision : array of shape (p, p)
        Inverse covariance of the prior; must be symmetric positive-definite.
    noise_variance : float
        Known observation-noise variance of the linear-Gaussian likelihood.

    Instances behave as values: ``update`` returns a new posterior and never
    mutates the receiver, so states are safe to hand between threads.
    """

    __slots__ = ("prior_mean", "prior_precision", "noise_variance",
                 "_precision", "_shift", "n_observations")

    def __init__(
        self,
        prior_mean: np.ndarray,
        prior_precision: np.ndarray,
        noise_variance: float,
    ) -> None:
        prior_mean = np.asarray(prior_mean, dtype=float)
        prior_precision = _check_spd(prior_precision, "prior precision")
        if prior_mean.shape != (prior_precision.shape[0],):
            raise ValueError("prior mean and precision dimensions disagree")
        if not noise_variance > 0.0:
            raise ValueError(f"noise variance must be positive, got {noise_variance}")
        self.prior_mean = prior_mean
        self.prior_precision = prior_precision
        self.noise_variance = float(noise_variance)
        self._precision = prior_precision.copy()
        # Accumulates (1/noise_var) * sum(V * x) + prior_precision @ prior_mean.
        self._shift = prior_precision @ prior_mean
        self.n_observations = 0

    @property
    def dim(self) -> int:
        return int(self.prior_mean.size)

    def _cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self._precision)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(
                "posterior precision lost positive-definiteness "
                f"after {self.n_observations} observations "
                f"(diag min {np.min(np.diag(self._precision)):.3e})"
            ) from exc

    @property
    def mean(self) -> np.ndarray:
        chol = self._cholesky()
        return cho_solve((chol, True), self._shift)

    @property
    def covariance(self) -> np.ndarray:
        chol = self._cholesky()
        cov = cho_solve((chol, True), np.eye(self.dim))
        return (cov + cov.T) / 2.0

    def update(self, feature: np.ndarray, value: float) -> "GaussianPosterior":
        """Posterior after appending one observation ``value ~ N(feature @ w, s2)``."""
        feature = np.asarray(feature, dtype=float)
        if feature.shape != (self.dim,):
            raise ValueError(
                f"feature has shape {feature.shape}, expected ({self.dim},)"
            )
        out = GaussianPosterior.__new__(GaussianPosterior)
        out.prior_mean = self.prior_mean
        out.prior_precision = self.prior_precision
        out.noise_variance = self.noise_variance
        out._precision = self._precision + np.outer(feature, feature) / self.noise_variance
        out._shift = self._shift + (value / self.noise_variance) * feature
        out.n_observations = self.n_observations + 1
        return out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw from N(mean, covariance) via the precision Cholesky factor."""
        chol = self._cholesky()
        mean = cho_solve((chol, True), self._shift)
        z = rng.standard_normal(self.dim)
        # precision = L L^T  =>  mean + L^{-T} z has covariance precision^{-1}
        return mean + solve_triangular(chol, z, lower=True, trans="T")


def recover_params(
    theta_tilde: np.ndarray,
    eps_singular: float = EPS_SINGULAR,
    clamp: bool = True,
) -> tuple[float, np.ndarray]:
    """Split an augmented sample into (conformity, preference vector).

    The first entry is the conformity level and the rest is the preference
    vector scaled by one minus conformity, so recovery divides by that
    factor. The first entry is clamped into ``[0, 1 - eps_singular]`` before
    dividing; with ``clamp=False`` a value at or beyond the singular point
    raises instead.
    """
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    raw = float(theta_tilde[0])
    if not clamp and raw >= 1.0 - eps_singular:
        raise ValueError(
            f"conformity recovery is singular: leading entry {raw:.6f} >= "
            f"{1.0 - eps_singular:.6f} and clamping is disabled"
        )
    alpha = min(max(raw, 0.0), 1.0 - eps_singular)
    theta = theta_tilde[1:] / (1.0 - alpha)
    return alpha, theta
