"""Three-stage Gibbs sampler for the joint posterior over (theta, alpha, sigma).

Each sweep draws the preference vector, the conformity level, and the
per-arm noise scales from their exact full conditionals, all of which are
conjugate: conditioned on the other two blocks the feedback model is a
linear-Gaussian regression in the remaining one, and the noise variances
are inverse-gamma. The conditionals depend on the history only through
per-arm sums, so sweeps cost the same no matter how long the history is.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf, dpotrs, dtrtrs
from scipy.special import ndtr, ndtri

from .env import DecisionRecord, ModelParams
from .posterior_exact import EPS_SINGULAR, _check_spd

_CDF_FLOOR = 1e-15


@dataclass(frozen=True)
class GibbsConfig:
    """Priors and chain length for the three-stage sampler.

    The conformity prior defaults to a Normal(0.5, 1) truncated to [0, 1];
    set ``alpha_truncated=False`` (with mean 0, variance 1) to reproduce an
    untruncated standard-normal prior instead. The noise prior is an
    inverse-gamma on each arm's noise *variance*. ``sample_alpha`` /
    ``sample_sigma`` hold the corresponding block fixed at its value in the
    chain state, for conditional-distribution studies.
    """

    dim: int
    n_arms: int
    n_iterations: int = 100
    burn_in: int = 0
    theta_prior_mean: np.ndarray | None = None
    theta_prior_cov: np.ndarray | None = None
    alpha_prior_mean: float = 0.5
    alpha_prior_var: float = 1.0
    alpha_truncated: bool = True
    sigma_prior_shape: float = 2.0
    sigma_prior_scale: float = 2.0
    sample_alpha: bool = True
    sample_sigma: bool = True

    def __post_init__(self) -> None:
        if self.dim < 1 or self.n_arms < 1:
            raise ValueError("dim and n_arms must be >= 1")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.alpha_prior_var <= 0.0:
            raise ValueError("alpha prior variance must be positive")
        if self.sigma_prior_shape <= 0.0 or self.sigma_prior_scale <= 0.0:
            raise ValueError("inverse-gamma prior parameters must be positive")
        mean = (np.zeros(self.dim) if self.theta_prior_mean is None
                else np.asarray(self.theta_prior_mean, dtype=float))
        cov = (np.eye(self.dim) if self.theta_prior_cov is None
               else np.asarray(self.theta_prior_cov, dtype=float))
        if mean.shape != (self.dim,):
            raise ValueError("theta prior mean has the wrong dimension")
        _check_spd(cov, "theta prior covariance")
        object.__setattr__(self, "theta_prior_mean", mean)
        object.__setattr__(self, "theta_prior_cov", cov)
        precision = np.linalg.inv(cov)
        precision = (precision + precision.T) / 2.0
        object.__setattr__(self, "_theta_prior_precision", precision)
        object.__setattr__(self, "_theta_prior_shift", precision @ mean)
        object.__setattr__(self, "_theta_prior_cov_chol", np.linalg.cholesky(cov))


@dataclass(frozen=True)
class GibbsState:
    """One chain iterate. With a truncated conformity prior every iterate
    satisfies the model-parameter invariants; the untruncated paper-fidelity
    prior may step outside [0, 1]."""

    theta: np.ndarray
    alpha: float
    sigma: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if np.any(self.sigma <= 0.0):
            raise ValueError("noise scales must stay positive")


class HistoryStats:
    """Per-arm sufficient statistics of a decision history.

    Stores, per arm: the pull count, the sums of V, h, V^2, h^2 and V*h,
    and the feature aggregates sum(x x^T), sum(V x), sum(h x). These are
    everything the three full conditionals need, and they update in O(d^2)
    per observation.
    """

    __slots__ = ("n_arms", "dim", "n", "sum_v", "sum_h", "sum_v2", "sum_h2",
                 "sum_vh", "sum_xx", "sum_vx", "sum_hx", "n_records")

    def __init__(self, n_arms: int, dim: int) -> None:
        self.n_arms = n_arms
        self.dim = dim
        self.n = np.zeros(n_arms)
        self.sum_v = np.zeros(n_arms)
        self.sum_h = np.zeros(n_arms)
        self.sum_v2 = np.zeros(n_arms)
        self.sum_h2 = np.zeros(n_arms)
        self.sum_vh = np.zeros(n_arms)
        self.sum_xx = np.zeros((n_arms, dim, dim))
        self.sum_vx = np.zeros((n_arms, dim))
        self.sum_hx = np.zeros((n_arms, dim))
        self.n_records = 0

    def add(self, record: DecisionRecord) -> None:
        a = record.arm_id
        if not 0 <= a < self.n_arms:
            raise ValueError(f"arm id {a} outside [0, {self.n_arms})")
        x = record.features
        v = record.feedback_value
        h = record.historical_rating
        self.n[a] += 1.0
        self.sum_v[a] += v
        self.sum_h[a] += h
        self.sum_v2[a] += v * v
        self.sum_h2[a] += h * h
        self.sum_vh[a] += v * h
        self.sum_xx[a] += np.outer(x, x)
        self.sum_vx[a] += v * x
        self.sum_hx[a] += h * x
        self.n_records += 1

    @classmethod
    def from_history(
        cls, history: Sequence[DecisionRecord], n_arms: int, dim: int
    ) -> "HistoryStats":
        stats = cls(n_arms, dim)
        for record in history:
            stats.add(record)
        return stats


HistoryLike = Union[Sequence[DecisionRecord], HistoryStats]


def _as_stats(history: HistoryLike, config: GibbsConfig) -> HistoryStats:
    if isinstance(history, HistoryStats):
        return history
    return HistoryStats.from_history(history, config.n_arms, config.dim)


def residual(params: Union[GibbsState, ModelParams], record: DecisionRecord) -> float:
    """Noise implied by a record under the given parameters:
    V - alpha*h - (1-alpha) * theta @ x."""
    preference = float(np.asarray(params.theta, dtype=float) @ record.features)
    return (record.feedback_value
            - params.alpha * record.historical_rating
            - (1.0 - params.alpha) * preference)


def _truncated_normal(
    mean: float, sd: float, low: float, high: float, rng: np.random.Generator
) -> float:
    lo, hi = ndtr(((low - mean) / sd, (high - mean) / sd))
    if hi - lo < _CDF_FLOOR:
        return min(max(mean, low), high)
    u = lo + (hi - lo) * rng.random()
    u = min(max(u, _CDF_FLOOR), 1.0 - _CDF_FLOOR)
    return min(max(mean + sd * float(ndtri(u)), low), high)


def _draw_theta_prior(config: GibbsConfig, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(config.dim)
    return config.theta_prior_mean + config._theta_prior_cov_chol @ z


def draw_alpha_prior(config: GibbsConfig, rng: np.random.Generator) -> float:
    sd = float(np.sqrt(config.alpha_prior_var))
    if config.alpha_truncated:
        return _truncated_normal(config.alpha_prior_mean, sd, 0.0, 1.0, rng)
    return float(rng.normal(config.alpha_prior_mean, sd))


def draw_sigma_prior(config: GibbsConfig, rng: np.random.Generator) -> np.ndarray:
    gamma = rng.gamma(config.sigma_prior_shape, size=config.n_arms)
    return np.sqrt(config.sigma_prior_scale / gamma)


def prior_mean_state(config: GibbsConfig) -> GibbsState:
    """Deterministic chain start at the prior centers (cold start)."""
    alpha = config.alpha_prior_mean
    if config.alpha_truncated:
        alpha = min(max(alpha, 0.0), 1.0)
    a0, b0 = config.sigma_prior_shape, config.sigma_prior_scale
    # Inverse-gamma mean when it exists, otherwise the mode.
    var = b0 / (a0 - 1.0) if a0 > 1.0 else b0 / (a0 + 1.0)
    return GibbsState(
        theta=config.theta_prior_mean.copy(),
        alpha=float(alpha),
        sigma=np.full(config.n_arms, np.sqrt(var)),
    )


def draw_prior_state(config: GibbsConfig, rng: np.random.Generator) -> GibbsState:
    """One joint draw from the parameter prior."""
    return GibbsState(
        theta=_draw_theta_prior(config, rng),
        alpha=draw_alpha_prior(config, rng),
        sigma=draw_sigma_prior(config, rng),
    )


def theta_conditional(
    state: GibbsState, history: HistoryLike, config: GibbsConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the preference conditional given (alpha, sigma).

    Conditioned on alpha, each record contributes a Gaussian observation
    (V - alpha*h) of (1-alpha) * theta @ x with that arm's noise variance.
    Within ``EPS_SINGULAR`` of full conformity the likelihood carries no
    information about theta, so the conditional degenerates to the prior.
    """
    stats = _as_stats(history, config)
    alpha = state.alpha
    one_minus = 1.0 - alpha
    if abs(one_minus) <= EPS_SINGULAR:
        return config.theta_prior_mean.copy(), config.theta_prior_cov.copy()
    inv_s2 = 1.0 / np.square(state.sigma)
    precision = config._theta_prior_precision + one_minus ** 2 * np.tensordot(
        inv_s2, stats.sum_xx, axes=1
    )
    shift = config._theta_prior_shift + one_minus * (
        (stats.sum_vx - alpha * stats.sum_hx).T @ inv_s2
    )
    chol = np.linalg.cholesky(precision)
    mean = cho_solve((chol, True), shift)
    cov = cho_solve((chol, True), np.eye(config.dim))
    return mean, (cov + cov.T) / 2.0


def alpha_conditional(
    state: GibbsState, history: HistoryLike, config: GibbsConfig
) -> tuple[float, float]:
    """Mean and standard deviation of the conformity conditional (untruncated).

    Rewriting the feedback model as (V - theta@x) = alpha * (h - theta@x)
    plus noise makes alpha a scalar Gaussian regression coefficient; with
    no informative covariates this is just the prior.
    """
    stats = _as_stats(history, config)
    theta = state.theta
    inv_s2 = 1.0 / np.square(state.sigma)
    proj = stats.sum_xx @ theta
    t_s_t = proj @ theta
    q_t = stats.sum_vx @ theta
    r_t = stats.sum_hx @ theta
    z2 = stats.sum_h2 - 2.0 * r_t + t_s_t
    yz = stats.sum_vh - q_t - r_t + t_s_t
    precision = 1.0 / config.alpha_prior_var + float(z2 @ inv_s2)
    mean = (config.alpha_prior_mean / config.alpha_prior_var
            + float(yz @ inv_s2)) / precision
    return mean, 1.0 / np.sqrt(precision)


def sigma_conditional(
    state: GibbsState, history: HistoryLike, config: GibbsConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-arm inverse-gamma (shape, scale) for the noise-variance conditional.

    The likelihood factorizes over arms: shape is a0 + n_a/2 and scale is
    b0 plus half the arm's residual sum of squares under (theta, alpha).
    Arms without records keep the prior parameters.
    """
    stats = _as_stats(history, config)
    theta = state.theta
    alpha = state.alpha
    one_minus = 1.0 - alpha
    proj = stats.sum_xx @ theta
    t_s_t = proj @ theta
    q_t = stats.sum_vx @ theta
    r_t = stats.sum_hx @ theta
    rss = (stats.sum_v2 + alpha ** 2 * stats.sum_h2 + one_minus ** 2 * t_s_t
           - 2.0 * alpha * stats.sum_vh - 2.0 * one_minus * q_t
           + 2.0 * alpha * one_minus * r_t)
    rss = np.maximum(rss, 0.0)
    shape = config.sigma_prior_shape + stats.n / 2.0
    scale = config.sigma_prior_scale + rss / 2.0
    return shape, scale


def step_theta(
    state: GibbsState, history: HistoryLike, config: GibbsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exact draw of the preference vector from its full conditional."""
    if abs(1.0 - state.alpha) <= EPS_SINGULAR:
        return _draw_theta_prior(config, rng)
    mean, cov = theta_conditional(state, history, config)
    chol = np.linalg.cholesky(cov)
    return mean + chol @ rng.standard_normal(config.dim)


def step_alpha(
    state: GibbsState, history: HistoryLike, config: GibbsConfig,
    rng: np.random.Generator,
) -> float:
    """Exact draw of the conformity level from its full conditional,
    truncated to [0, 1] by inverse-CDF when configured."""
    mean, sd = alpha_conditional(state, history, config)
    if config.alpha_truncated:
        return _truncated_normal(mean, sd, 0.0, 1.0, rng)
    return float(rng.normal(mean, sd))


def step_sigma(
    state: GibbsState, history: HistoryLike, config: GibbsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exact per-arm draws of the noise scales from their full conditionals."""
    shape, scale = sigma_conditional(state, history, config)
    return np.sqrt(scale / rng.gamma(shape))


def _run_sweeps(
    stats: HistoryStats,
    config: GibbsConfig,
    rng: np.random.Generator,
    state: GibbsState,
    trace: dict[str, np.ndarray] | None = None,
) -> GibbsState:
    """Hot loop shared by ``run_chain`` and ``run_chain_trace``.

    Works on plain arrays and raw LAPACK calls; the selection path runs
    this tens of thousands of times per experiment, so per-sweep overhead
    dominates everything else.
    """
    theta = state.theta
    alpha = state.alpha
    sigma = np.asarray(state.sigma, dtype=float)
    dim = config.dim
    n_arms = stats.n_arms
    sum_xx_flat = stats.sum_xx.reshape(n_arms, dim * dim)
    # rows: sum(V x) and sum(h x) stacked so one matmul projects both
    vx_hx = np.vstack([stats.sum_vx, stats.sum_hx])
    # transposed layout for contracting against per-arm weights in one call
    vx_hx_t = np.vstack([stats.sum_vx.T, stats.sum_hx.T])
    # columns of the quadratic pieces: [sum_v2, sum_h2, sum_vh] per arm
    moments = np.stack([stats.sum_v2, stats.sum_h2, stats.sum_vh], axis=1)
    prior_prec = config._theta_prior_precision
    prior_shift = config._theta_prior_shift
    alpha_prior_prec = 1.0 / config.alpha_prior_var
    alpha_prior_shift = config.alpha_prior_mean / config.alpha_prior_var
    sigma_shape = config.sigma_prior_shape + stats.n / 2.0
    burn_in = config.burn_in

    for n in range(config.n_iterations):
        inv_s2 = 1.0 / (sigma * sigma)

        one_minus = 1.0 - alpha
        if abs(one_minus) <= EPS_SINGULAR:
            theta = _draw_theta_prior(config, rng)
        else:
            precision = prior_prec + (one_minus * one_minus) * (
                inv_s2 @ sum_xx_flat
            ).reshape(dim, dim)
            weighted = vx_hx_t @ inv_s2
            shift = prior_shift + one_minus * (
                weighted[:dim] - alpha * weighted[dim:]
            )
            chol, info = dpotrf(precision, lower=1, overwrite_a=1)
            if info != 0:
                raise np.linalg.LinAlgError(
                    "preference conditional precision is not positive-definite"
                )
            mean, _ = dpotrs(chol, shift, lower=1)
            noise, _ = dtrtrs(chol, rng.standard_normal(dim), lower=1, trans=1)
            theta = mean + noise

        t_s_t = (sum_xx_flat @ np.outer(theta, theta).ravel())
        qr = vx_hx @ theta  # first half sum(V x)@theta, second sum(h x)@theta
        q_t = qr[:n_arms]
        r_t = qr[n_arms:]

        if config.sample_alpha:
            # z2 = sum_h2 - 2 r + tSt ; yz = sum_vh - q - r + tSt, both
            # contracted against inv_s2 in one pass
            mw = inv_s2 @ moments  # [sum(V^2/s2), sum(h^2/s2), sum(Vh/s2)]
            tst_w = float(t_s_t @ inv_s2)
            q_w = float(q_t @ inv_s2)
            r_w = float(r_t @ inv_s2)
            z2_w = mw[1] - 2.0 * r_w + tst_w
            yz_w = mw[2] - q_w - r_w + tst_w
            prec_a = alpha_prior_prec + z2_w
            mean_a = (alpha_prior_shift + yz_w) / prec_a
            sd_a = 1.0 / np.sqrt(prec_a)
            if config.alpha_truncated:
                alpha = _truncated_normal(mean_a, sd_a, 0.0, 1.0, rng)
            else:
                alpha = float(rng.normal(mean_a, sd_a))

        if config.sample_sigma:
            one_minus = 1.0 - alpha
            rss = moments @ (1.0, alpha * alpha, -2.0 * alpha)
            rss += (one_minus * one_minus) * t_s_t
            rss -= (2.0 * one_minus) * q_t
            rss += (2.0 * alpha * one_minus) * r_t
            np.maximum(rss, 0.0, out=rss)
            scale = config.sigma_prior_scale + 0.5 * rss
            sigma = np.sqrt(scale / rng.gamma(sigma_shape))

        if trace is not None and n >= burn_in:
            k = n - burn_in
            trace["theta"][k] = theta
            trace["alpha"][k] = alpha
            trace["sigma"][k] = sigma

    return GibbsState(theta=theta, alpha=alpha, sigma=sigma)


def run_chain(
    history: HistoryLike,
    config: GibbsConfig,
    rng: np.random.Generator,
    initial: GibbsState | None = None,
) -> GibbsState:
    """Run the configured number of sweeps and return the final iterate.

    The final iterate is the posterior sample; no averaging is applied.
    ``initial`` warm-starts the chain (e.g. from the previous decision
    round); by default it starts at the prior centers.
    """
    stats = _as_stats(history, config)
    state = initial if initial is not None else prior_mean_state(config)
    return _run_sweeps(stats, config, rng, state)


def run_chain_trace(
    history: HistoryLike,
    config: GibbsConfig,
    rng: np.random.Generator,
    initial: GibbsState | None = None,
) -> dict[str, np.ndarray]:
    """Run the chain and return post-burn-in iterates as stacked arrays."""
    stats = _as_stats(history, config)
    state = initial if initial is not None else prior_mean_state(config)
    kept = config.n_iterations - config.burn_in
    trace = {
        "theta": np.empty((kept, config.dim)),
        "alpha": np.empty(kept),
        "sigma": np.empty((kept, config.n_arms)),
    }
    _run_sweeps(stats, config, rng, state, trace=trace)
    return trace
