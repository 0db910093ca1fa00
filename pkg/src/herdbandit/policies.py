"""Decision policies behind one interface: select an arm, observe a record.

TS-Conf and TS-ConfMCMC model the conformity bias (exact conjugate posterior
and Gibbs posterior respectively); LinUCB and Gaussian Thompson sampling are
bias-blind baselines on raw features; LinUCBConf runs LinUCB machinery on
rating-augmented features. All ties break toward the lowest arm id so runs
are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import ArmContext, DecisionRecord
from .posterior_exact import (
    EPS_SINGULAR,
    GaussianPosterior,
    augmented_feature,
    recover_params,
)
from .posterior_gibbs import (
    GibbsConfig,
    GibbsState,
    HistoryStats,
    prior_mean_state,
    run_chain,
)
from .rng import RoundStream


def default_exploration_beta(horizon: int) -> float:
    """UCB width used by the LinUCB-family baselines for a known horizon."""
    return 1.0 + math.sqrt(math.log(2.0 * horizon) / 2.0)


def argmax_arm(scores: np.ndarray, contexts: Sequence[ArmContext]) -> int:
    """Index of the best score, breaking exact ties by lowest arm id."""
    scores = np.asarray(scores, dtype=float)
    if np.any(np.isnan(scores)):
        raise ValueError("NaN arm score")
    best = scores.max()
    tied = np.flatnonzero(scores == best)
    return min(int(contexts[i].arm_id) for i in tied)


class Policy:
    """Behavioral contract shared by every policy.

    ``select_arm`` must return an arm id present in the offered contexts and
    must not mutate policy state; ``observe`` is the only mutation point.
    """

    name: str = "policy"

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        raise NotImplementedError

    def observe(self, record: DecisionRecord) -> None:
        raise NotImplementedError


class TSConfPolicy(Policy):
    """Thompson sampling on the exact augmented-Gaussian posterior.

    Each round samples the augmented parameter, recovers the conformity
    level and preference vector, and plays the arm with the best recovered
    expected reward. Requires the noise variance to be known, per the
    conjugate special case.

    Priors are given in the public augmented layout (rating coordinate
    first). Internally the belief keeps the rating coordinate last, so the
    preference block consumes a shared round stream's draws in the same
    order as the plain Gaussian sampler; absent any rating signal the two
    policies then make identical selections under common random numbers.
    """

    def __init__(
        self,
        dim: int,
        noise_variance: float,
        stream: RoundStream,
        prior_mean: np.ndarray | None = None,
        prior_precision: np.ndarray | None = None,
        eps_singular: float = EPS_SINGULAR,
        name: str = "TS-Conf",
    ) -> None:
        if prior_mean is None:
            prior_mean = np.zeros(dim + 1)
        if prior_precision is None:
            prior_precision = np.eye(dim + 1)
        self.name = name
        self.dim = dim
        self.eps_singular = eps_singular
        self._stream = stream
        # move the rating coordinate from the front to the back
        perm = np.r_[1:dim + 1, 0]
        prior_mean = np.asarray(prior_mean, dtype=float)[perm]
        prior_precision = np.asarray(prior_precision, dtype=float)[np.ix_(perm, perm)]
        self.posterior = GaussianPosterior(prior_mean, prior_precision, noise_variance)

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        draw = self.posterior.sample(self._stream.next())
        theta_tilde = np.concatenate([draw[-1:], draw[:-1]])
        _, theta = recover_params(theta_tilde, eps_singular=self.eps_singular)
        scores = np.array([float(theta @ c.features) for c in contexts])
        return argmax_arm(scores, contexts)

    def observe(self, record: DecisionRecord) -> None:
        feature = augmented_feature(record.historical_rating, record.features)
        internal = np.concatenate([feature[1:], feature[:1]])
        self.posterior = self.posterior.update(internal, record.feedback_value)


class TSConfMCMCPolicy(Policy):
    """Thompson sampling with the Gibbs approximation of the joint posterior.

    The decision history is kept as per-arm sufficient statistics, and each
    round runs a fresh chain whose final iterate is the played sample. By
    default the chain warm-starts from the previous round's sample.
    """

    def __init__(
        self,
        config: GibbsConfig,
        stream: RoundStream,
        cold_start: bool = False,
        name: str = "TS-ConfMCMC",
    ) -> None:
        self.name = name
        self.config = config
        self.cold_start = cold_start
        self._stream = stream
        self._stats = HistoryStats(config.n_arms, config.dim)
        self._carry: GibbsState = prior_mean_state(config)

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        initial = None if self.cold_start else self._carry
        state = run_chain(self._stats, self.config, self._stream.next(),
                          initial=initial)
        if not self.cold_start:
            self._carry = state
        scores = np.array([float(state.theta @ c.features) for c in contexts])
        return argmax_arm(scores, contexts)

    def observe(self, record: DecisionRecord) -> None:
        self._stats.add(record)


class _RidgeState:
    """Ridge accumulator with a Sherman-Morrison-maintained inverse."""

    __slots__ = ("a_inv", "b")

    def __init__(self, dim: int, lam: float) -> None:
        self.a_inv = np.eye(dim) / lam
        self.b = np.zeros(dim)

    def add(self, x: np.ndarray, value: float) -> None:
        u = self.a_inv @ x
        self.a_inv -= np.outer(u, u) / (1.0 + float(x @ u))
        self.b += value * x

    def theta_hat(self) -> np.ndarray:
        return self.a_inv @ self.b

    def ucb_score(self, x: np.ndarray, beta: float) -> float:
        return float(x @ self.theta_hat() + beta * np.sqrt(x @ self.a_inv @ x))

    def ucb_scores(self, features: np.ndarray, beta: float) -> np.ndarray:
        estimates = features @ self.theta_hat()
        widths = np.sqrt(np.einsum("kd,de,ke->k", features, self.a_inv, features))
        return estimates + beta * widths


class LinUCBPolicy(Policy):
    """Bias-blind disjoint linear UCB: one ridge regression per arm on raw
    features and raw feedback values."""

    def __init__(
        self,
        dim: int,
        exploration_beta: float,
        ridge_lambda: float = 1.0,
        name: str = "LinUCB",
    ) -> None:
        if exploration_beta < 0.0:
            raise ValueError("exploration beta must be >= 0")
        self.name = name
        self.dim = dim
        self.exploration_beta = exploration_beta
        self.ridge_lambda = ridge_lambda
        self._arms: dict[int, _RidgeState] = {}

    def _score(self, context: ArmContext) -> float:
        state = self._arms.get(context.arm_id)
        if state is None:
            x = context.features
            return self.exploration_beta * float(
                np.sqrt(x @ x / self.ridge_lambda)
            )
        return state.ucb_score(context.features, self.exploration_beta)

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        scores = np.array([self._score(c) for c in contexts])
        return argmax_arm(scores, contexts)

    def observe(self, record: DecisionRecord) -> None:
        state = self._arms.get(record.arm_id)
        if state is None:
            state = _RidgeState(self.dim, self.ridge_lambda)
            self._arms[record.arm_id] = state
        state.add(record.features, record.feedback_value)


class LinUCBConfPolicy(Policy):
    """LinUCB machinery on rating-augmented features.

    The ridge regression runs on [h; x] against raw feedback. With
    ``score_mode="augmented"`` arms are ranked by the full augmented
    estimate (conformity payoff included), scored at each arm's current
    rating; ``score_mode="recovered"`` instead splits the estimate into
    (conformity, preferences) and ranks by recovered preference reward.
    The exploration bonus always uses the augmented geometry.
    """

    def __init__(
        self,
        dim: int,
        exploration_beta: float,
        ridge_lambda: float = 1.0,
        score_mode: str = "recovered",
        eps_singular: float = EPS_SINGULAR,
        name: str = "LinUCBConf",
    ) -> None:
        if exploration_beta < 0.0:
            raise ValueError("exploration beta must be >= 0")
        if score_mode not in ("augmented", "recovered"):
            raise ValueError(f"unknown score mode {score_mode!r}")
        self.name = name
        self.exploration_beta = exploration_beta
        self.score_mode = score_mode
        self.eps_singular = eps_singular
        self._ridge = _RidgeState(dim + 1, ridge_lambda)

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        augmented = np.stack(
            [augmented_feature(c.historical_rating, c.features) for c in contexts]
        )
        if self.score_mode == "augmented":
            scores = self._ridge.ucb_scores(augmented, self.exploration_beta)
        else:
            _, theta = recover_params(
                self._ridge.theta_hat(), eps_singular=self.eps_singular
            )
            estimates = augmented[:, 1:] @ theta
            widths = np.sqrt(
                np.einsum("kd,de,ke->k", augmented, self._ridge.a_inv, augmented)
            )
            scores = estimates + self.exploration_beta * widths
        return argmax_arm(scores, contexts)

    def observe(self, record: DecisionRecord) -> None:
        feature = augmented_feature(record.historical_rating, record.features)
        self._ridge.add(feature, record.feedback_value)


class GaussianTSPolicy(Policy):
    """Bias-blind Gaussian Thompson sampling on raw (feature, feedback) pairs."""

    def __init__(
        self,
        dim: int,
        noise_variance: float,
        stream: RoundStream,
        posterior_scale: float = 1.0,
        prior_mean: np.ndarray | None = None,
        prior_precision: np.ndarray | None = None,
        name: str = "TS",
    ) -> None:
        if prior_mean is None:
            prior_mean = np.zeros(dim)
        if prior_precision is None:
            prior_precision = np.eye(dim)
        self.name = name
        self.posterior_scale = posterior_scale
        self._stream = stream
        self.posterior = GaussianPosterior(prior_mean, prior_precision, noise_variance)

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        draw = self.posterior.sample(self._stream.next())
        if self.posterior_scale != 1.0:
            mean = self.posterior.mean
            draw = mean + self.posterior_scale * (draw - mean)
        scores = np.array([float(draw @ c.features) for c in contexts])
        return argmax_arm(scores, contexts)

    def observe(self, record: DecisionRecord) -> None:
        self.posterior = self.posterior.update(record.features, record.feedback_value)


class OraclePolicy(Policy):
    """Sanity baseline that cheats with the true preference vector."""

    def __init__(self, theta: np.ndarray, name: str = "Oracle") -> None:
        self.name = name
        self.theta = np.asarray(theta, dtype=float)

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        scores = np.array([float(self.theta @ c.features) for c in contexts])
        return argmax_arm(scores, contexts)

    def observe(self, record: DecisionRecord) -> None:
        pass


class UniformRandomPolicy(Policy):
    """Sanity baseline that picks uniformly among the offered arms."""

    def __init__(self, stream: RoundStream, name: str = "Random") -> None:
        self.name = name
        self._stream = stream

    def select_arm(self, contexts: Sequence[ArmContext]) -> int:
        rng = self._stream.next()
        return int(contexts[rng.integers(len(contexts))].arm_id)

    def observe(self, record: DecisionRecord) -> None:
        pass


@dataclass(frozen=True)
class PolicySpec:
    """Declarative policy description used by configs and the harness.

    ``kind`` picks the implementation; ``name`` is the label written into
    traces (defaults to the canonical name of the kind); ``settings`` are
    keyword overrides understood by that kind.
    """

    kind: str
    name: str = ""
    settings: dict = field(default_factory=dict)

    def label(self) -> str:
        return self.name or _CANONICAL_NAMES[self.kind]


_CANONICAL_NAMES = {
    "ts-conf": "TS-Conf",
    "ts-conf-mcmc": "TS-ConfMCMC",
    "linucb": "LinUCB",
    "ts": "TS",
    "linucb-conf": "LinUCBConf",
    "oracle": "Oracle",
    "random": "Random",
}


def make_policy(
    spec: PolicySpec,
    dim: int,
    n_arms: int,
    horizon: int,
    noise_variance: float,
    stream: RoundStream,
    true_theta: np.ndarray | None = None,
) -> Policy:
    """Instantiate a policy for one run from its declarative spec."""
    if spec.kind not in _CANONICAL_NAMES:
        raise ValueError(
            f"unknown policy kind {spec.kind!r}; expected one of "
            f"{sorted(_CANONICAL_NAMES)}"
        )
    label = spec.label()
    s = dict(spec.settings)
    if spec.kind == "ts-conf":
        prior_mean = prior_precision = None
        if s.pop("prior", "standard") == "synthetic-matched":
            from .data_pipeline import synthetic_augmented_prior

            prior_mean, prior_cov = synthetic_augmented_prior(dim)
            prior_precision = np.linalg.inv(prior_cov)
            prior_precision = (prior_precision + prior_precision.T) / 2.0
        return TSConfPolicy(
            dim=dim,
            noise_variance=s.pop("noise_variance", noise_variance),
            stream=stream,
            prior_mean=prior_mean,
            prior_precision=prior_precision,
            eps_singular=s.pop("eps_singular", EPS_SINGULAR),
            name=label,
            **s,
        )
    if spec.kind == "ts-conf-mcmc":
        config = GibbsConfig(
            dim=dim,
            n_arms=n_arms,
            n_iterations=s.pop("n_iterations", 100),
            alpha_prior_mean=s.pop("alpha_prior_mean", 0.5),
            alpha_prior_var=s.pop("alpha_prior_var", 1.0),
            alpha_truncated=s.pop("alpha_truncated", True),
            sigma_prior_shape=s.pop("sigma_prior_shape", 2.0),
            sigma_prior_scale=s.pop("sigma_prior_scale", 2.0),
        )
        return TSConfMCMCPolicy(
            config=config, stream=stream, cold_start=s.pop("cold_start", False),
            name=label, **s,
        )
    if spec.kind == "linucb":
        return LinUCBPolicy(
            dim=dim,
            exploration_beta=s.pop("exploration_beta", default_exploration_beta(horizon)),
            ridge_lambda=s.pop("ridge_lambda", 1.0),
            name=label,
            **s,
        )
    if spec.kind == "linucb-conf":
        return LinUCBConfPolicy(
            dim=dim,
            exploration_beta=s.pop("exploration_beta", default_exploration_beta(horizon)),
            ridge_lambda=s.pop("ridge_lambda", 1.0),
            score_mode=s.pop("score_mode", "recovered"),
            name=label,
            **s,
        )
    if spec.kind == "ts":
        return GaussianTSPolicy(
            dim=dim,
            noise_variance=s.pop("noise_variance", noise_variance),
            stream=stream,
            posterior_scale=s.pop("posterior_scale", 1.0),
            name=label,
            **s,
        )
    if spec.kind == "oracle":
        if true_theta is None:
            raise ValueError("oracle policy needs the true preference vector")
        return OraclePolicy(true_theta, name=label)
    return UniformRandomPolicy(stream, name=label)
