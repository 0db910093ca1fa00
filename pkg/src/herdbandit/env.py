"""User-feedback simulator: linear preference rewards distorted by conformity.

The observed rating for an arm blends the arm's visible historical rating
with the user's true expected reward, weighted by a conformity level in
[0, 1], plus Gaussian noise. The true reward itself is never observable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np


class HistoryPolicy(enum.Enum):
    """How an arm's visible historical rating evolves within a run."""

    STATIC = "static"
    RUNNING_MEAN = "running-mean"

    @classmethod
    def from_name(cls, name: str) -> "HistoryPolicy":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown history policy {name!r}; expected one of "
                         f"{[m.value for m in cls]}")


@dataclass(frozen=True)
class ArmContext:
    """One arm as presented to a policy: identity, features, visible rating.

    ``rating_count`` is the number of observations folded into
    ``historical_rating`` so far; it only matters under the running-mean
    history policy, where the initial rating counts as one observation.
    """

    arm_id: int
    features: np.ndarray
    historical_rating: float
    rating_count: int = 1

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        object.__setattr__(self, "features", feats)
        if feats.ndim != 1 or feats.size == 0:
            raise ValueError(f"arm {self.arm_id}: features must be a non-empty vector")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"arm {self.arm_id}: features contain non-finite entries")
        if not np.isfinite(self.historical_rating):
            raise ValueError(f"arm {self.arm_id}: historical rating must be finite")
        if self.rating_count < 1:
            raise ValueError(f"arm {self.arm_id}: rating count must be >= 1")

    @property
    def dim(self) -> int:
        return int(self.features.size)


@dataclass(frozen=True)
class ModelParams:
    """Ground-truth user model: preference vector, conformity, noise scales.

    ``sigma`` holds one noise standard deviation per arm, indexed by arm id.
    """

    theta: np.ndarray
    alpha: float
    sigma: np.ndarray

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", sigma)
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not np.all(sigma > 0.0):
            raise ValueError("every noise standard deviation must be positive")

    @property
    def dim(self) -> int:
        return int(self.theta.size)


@dataclass(frozen=True)
class Feedback:
    """A single observed (biased, noisy) rating."""

    value: float
    round_index: int
    arm_id: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError("feedback value must be finite")


@dataclass(frozen=True)
class DecisionRecord:
    """One entry of the decision history: what was shown, picked, and rated."""

    round_index: int
    arm_id: int
    historical_rating: float
    features: np.ndarray
    feedback_value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))


History = list[DecisionRecord]


def expected_reward(theta: np.ndarray, context: ArmContext) -> float:
    """True expected reward of an arm: inner product of preferences and features."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != context.features.shape:
        raise ValueError(
            f"dimension mismatch: theta has {theta.size} entries, "
            f"arm {context.arm_id} features have {context.features.size}"
        )
    return float(theta @ context.features)


def emit_feedback(
    params: ModelParams,
    context: ArmContext,
    rng: np.random.Generator,
    round_index: int = 0,
) -> Feedback:
    """Draw one biased rating for ``context``.

    The value is ``alpha * historical_rating + (1 - alpha) * theta @ x``
    plus Gaussian noise with the arm's standard deviation. Deterministic
    given the generator state. Values are intentionally not clipped to the
    rating scale; clipping would break conjugacy downstream.
    """
    if not 0 <= context.arm_id < params.sigma.size:
        raise ValueError(
            f"arm id {context.arm_id} outside the {params.sigma.size}-arm noise table"
        )
    mean = params.alpha * context.historical_rating
    mean += (1.0 - params.alpha) * expected_reward(params.theta, context)
    noise = rng.normal(0.0, params.sigma[context.arm_id])
    return Feedback(value=mean + noise, round_index=round_index, arm_id=context.arm_id)


def update_history(
    context: ArmContext, feedback: Feedback, policy: HistoryPolicy
) -> ArmContext:
    """Fold one feedback value into the arm's visible rating.

    STATIC leaves the arm unchanged; RUNNING_MEAN replaces the rating with
    the mean of all values seen so far, counting the initial rating as one
    observation.
    """
    if feedback.arm_id != context.arm_id:
        raise ValueError(
            f"feedback for arm {feedback.arm_id} applied to arm {context.arm_id}"
        )
    if policy is HistoryPolicy.STATIC:
        return context
    count = context.rating_count
    new_mean = (context.historical_rating * count + feedback.value) / (count + 1)
    return replace(context, historical_rating=new_mean, rating_count=count + 1)


@dataclass
class Environment:
    """Single-run mutable simulator state.

    Owns the true parameters, the current per-arm contexts, and the noise
    stream. One instance per (policy, seed) run; never shared across runs.
    """

    params: ModelParams
    contexts: list[ArmContext]
    noise_rng: np.random.Generator
    history_policy: HistoryPolicy = HistoryPolicy.STATIC
    _by_arm: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.contexts:
            raise ValueError("environment needs at least one arm")
        dims = {ctx.dim for ctx in self.contexts}
        if dims != {self.params.dim}:
            raise ValueError(f"feature dims {dims} do not match theta dim {self.params.dim}")
        self._by_arm = {ctx.arm_id: i for i, ctx in enumerate(self.contexts)}
        if len(self._by_arm) != len(self.contexts):
            raise ValueError("duplicate arm ids in context set")

    def true_rewards(self) -> np.ndarray:
        return np.array([expected_reward(self.params.theta, c) for c in self.contexts])

    def step(self, arm_id: int, round_index: int) -> tuple[Feedback, DecisionRecord]:
        """Emit feedback for the chosen arm and advance the history state."""
        idx = self._by_arm[arm_id]
        ctx = self.contexts[idx]
        fb = emit_feedback(self.params, ctx, self.noise_rng, round_index)
        record = DecisionRecord(
            round_index=round_index,
            arm_id=arm_id,
            historical_rating=ctx.historical_rating,
            features=ctx.features,
            feedback_value=fb.value,
        )
        self.contexts[idx] = update_history(ctx, fb, self.history_policy)
        return fb, record
