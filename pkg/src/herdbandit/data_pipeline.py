"""Problem-instance construction: synthetic generators and ratings pipelines.

Synthetic instances draw features and preferences from a Gaussian centered
at one half with variance one sixth per coordinate, conformity uniform on
[0, 1], and historical ratings uniform on [0, 5]. Real instances come from
a ratings file: iterative sparsity filtering, per-item historical means,
and a matrix factorization whose rating model blends preference predictions
with the item's historical mean through a sigmoid conformity weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .env import ArmContext, ModelParams

RATING_MIN = 0.0
RATING_MAX = 5.0
FEATURE_MEAN = 0.5
FEATURE_VAR = 1.0 / 6.0

REQUIRED_COLUMNS = ("user_id", "item_id", "rating", "timestamp")


class EmptyDatasetError(ValueError):
    """Filtering removed every record."""


class DivergenceError(RuntimeError):
    """The factorization optimizer produced a non-finite loss."""


def generate_synthetic(
    dim: int,
    n_arms: int,
    rng: np.random.Generator,
    noise_sd: float = 1.0,
) -> tuple[ModelParams, list[ArmContext]]:
    """Draw one synthetic bandit instance (true parameters plus arm set)."""
    if dim < 1 or n_arms < 1:
        raise ValueError("dim and n_arms must be >= 1")
    sd = np.sqrt(FEATURE_VAR)
    theta = rng.normal(FEATURE_MEAN, sd, size=dim)
    features = rng.normal(FEATURE_MEAN, sd, size=(n_arms, dim))
    alpha = float(rng.uniform(0.0, 1.0))
    ratings = rng.uniform(RATING_MIN, RATING_MAX, size=n_arms)
    params = ModelParams(theta=theta, alpha=alpha, sigma=np.full(n_arms, noise_sd))
    contexts = [
        ArmContext(arm_id=a, features=features[a], historical_rating=float(ratings[a]))
        for a in range(n_arms)
    ]
    return params, contexts


def synthetic_augmented_prior(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matched Gaussian prior of the augmented parameter [a; (1-a)*theta]
    under the synthetic instance distribution.

    With conformity uniform on [0, 1] and preference coordinates drawn
    N(1/2, 1/6), the augmented parameter has mean [1/2; 1/4 * ones] and
    covariance with Var(a) = 1/12, Var((1-a)*theta_i) = 11/144,
    Cov(a, (1-a)*theta_i) = -1/24 and Cov across coordinates 1/48. A prior
    carrying these moments concentrates the belief near the scales the
    generator actually produces, which matters because a fixed arm set
    leaves one augmented direction data-free.
    """
    mean = np.full(dim + 1, 0.25)
    mean[0] = 0.5
    cov = np.empty((dim + 1, dim + 1))
    cov[1:, 1:] = 1.0 / 48.0
    np.fill_diagonal(cov[1:, 1:], 11.0 / 144.0)
    cov[0, 1:] = cov[1:, 0] = -1.0 / 24.0
    cov[0, 0] = 1.0 / 12.0
    return mean, cov


@dataclass(frozen=True)
class RatingsDataset:
    """User-item ratings with the canonical column set."""

    frame: pd.DataFrame

    def __post_init__(self) -> None:
        missing = [c for c in REQUIRED_COLUMNS if c not in self.frame.columns]
        if missing:
            raise ValueError(f"ratings frame is missing columns {missing}")
        ratings = self.frame["rating"].to_numpy(dtype=float)
        if len(ratings) and (ratings.min() < RATING_MIN or ratings.max() > RATING_MAX):
            raise ValueError(
                f"ratings must lie in [{RATING_MIN}, {RATING_MAX}], "
                f"found range [{ratings.min()}, {ratings.max()}]"
            )

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def n_users(self) -> int:
        return int(self.frame["user_id"].nunique())

    @property
    def n_items(self) -> int:
        return int(self.frame["item_id"].nunique())

    def user_counts(self) -> pd.Series:
        return self.frame["user_id"].value_counts()

    def item_counts(self) -> pd.Series:
        return self.frame["item_id"].value_counts()


def load_ratings_csv(
    path: str | Path, column_map: dict[str, str] | None = None
) -> RatingsDataset:
    """Read a ratings CSV (header required), renaming columns per the map.

    ``column_map`` maps canonical names (user_id, item_id, rating,
    timestamp) to the names used by the source file.
    """
    frame = pd.read_csv(path)
    if column_map:
        rename = {src: canon for canon, src in column_map.items()}
        missing = [src for src in column_map.values() if src not in frame.columns]
        if missing:
            raise ValueError(f"{path}: mapped columns {missing} not in file")
        frame = frame.rename(columns=rename)
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return RatingsDataset(frame=frame[list(REQUIRED_COLUMNS)].copy())


def filter_dataset(data: RatingsDataset, min_count: int = 10) -> RatingsDataset:
    """Drop users and items with fewer than ``min_count`` ratings, repeatedly.

    Removing a sparse user can push an item below the threshold and vice
    versa, so filtering iterates to a fixed point. Raises if nothing
    survives. Idempotent: filtering a filtered dataset is a no-op.
    """
    frame = data.frame
    while True:
        user_counts = frame["user_id"].value_counts()
        item_counts = frame["item_id"].value_counts()
        keep = frame["user_id"].map(user_counts).ge(min_count) & frame[
            "item_id"
        ].map(item_counts).ge(min_count)
        if keep.all():
            break
        frame = frame[keep]
    if frame.empty:
        raise EmptyDatasetError(
            f"no users or items with at least {min_count} ratings remain"
        )
    return RatingsDataset(frame=frame.reset_index(drop=True))


def historical_scores(data: RatingsDataset) -> dict[int, float]:
    """Arithmetic mean rating per item (the item's visible historical score)."""
    means = data.frame.groupby("item_id")["rating"].mean()
    return {item: float(score) for item, score in means.items()}


@dataclass(frozen=True)
class MFModel:
    """Fitted factorization: per-user and per-item factors plus conformity.

    ``beta`` is the pre-sigmoid conformity parameter; ``conformity`` is the
    estimated conformity level in (0, 1). ``item_historical`` holds each
    item's mean rating, aligned with ``item_ids``.
    """

    user_features: np.ndarray
    item_features: np.ndarray
    beta: float
    item_historical: np.ndarray
    user_ids: tuple
    item_ids: tuple
    item_counts: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.user_features.shape[1])

    @property
    def conformity(self) -> float:
        return float(_sigmoid(self.beta))

    def predict(self, user_index: int, item_index: int) -> float:
        preference = float(
            self.user_features[user_index] @ self.item_features[item_index]
        )
        s = self.conformity
        return (1.0 - s) * preference + s * float(self.item_historical[item_index])


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def mf_loss(
    user_features: np.ndarray,
    item_features: np.ndarray,
    beta: float,
    user_idx: np.ndarray,
    item_idx: np.ndarray,
    ratings: np.ndarray,
    item_historical: np.ndarray,
    regularization: float,
) -> float:
    """Squared prediction error plus L2 penalty on both factor matrices."""
    s = _sigmoid(beta)
    preference = np.einsum(
        "nd,nd->n", user_features[user_idx], item_features[item_idx]
    )
    predicted = (1.0 - s) * preference + s * item_historical[item_idx]
    errors = predicted - ratings
    penalty = regularization * (
        float(np.sum(user_features ** 2)) + float(np.sum(item_features ** 2))
    )
    return float(np.sum(errors ** 2)) + penalty


def mf_gradients(
    user_features: np.ndarray,
    item_features: np.ndarray,
    beta: float,
    user_idx: np.ndarray,
    item_idx: np.ndarray,
    ratings: np.ndarray,
    item_historical: np.ndarray,
    regularization: float,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact gradient of ``mf_loss`` for every parameter block."""
    s = _sigmoid(beta)
    theta = user_features[user_idx]
    x = item_features[item_idx]
    preference = np.einsum("nd,nd->n", theta, x)
    predicted = (1.0 - s) * preference + s * item_historical[item_idx]
    errors = predicted - ratings

    grad_user = 2.0 * regularization * user_features.copy()
    grad_item = 2.0 * regularization * item_features.copy()
    per_record_user = (2.0 * (1.0 - s) * errors)[:, None] * x
    per_record_item = (2.0 * (1.0 - s) * errors)[:, None] * theta
    np.add.at(grad_user, user_idx, per_record_user)
    np.add.at(grad_item, item_idx, per_record_item)

    dsig = s * (1.0 - s)
    grad_beta = float(
        np.sum(2.0 * errors * dsig * (item_historical[item_idx] - preference))
    )
    return grad_user, grad_item, grad_beta


def fit_mf(
    data: RatingsDataset,
    dim: int,
    rng: np.random.Generator,
    learning_rate: float = 0.01,
    regularization: float = 0.05,
    epochs: int = 30,
    init_scale: float = 0.1,
    item_historical: dict | None = None,
) -> MFModel:
    """Fit the conformity-weighted factorization by per-record SGD.

    Records are shuffled every epoch with the provided generator. After each
    epoch the full loss is evaluated; an epoch that increases the loss by
    more than 1e-6 is rolled back and retried at half the learning rate, so
    the accepted loss sequence is non-increasing. A non-finite loss aborts
    with the offending learning rate named.

    ``item_historical`` maps item ids to the historical scores shown to
    raters. It defaults to each item's mean rating in ``data``. Supplying
    the true displayed scores matters for identifying the conformity
    weight: scores recomputed as in-sample means are, by construction, a
    pattern the factors can also express, which leaves the split between
    the two terms to the regularizer alone.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    frame = data.frame
    user_ids = tuple(sorted(frame["user_id"].unique()))
    item_ids = tuple(sorted(frame["item_id"].unique()))
    user_row = {u: i for i, u in enumerate(user_ids)}
    item_row = {m: i for i, m in enumerate(item_ids)}
    user_idx = frame["user_id"].map(user_row).to_numpy(dtype=np.int64)
    item_idx = frame["item_id"].map(item_row).to_numpy(dtype=np.int64)
    ratings = frame["rating"].to_numpy(dtype=float)

    means = historical_scores(data) if item_historical is None else item_historical
    missing = [m for m in item_ids if m not in means]
    if missing:
        raise ValueError(f"historical scores missing for items {missing[:5]}")
    item_historical = np.array([means[m] for m in item_ids])
    counts = frame["item_id"].value_counts()
    item_counts = np.array([int(counts[m]) for m in item_ids])

    theta = rng.normal(0.0, init_scale, size=(len(user_ids), dim))
    x = rng.normal(0.0, init_scale, size=(len(item_ids), dim))
    beta = 0.0

    def full_loss() -> float:
        return mf_loss(theta, x, beta, user_idx, item_idx, ratings,
                       item_historical, regularization)

    lr = learning_rate
    loss = full_loss()
    n_records = len(ratings)
    for _ in range(epochs):
        for _attempt in range(20):
            order = rng.permutation(n_records)
            theta_bak, x_bak, beta_bak = theta.copy(), x.copy(), beta
            s = _sigmoid(beta)
            for k in order:
                u, m = user_idx[k], item_idx[k]
                tu = theta[u]
                xm = x[m]
                preference = float(tu @ xm)
                err = (1.0 - s) * preference + s * item_historical[m] - ratings[k]
                step = lr * err * (1.0 - s)
                theta[u] = tu - step * xm - lr * regularization * tu
                x[m] = xm - step * tu - lr * regularization * xm
                beta -= lr * err * s * (1.0 - s) * (item_historical[m] - preference)
                s = _sigmoid(beta)
            new_loss = full_loss()
            if not np.isfinite(new_loss):
                raise DivergenceError(
                    f"factorization diverged at learning_rate={lr:g}"
                )
            if new_loss <= loss + 1e-6:
                loss = new_loss
                break
            theta, x, beta = theta_bak, x_bak, beta_bak
            lr *= 0.5
        else:
            break  # learning rate exhausted; keep the last accepted state

    return MFModel(
        user_features=theta,
        item_features=x,
        beta=float(beta),
        item_historical=item_historical,
        user_ids=user_ids,
        item_ids=item_ids,
        item_counts=item_counts,
    )


def to_bandit_instance(
    model: MFModel,
    user_id,
    noise_variance: float,
    n_arms: int = 10,
) -> tuple[ModelParams, list[ArmContext], list]:
    """Bandit instance for one user: their factor vector as preferences, the
    sigmoid conformity as the herding level, and the ``n_arms`` most-rated
    items as the arm set (ties toward the smaller item id). Also returns the
    selected item ids, aligned with the arm ids."""
    if user_id not in model.user_ids:
        raise ValueError(f"unknown user {user_id!r}")
    if n_arms > len(model.item_ids):
        raise ValueError(
            f"requested {n_arms} arms but the model has {len(model.item_ids)} items"
        )
    if noise_variance <= 0.0:
        raise ValueError("noise variance must be positive")
    user_index = model.user_ids.index(user_id)
    order = sorted(
        range(len(model.item_ids)),
        key=lambda i: (-model.item_counts[i], model.item_ids[i]),
    )[:n_arms]
    params = ModelParams(
        theta=model.user_features[user_index].copy(),
        alpha=model.conformity,
        sigma=np.full(n_arms, np.sqrt(noise_variance)),
    )
    contexts = [
        ArmContext(
            arm_id=a,
            features=model.item_features[i].copy(),
            historical_rating=float(model.item_historical[i]),
        )
        for a, i in enumerate(order)
    ]
    return params, contexts, [model.item_ids[i] for i in order]


def save_instance(
    path: str | Path,
    params: ModelParams,
    contexts: list[ArmContext],
    item_ids: list | None = None,
    meta: dict | None = None,
) -> None:
    """Write a bandit instance as a structured JSON document (``.inst``)."""
    arms = []
    for i, ctx in enumerate(contexts):
        entry = {
            "arm_id": ctx.arm_id,
            "features": [float(v) for v in ctx.features],
            "historical_rating": float(ctx.historical_rating),
        }
        if item_ids is not None:
            item = item_ids[i]
            entry["item_id"] = item.item() if hasattr(item, "item") else item
        arms.append(entry)
    document = {
        "schema_version": 1,
        "dimension": params.dim,
        "theta": [float(v) for v in params.theta],
        "alpha": float(params.alpha),
        "sigma": [float(v) for v in params.sigma],
        "arms": arms,
    }
    if meta:
        document["meta"] = meta
    Path(path).write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_instance(path: str | Path) -> tuple[ModelParams, list[ArmContext]]:
    """Read a bandit instance written by ``save_instance``."""
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    if document.get("schema_version") != 1:
        raise ValueError(f"{path}: unsupported instance schema "
                         f"{document.get('schema_version')!r}")
    params = ModelParams(
        theta=np.array(document["theta"], dtype=float),
        alpha=float(document["alpha"]),
        sigma=np.array(document["sigma"], dtype=float),
    )
    contexts = [
        ArmContext(
            arm_id=int(arm["arm_id"]),
            features=np.array(arm["features"], dtype=float),
            historical_rating=float(arm["historical_rating"]),
        )
        for arm in document["arms"]
    ]
    return params, contexts
