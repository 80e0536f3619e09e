"""Covariate shift by exponential tilting and likelihood-ratio weights."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Largest tilting exponent accepted before ``exp`` would overflow.
MAX_LOG_WEIGHT = 700.0


class DegenerateWeightsError(ValueError):
    """Raised when every weight is zero."""


class PathologicalTiltError(OverflowError):
    """Raised when ``x . beta`` is too large to exponentiate."""


@dataclass(frozen=True)
class ShiftSpec:
    """Exponential tilt ``w(x) = exp(x . beta)`` and test-sampling settings."""

    beta: np.ndarray
    sample_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if not np.all(np.isfinite(beta)):
            raise ValueError("tilting vector must be finite")
        if not (0.0 < self.sample_fraction <= 1.0):
            raise ValueError("sample_fraction must lie in (0, 1]")
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)

    def log_weights(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.beta.size:
            raise ValueError(f"tilt has {self.beta.size} entries but x has {X.shape[1]}")
        z = X @ self.beta
        if np.any(z > MAX_LOG_WEIGHT):
            raise PathologicalTiltError(
                f"x . beta = {z.max():.1f} exceeds {MAX_LOG_WEIGHT}; tilt is too strong")
        return z

    def weights(self, X) -> np.ndarray:
        """Oracle likelihood ratios for every row of ``X``."""
        return np.exp(self.log_weights(X))

    def test_size(self, pool_size):
        return int(math.floor(self.sample_fraction * pool_size))


def oracle_weight(spec: ShiftSpec, x) -> float:
    return float(spec.weights(np.asarray(x, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class NormalizedWeights:
    """Normalized likelihood-ratio masses ``p_1..p_n`` and ``p_{n+1}``."""

    train: np.ndarray
    test: float

    def __post_init__(self):
        train = np.asarray(self.train, dtype=float).ravel()
        if np.any(train < 0) or self.test < 0:
            raise ValueError("normalized weights must be nonnegative")
        total = math.fsum(train) + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"normalized weights sum to {total!r}")
        train.flags.writeable = False
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", float(self.test))

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / (n + 1)), 1.0 / (n + 1))

    def __len__(self):
        return self.train.size


def normalize(train_w, test_w) -> NormalizedWeights:
    """Divide every weight by ``sum(train_w) + test_w``."""
    train_w = np.asarray(train_w, dtype=float).ravel()
    test_w = float(test_w)
    if np.any(train_w < 0) or test_w < 0 or not np.all(np.isfinite(train_w)):
        raise ValueError("weights must be finite and nonnegative")
    total = math.fsum(train_w) + test_w
    if total <= 0:
        raise DegenerateWeightsError("all weights are zero")
    return NormalizedWeights(train_w / total, test_w / total)


def sample_shifted_test(pool_X, spec: ShiftSpec, m: int, weights=None) -> np.ndarray:
    """Draw ``m`` distinct pool indices with probability proportional to the
    tilting weights at each draw (sampling without replacement).

    Uses exponential keys: index ``i`` gets key ``U_i ** (1 / w_i)`` and the
    ``m`` largest keys are taken.  Keys are compared in log space,
    ``log U_i / w_i``, with weights taken relative to the largest one.
    ``weights`` overrides the oracle weights of ``spec`` when given.
    """
    N = len(pool_X) if weights is None else len(weights)
    if m > N:
        raise ValueError(f"cannot draw {m} distinct points from a pool of {N}")
    if m < 0:
        raise ValueError("sample size must be nonnegative")
    if weights is None:
        logw = spec.log_weights(pool_X)
        w = np.exp(logw - logw.max()) if N else logw
    else:
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("sampling weights must be nonnegative")
        w = w / w.max() if N and w.max() > 0 else w
    rng = np.random.default_rng(spec.seed)
    u = rng.random(N)
    with np.errstate(divide="ignore"):
        keys = np.where(w > 0, np.log(u) / np.where(w > 0, w, 1.0), -np.inf)
    # stable sort on -key: zero-weight rows come last, in index order
    order = np.argsort(-keys, kind="stable")
    return order[:m]


def effective_sample_size(weights) -> float:
    """``(sum |w|)^2 / sum w^2``, between 1 and ``len(weights)``."""
    w = np.abs(np.asarray(weights, dtype=float).ravel())
    if not np.any(w > 0):
        raise DegenerateWeightsError("all weights are zero")
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w * w))
