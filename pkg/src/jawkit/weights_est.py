"""Likelihood-ratio estimation by probabilistic classification.

A logistic regression separates training rows (label 0) from test rows
(label 1).  Its odds ``p/(1-p)`` are proportional to the density ratio
``dP_test / dP_train`` once the class sizes are accounted for.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

#: Ridge penalty on the slope coefficients, always applied.
L2_PENALTY = 1e-4


class SeparationError(RuntimeError):
    """The classifier separates training from test rows perfectly."""


@dataclass(frozen=True)
class RatioEstimator:
    """Fitted classifier ``p(x) = sigmoid(x . coef + intercept)``.

    ``intercept`` already includes the class-size correction
    ``log(n_train / n_test)``, so the clipped odds estimate the density ratio
    itself rather than a multiple of it.
    """

    coef: np.ndarray
    intercept: float
    clip_epsilon: float = 0.01

    def __post_init__(self):
        coef = np.atleast_1d(np.asarray(self.coef, dtype=float))
        if not (np.all(np.isfinite(coef)) and np.isfinite(self.intercept)):
            raise ValueError("classifier parameters must be finite")
        if not (0.0 < self.clip_epsilon < 0.5):
            raise ValueError("clip_epsilon must lie in (0, 0.5)")
        coef.flags.writeable = False
        object.__setattr__(self, "coef", coef)

    def logit(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coef.size:
            raise ValueError(f"estimator expects {self.coef.size} features, got {X.shape[1]}")
        return X @ self.coef + self.intercept

    def weights(self, X) -> np.ndarray:
        return odds_from_probability(expit(self.logit(X)), self.clip_epsilon)


def odds_from_probability(p, clip_epsilon=0.01):
    """``p / (1 - p)`` after clipping ``p`` to ``[eps, 1 - eps]``."""
    p = np.clip(np.asarray(p, dtype=float), clip_epsilon, 1.0 - clip_epsilon)
    return p / (1.0 - p)


def _fit_logistic(Z, labels, penalty, tol=1e-10, max_iter=100):
    """Penalized logistic regression by damped Newton steps.

    ``Z`` carries a trailing intercept column that is not penalized.  The
    objective is the mean log-loss plus ``penalty/2 * ||coef||^2``.
    """
    n, k = Z.shape
    reg = np.full(k, penalty)
    reg[-1] = 0.0

    def objective(w):
        z = Z @ w
        return -np.mean(labels * log_expit(z) + (1 - labels) * log_expit(-z)) + 0.5 * np.sum(reg * w * w)

    w = np.zeros(k)
    f = objective(w)
    for _ in range(max_iter):
        p = expit(Z @ w)
        g = Z.T @ (p - labels) / n + reg * w
        if np.max(np.abs(g)) <= tol:
            break
        H = (Z * (p * (1 - p))[:, None]).T @ Z / n + np.diag(reg) + 1e-12 * np.eye(k)
        step = np.linalg.solve(H, g)
        t = 1.0
        while t > 1e-10:
            cand = w - t * step
            fc = objective(cand)
            if fc <= f - 1e-4 * t * (g @ step):
                break
            t *= 0.5
        w, f = cand, fc
    return w


def fit_ratio(train_X, test_X, seed: int = 0, clip_epsilon: float = 0.01) -> RatioEstimator:
    """Fit the train-versus-test classifier.

    The Newton solver is deterministic, so ``seed`` has no effect on the
    result; it is accepted so every estimator shares one call signature.

    Raises
    ------
    SeparationError
        If the fitted classifier puts every training row strictly on the
        train side and every test row strictly on the test side.
    """
    A = np.atleast_2d(np.asarray(train_X, dtype=float))
    B = np.atleast_2d(np.asarray(test_X, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    if A.shape[1] != B.shape[1]:
        raise ValueError("train and test samples have different widths")
    X = np.vstack([A, B])
    labels = np.r_[np.zeros(len(A)), np.ones(len(B))]
    Z = np.column_stack([X, np.ones(len(X))])
    w = _fit_logistic(Z, labels, L2_PENALTY)
    z = Z @ w
    if np.all(z[: len(A)] < 0) and np.all(z[len(A):] > 0):
        raise SeparationError(
            "train and test rows are linearly separable; the density ratio is "
            "unbounded; regularize more strongly or drop the separating features")
    return RatioEstimator(w[:-1], float(w[-1] + np.log(len(A) / len(B))), clip_epsilon)


def estimated_weight(est: RatioEstimator, x) -> float:
    """Estimated likelihood ratio at a single point."""
    return float(est.weights(np.asarray(x, dtype=float)[None, :])[0])
