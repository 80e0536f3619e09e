"""Interval constructions: JAW, jackknife+, jackknife, jackknife-mm, CV+,
split, weighted split and the naive in-sample method.

Leave-one-out quantities are computed once into :class:`LooArtifacts`, which
may hold several test points; each interval function then works on one test
column ``j``.  Artifacts built from influence-function approximations use
the same constructors.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .empdist import PredictionInterval, WeightedAtoms, quantile_minus, quantile_plus
from .predictors import Dataset
from .shift import NormalizedWeights, normalize


class LooFitError(RuntimeError):
    """A leave-one-out refit failed; ``index`` is the held-out row."""

    def __init__(self, index, cause):
        super().__init__(f"refit without row {index} failed: {cause}")
        self.index = index


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LooArtifacts:
    """Leave-one-out predictions and residuals.

    Attributes
    ----------
    loo_pred_train : (n,) array
        ``mu_{-i}(X_i)``.
    loo_pred_test : (n, m) array
        ``mu_{-i}`` evaluated at each of ``m`` test points.
    loo_residuals : (n,) array
        ``|Y_i - mu_{-i}(X_i)|``.
    full_pred_test : (m,) array
        Full-data model at the test points.
    """

    loo_pred_train: np.ndarray
    loo_pred_test: np.ndarray
    loo_residuals: np.ndarray
    full_pred_test: np.ndarray

    def __post_init__(self):
        pt = _frozen(self.loo_pred_train).ravel()
        ptest = _frozen(self.loo_pred_test)
        if ptest.ndim == 1:
            ptest = ptest[:, None]
        res = _frozen(self.loo_residuals).ravel()
        full = _frozen(np.atleast_1d(self.full_pred_test)).ravel()
        if not (pt.size == res.size == ptest.shape[0]):
            raise ValueError("artifact lengths disagree")
        if ptest.shape[1] != full.size:
            raise ValueError("test-point counts disagree")
        if pt.size < 2:
            raise ValueError("leave-one-out needs at least two training rows")
        if np.any(res < 0):
            raise ValueError("residuals must be nonnegative")
        for a in (pt, ptest, res, full):
            if not np.all(np.isfinite(a)):
                raise ValueError("artifacts must be finite")
            a.flags.writeable = False
        object.__setattr__(self, "loo_pred_train", pt)
        object.__setattr__(self, "loo_pred_test", ptest)
        object.__setattr__(self, "loo_residuals", res)
        object.__setattr__(self, "full_pred_test", full)

    @property
    def n(self):
        return self.loo_residuals.size

    @property
    def m(self):
        return self.full_pred_test.size

    @classmethod
    def from_predictions(cls, labels, loo_pred_train, loo_pred_test, full_pred_test):
        labels = np.asarray(labels, dtype=float)
        loo_pred_train = np.asarray(loo_pred_train, dtype=float)
        return cls(loo_pred_train, loo_pred_test, np.abs(labels - loo_pred_train), full_pred_test)

    def affine(self, scale, offset):
        """Artifacts after mapping every prediction ``p`` to ``scale * p + offset``."""
        if not scale > 0:
            raise ValueError("scale must be positive")
        return LooArtifacts(self.loo_pred_train * scale + offset,
                            self.loo_pred_test * scale + offset,
                            self.loo_residuals * scale,
                            self.full_pred_test * scale + offset)


def compute_loo(model, data: Dataset, test_X, seed: int = 0, workers: int = 1) -> LooArtifacts:
    """Refit ``model`` ``n`` times, once without each row, all with ``seed``.

    ``workers > 1`` runs refits on a thread pool; results are ordered by the
    held-out index either way.
    """
    if data.n < 2:
        raise ValueError("leave-one-out needs at least two training rows")
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))

    def one(i):
        try:
            params = model.fit(data.drop(i), seed=seed)
        except Exception as exc:
            raise LooFitError(i, exc) from exc
        return model.predict(params, np.vstack([data.X[i:i + 1], test_X]))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, range(data.n)))
    else:
        rows = [one(i) for i in range(data.n)]
    P = np.asarray(rows)
    full = model.predict(model.fit(data, seed=seed), test_X)
    return LooArtifacts.from_predictions(data.y, P[:, 0], P[:, 1:], full)


def _jackknife_plus(centers, residuals, p_train, p_test, alpha):
    _check_alpha(alpha)
    lower = quantile_minus(WeightedAtoms(centers - residuals, p_train, neg_inf_mass=p_test), alpha)
    upper = quantile_plus(WeightedAtoms(centers + residuals, p_train, pos_inf_mass=p_test), 1 - alpha)
    return PredictionInterval(lower, upper)


def _symmetric(center, residuals, alpha, p_train=None, p_test=None):
    """``center +/- Q+_{1-alpha}`` of residual atoms with the test mass at +inf."""
    _check_alpha(alpha)
    k = residuals.size
    if p_train is None:
        p_train, p_test = np.full(k, 1.0 / (k + 1)), 1.0 / (k + 1)
    q = quantile_plus(WeightedAtoms(residuals, p_train, pos_inf_mass=p_test), 1 - alpha)
    return PredictionInterval(center - q, center + q)


def _as_weights(weights, n):
    if not isinstance(weights, NormalizedWeights):
        train_w, test_w = weights
        weights = normalize(train_w, test_w)
    if len(weights) != n:
        raise ValueError(f"{len(weights)} training weights for {n} artifacts")
    return weights


def jaw_interval(loo: LooArtifacts, weights, alpha: float, j: int = 0) -> PredictionInterval:
    """Jackknife+ with likelihood-ratio weights for test column ``j``.

    ``weights`` is a :class:`NormalizedWeights` or a raw pair
    ``(train_weights, test_weight)``.
    """
    w = _as_weights(weights, loo.n)
    return _jackknife_plus(loo.loo_pred_test[:, j], loo.loo_residuals, w.train, w.test, alpha)


def jackknife_plus_interval(loo: LooArtifacts, alpha: float, j: int = 0) -> PredictionInterval:
    return jaw_interval(loo, NormalizedWeights.uniform(loo.n), alpha, j)


def jackknife_interval(loo: LooArtifacts, alpha: float, j: int = 0) -> PredictionInterval:
    """Every atom centred at the full-data prediction."""
    n = loo.n
    centers = np.full(n, loo.full_pred_test[j])
    return _jackknife_plus(centers, loo.loo_residuals, np.full(n, 1.0 / (n + 1)), 1.0 / (n + 1), alpha)


def jackknife_mm_interval(loo: LooArtifacts, alpha: float, j: int = 0) -> PredictionInterval:
    """``[min_i mu_{-i}(x) - q, max_i mu_{-i}(x) + q]`` with ``q`` the residual quantile.

    Built as the jackknife+ construction with every lower atom centred at the
    smallest and every upper atom at the largest leave-one-out prediction.
    Under the ``inf{v : F(v) >= beta}`` convention the lower residual order
    statistic then differs from ``Q+_{1-alpha}`` when ``alpha (n + 1)`` is an
    integer, which keeps the interval a superset of jackknife+.
    """
    n = loo.n
    col = loo.loo_pred_test[:, j]
    p = np.full(n, 1.0 / (n + 1))
    lower = _jackknife_plus(np.full(n, col.min()), loo.loo_residuals, p, 1.0 / (n + 1), alpha).lower
    upper = _jackknife_plus(np.full(n, col.max()), loo.loo_residuals, p, 1.0 / (n + 1), alpha).upper
    return PredictionInterval(lower, upper)


def cv_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded assignment of ``range(n)`` to ``k`` near-equal folds."""
    if not (2 <= k <= n):
        raise ValueError(f"fold count must lie in [2, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def compute_cv(model, data: Dataset, test_X, k: int = 10, seed: int = 0) -> LooArtifacts:
    """K-fold analogue of :func:`compute_loo`: row ``i`` is predicted by the
    model trained without its fold."""
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    pred_train = np.empty(data.n)
    pred_test = np.empty((data.n, test_X.shape[0]))
    for fold in cv_folds(data.n, k, seed):
        keep = np.setdiff1d(np.arange(data.n), fold)
        params = model.fit(data.subset(keep), seed=seed)
        pred_train[fold] = model.predict(params, data.X[fold])
        pred_test[fold] = model.predict(params, test_X)
    full = model.predict(model.fit(data, seed=seed), test_X)
    return LooArtifacts.from_predictions(data.y, pred_train, pred_test, full)


def cv_plus_interval(cv: LooArtifacts, alpha: float, j: int = 0) -> PredictionInterval:
    """CV+ is the jackknife+ construction on fold-out artifacts."""
    return jackknife_plus_interval(cv, alpha, j)


@dataclass(frozen=True)
class SplitArtifacts:
    """Half-split calibration: holdout residuals and test predictions."""

    calibration_index: np.ndarray
    residuals: np.ndarray
    pred_test: np.ndarray

    @property
    def m(self):
        return self.pred_test.size

    def affine(self, scale, offset):
        return SplitArtifacts(self.calibration_index, self.residuals * scale,
                              self.pred_test * scale + offset)


def split_indices(n: int, seed: int):
    """Seeded half split: ``n // 2`` fitting rows, the rest for calibration."""
    if n < 2:
        raise ValueError("split methods need at least two rows")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[: n // 2]), np.sort(perm[n // 2:])


def compute_split(model, data: Dataset, test_X, seed: int = 0) -> SplitArtifacts:
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    fit_idx, cal_idx = split_indices(data.n, seed)
    params = model.fit(data.subset(fit_idx), seed=seed)
    res = np.abs(data.y[cal_idx] - model.predict(params, data.X[cal_idx]))
    return SplitArtifacts(cal_idx, res, model.predict(params, test_X))


def split_interval(split: SplitArtifacts, alpha: float, j: int = 0) -> PredictionInterval:
    return _symmetric(split.pred_test[j], split.residuals, alpha)


def weighted_split_interval(split: SplitArtifacts, train_weights, test_weight, alpha: float,
                            j: int = 0) -> PredictionInterval:
    """Split interval with likelihood-ratio masses.

    ``train_weights`` covers all ``n`` training rows; only the calibration
    rows and the test point enter the normalization.
    """
    train_weights = np.asarray(train_weights, dtype=float)
    w = normalize(train_weights[split.calibration_index], test_weight)
    return _symmetric(split.pred_test[j], split.residuals, alpha, w.train, w.test)


def naive_interval(model, data: Dataset, test_X, alpha: float, seed: int = 0) -> list[PredictionInterval]:
    """In-sample residual quantile around the full-data prediction, for
    every row of ``test_X``."""
    params = model.fit(data, seed=seed)
    res = np.abs(data.y - model.predict(params, data.X))
    preds = model.predict(params, np.atleast_2d(np.asarray(test_X, dtype=float)))
    return [_symmetric(p, res, alpha) for p in preds]
