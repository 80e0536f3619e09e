"""Higher-order influence-function approximations of leave-one-out fits.

Removing row ``i`` moves the data weights along ``omega(t) = 1 - t e_i``
from ``t = 0`` (full fit) to ``t = 1`` (row removed).  The fitted
parameters ``theta(t)`` solve ``G(theta(t), omega(t)) = 0``.  Writing
``theta(t) = theta_hat + sum_k t^k theta_k``, the order-``k`` Taylor
coefficient of ``G`` is ``H theta_k + c_k`` where ``c_k`` depends only on
lower orders.  Each order therefore costs one forward-mode jet evaluation of
``G`` and one Hessian solve, and the ``k``-th directional derivative is
``k! theta_k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .empdist import PredictionInterval
from .infer import LooArtifacts, jaw_interval
from .jets import Jet
from .predictors import Dataset, ModelParams, UnsupportedFamilyError

#: Smallest Hessian eigenvalue allowed after dampening.
EIGEN_FLOOR = 0.5
POWER_ITERATIONS = 200
CG_RTOL = 1e-8
STATIONARITY_TOL = 1e-6
MAX_ORDER = 3


class ConjugateGradientError(RuntimeError):
    def __init__(self, residual, iterations):
        super().__init__(f"conjugate gradient stalled at relative residual {residual:.3e} "
                         f"after {iterations} iterations")
        self.residual = residual


class NonStationaryError(ValueError):
    """The expansion point does not solve the estimating equation."""


class DampenedHessian:
    """``H + c I`` with ``c = max(0, floor - lambda_min(H))``.

    Parameters
    ----------
    hvp : callable
        Maps a (B, p) block of vectors to the (B, p) block of ``H v``.
    dim : int
    floor : float
    seed : int
        Seeds the power-iteration start vector.

    Notes
    -----
    ``H`` is assembled once from ``dim`` Hessian-vector products (one batched
    call); the Gershgorin bound ``sigma`` needs its entries.  The smallest
    eigenvalue is then estimated by power iteration on ``sigma I - H``.
    """

    def __init__(self, hvp, dim, floor=EIGEN_FLOOR, seed=0):
        self.dim = int(dim)
        H = np.asarray(hvp(np.eye(self.dim)), dtype=float).reshape(self.dim, self.dim)
        self.matrix = 0.5 * (H + H.T)
        self.lambda_min = estimate_min_eigenvalue(self.matrix, seed)
        self.damping = max(0.0, floor - self.lambda_min)

    @classmethod
    def from_model(cls, model, params, X, y, floor=EIGEN_FLOOR, seed=0):
        if not getattr(model, "differentiable", False):
            raise UnsupportedFamilyError(f"{model!r} has no smooth objective")
        theta = params.theta if isinstance(params, ModelParams) else np.asarray(params)
        return cls(lambda V: model.hvp(theta, X, y, V), theta.size, floor, seed)

    def apply(self, V):
        return V @ self.matrix + self.damping * V

    def solve(self, rhs):
        """Solve ``(H + c I) x = rhs`` for ``rhs`` of shape (p,) or (B, p)."""
        return conjugate_gradient(self.apply, rhs, CG_RTOL, 10 * self.dim)


def estimate_min_eigenvalue(H, seed=0, iterations=POWER_ITERATIONS):
    """Smallest eigenvalue of symmetric ``H`` by power iteration on ``sigma I - H``."""
    H = np.asarray(H, dtype=float)
    sigma = float(np.max(np.sum(np.abs(H), axis=1)))
    if sigma == 0.0:
        return 0.0
    v = np.random.default_rng(seed).normal(size=H.shape[0])
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iterations):
        w = sigma * v - H @ v
        mu = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
    return sigma - mu


def conjugate_gradient(apply, rhs, rtol, max_iter):
    """Column-batched CG for a symmetric positive-definite operator."""
    rhs = np.asarray(rhs, dtype=float)
    single = rhs.ndim == 1
    B = rhs[None, :] if single else rhs
    x = np.zeros_like(B)
    r = B.copy()
    p = r.copy()
    target = rtol * np.linalg.norm(B, axis=1)
    rs = np.sum(r * r, axis=1)
    active = np.sqrt(rs) > target
    it = 0
    while np.any(active):
        if it >= max_iter:
            rel = np.max(np.sqrt(rs[active]) / np.linalg.norm(B[active], axis=1))
            raise ConjugateGradientError(rel, it)
        Ap = apply(p)
        denom = np.sum(p * Ap, axis=1)
        a = np.where(active, rs / np.where(active, denom, 1.0), 0.0)
        x += a[:, None] * p
        r -= a[:, None] * Ap
        rs_new = np.sum(r * r, axis=1)
        beta = np.where(active, rs_new / np.where(active, rs, 1.0), 0.0)
        p = r + beta[:, None] * p
        rs = rs_new
        active = np.sqrt(rs) > target
        it += 1
    return x[0] if single else x


def dampened_hessian_solve(model, params, data: Dataset, rhs, floor=EIGEN_FLOOR, seed=0):
    return DampenedHessian.from_model(model, params, data.X, data.y, floor, seed).solve(rhs)


@dataclass(frozen=True)
class LooDerivatives:
    """Directional derivatives ``delta^k theta`` for ``k = 1..order``."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(np.asarray(t, dtype=float) for t in self.terms)
        if not terms:
            raise ValueError("at least one derivative order is required")
        if not all(np.all(np.isfinite(t)) for t in terms):
            raise ValueError("derivatives must be finite")
        object.__setattr__(self, "terms", terms)

    @property
    def order(self):
        return len(self.terms)


def _check_order(K):
    if not (1 <= K <= MAX_ORDER):
        raise ValueError(f"influence-function order must lie in [1, {MAX_ORDER}], got {K}")


def _check_stationary(model, theta, X, y):
    g = np.max(np.abs(model.gradient(theta, X, y)))
    if not g <= STATIONARITY_TOL:
        raise NonStationaryError(f"|G(theta)|_inf = {g:.2e} exceeds {STATIONARITY_TOL}")


def loo_taylor_coefficients(model, params, X, y, K, indices=None, hessian=None, chunk=64):
    """Taylor coefficients ``theta_1..theta_K`` for every held-out index.

    Returns an array of shape (K, len(indices), p).
    """
    _check_order(K)
    theta = params.theta if isinstance(params, ModelParams) else np.asarray(params, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape[0], theta.size
    _check_stationary(model, theta, X, y)
    idx = np.arange(n) if indices is None else np.asarray(indices)
    hessian = hessian or DampenedHessian.from_model(model, theta, X, y)
    out = np.empty((K, idx.size, p))
    for start in range(0, idx.size, chunk):
        rows = idx[start:start + chunk]
        B = rows.size
        w = np.zeros((K + 1, B, n))
        w[0] = 1.0
        w[1, np.arange(B), rows] = -1.0
        t = np.zeros((K + 1, B, p))
        t[0] = theta
        for k in range(1, K + 1):
            # coefficient k of G with theta_k still zero
            G = model.estimating_equation(Jet(t[:k + 1]), X, y, Jet(w[:k + 1]))
            t[k] = -hessian.solve(G.coeffs[k])
        out[:, start:start + B] = t[1:]
    return out


def loo_directional_derivatives(model, params, data: Dataset, i: int, K: int) -> LooDerivatives:
    """``delta^k theta`` for removing row ``i``, ``k = 1..K``."""
    coef = loo_taylor_coefficients(model, params, data.X, data.y, K, indices=[i])
    return LooDerivatives(tuple(math.factorial(k + 1) * coef[k, 0] for k in range(K)))


def approx_loo_params(theta_hat, derivs: LooDerivatives, family: str = "") -> ModelParams:
    """``theta_hat + sum_k delta^k / k!``."""
    theta = theta_hat.theta if isinstance(theta_hat, ModelParams) else np.asarray(theta_hat, dtype=float)
    family = theta_hat.family if isinstance(theta_hat, ModelParams) else family
    total = theta.copy()
    for k, d in enumerate(derivs.terms, start=1):
        total = total + d / math.factorial(k)
    return ModelParams(total, family)


def compute_if_loo(model, data: Dataset, test_X, orders, seed: int = 0, params=None):
    """Influence-function artifacts for each order in ``orders``.

    One full fit, one Hessian factorization and ``n`` jet evaluations per
    order; no refits.  Returns ``{K: LooArtifacts}``.  An integer ``orders``
    returns the artifacts directly.
    """
    single = np.isscalar(orders)
    orders = [int(orders)] if single else sorted({int(k) for k in orders})
    for K in orders:
        _check_order(K)
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    params = params or model.fit(data, seed=seed)
    coef = loo_taylor_coefficients(model, params, data.X, data.y, max(orders))
    full_test = model.predict(params, test_X)
    result = {}
    theta_i = np.broadcast_to(params.theta, coef.shape[1:]).copy()
    for K in range(1, max(orders) + 1):
        theta_i += coef[K - 1]
        if K not in orders:
            continue
        pred_train = np.empty(data.n)
        pred_test = np.empty((data.n, test_X.shape[0]))
        for i in range(data.n):
            mp = ModelParams(theta_i[i], params.family)
            pred_train[i] = model.predict(mp, data.X[i:i + 1])[0]
            pred_test[i] = model.predict(mp, test_X)
        result[K] = LooArtifacts.from_predictions(data.y, pred_train, pred_test, full_test)
    return result[orders[0]] if single else result


def jawa_interval(model, data: Dataset, test_X, train_weights, test_weights, alpha: float,
                  K: int, seed: int = 0) -> list[PredictionInterval]:
    """JAW computed on order-``K`` influence-function artifacts, one interval
    per row of ``test_X``."""
    loo = compute_if_loo(model, data, test_X, K, seed=seed)
    test_weights = np.atleast_1d(np.asarray(test_weights, dtype=float))
    return [jaw_interval(loo, (train_weights, test_weights[j]), alpha, j) for j in range(loo.m)]
