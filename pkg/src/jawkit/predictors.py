"""Symmetric regression algorithms.

Every predictor treats its training rows as a multiset: rows are put in a
canonical (lexicographic) order before any computation, so permuting the
training data cannot change the fitted parameters.

The differentiable families (:class:`Ridge`, :class:`MLP`) expose the
weighted estimating equation

    G(theta, omega) = (1/n) * (g0(theta) + sum_i omega_i * g_i(theta))

with ``g_i`` the gradient of the squared-error loss ``0.5 * (y_i - f(x_i))**2``
and ``g0 = lam * n * theta``.  ``G(theta_hat, 1) = 0`` at the fitted
parameters.  :meth:`estimating_equation` accepts :class:`~jawkit.jets.Jet`
arguments, which is how Hessian-vector products and the higher-order
influence functions are computed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import jets
from .jets import Jet

log = logging.getLogger(__name__)


class UnsupportedFamilyError(TypeError):
    """Raised when a gradient is requested from a non-differentiable family."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class Dataset:
    """Training rows: features ``X`` (n, d) and labels ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("features and labels must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def drop(self, i):
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return Dataset(self.X[keep], self.y[keep])

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class ModelParams:
    theta: np.ndarray
    family: str

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if not np.all(np.isfinite(theta)):
            raise ValueError("model parameters must be finite")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)


def canonical_order(X, y):
    """Row permutation sorting ``[X | y]`` lexicographically."""
    keys = np.column_stack([X, y])
    return np.lexsort(keys.T[::-1])


def _check_dim(X, d):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != d:
        raise ValueError(f"expected {d} features, got {X.shape[1]}")
    return X


class ConstantMean:
    """Predicts the mean training label everywhere."""

    family = "constant-mean"
    differentiable = False

    def fit(self, data: Dataset, seed: int = 0) -> ModelParams:
        y = np.sort(data.y)
        return ModelParams([y.mean()], self.family)

    def predict(self, params: ModelParams, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.full(X.shape[0], params.theta[0])

    def estimating_equation(self, *args, **kwargs):
        raise UnsupportedFamilyError("constant-mean predictor has no objective gradient")

    point_gradients = regularizer_gradient = hvp = estimating_equation

    def __repr__(self):
        return "ConstantMean()"


class _Differentiable:
    """Shared machinery for families with a smooth penalized objective."""

    differentiable = True
    lam: float

    def estimating_equation(self, theta, X, y, omega=None):
        """``G(theta, omega) = (lam * sum(omega) * theta + sum_i omega_i g_i(theta)) / n``.

        At unit weights the penalty term is ``lam * n * theta``.  Jets in,
        jets out.

        ``theta`` has shape (p,) or (B, p) and ``omega`` (n,) or (B, n).
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n = X.shape[0]
        squeeze = np.ndim(theta.coeffs[0] if isinstance(theta, Jet) else theta) == 1
        if squeeze:
            theta = theta[None, :] if isinstance(theta, Jet) else np.asarray(theta)[None, :]
        if omega is None:
            omega = np.ones(n)
        if isinstance(omega, Jet):
            if omega.coeffs.ndim == 2:
                omega = omega[None, :]
        else:
            omega = np.atleast_2d(np.asarray(omega, dtype=float))
        grads = self._weighted_grad_sum(theta, X, y, omega)
        # every row carries an equal share of the penalty, so zeroing a weight
        # reproduces the refit on the remaining rows
        if isinstance(omega, Jet):
            share = omega.sum(axis=1) * self.lam
            G = (theta * share[:, None] + grads) / n
        else:
            G = (theta * (self.lam * omega.sum(axis=1))[:, None] + grads) / n
        return G[0] if squeeze else G

    def point_gradients(self, params, X, y) -> np.ndarray:
        """Per-row loss gradients ``g_i(theta)`` as an (n, p) array."""
        theta = params.theta if isinstance(params, ModelParams) else np.asarray(params)
        n = X.shape[0]
        # a unit weight on row i alone recovers g_i
        G = self._weighted_grad_sum(Jet.constant(np.broadcast_to(theta, (n, theta.size)), 0),
                                    np.asarray(X, float), np.asarray(y, float),
                                    np.eye(n))
        return G.primal

    def regularizer_gradient(self, params, n) -> np.ndarray:
        theta = params.theta if isinstance(params, ModelParams) else np.asarray(params)
        return self.lam * n * theta

    def gradient(self, params, X, y, omega=None) -> np.ndarray:
        """``G(theta, omega)`` as a plain array."""
        theta = params.theta if isinstance(params, ModelParams) else np.asarray(params)
        return self.estimating_equation(Jet.constant(theta, 0), X, y, omega).primal

    def hvp(self, params, X, y, v, omega=None) -> np.ndarray:
        """``H(theta, omega) @ v`` by one forward-mode pass; ``v`` may be (B, p)."""
        theta = params.theta if isinstance(params, ModelParams) else np.asarray(params)
        v = np.asarray(v, dtype=float)
        batch = v.ndim == 2
        V = v if batch else v[None, :]
        path = Jet.line(np.broadcast_to(theta, V.shape), V, 1)
        out = self.estimating_equation(path, X, y, omega).coeffs[1]
        return out if batch else out[0]

    def hessian(self, params, X, y, omega=None) -> np.ndarray:
        p = np.size(params.theta if isinstance(params, ModelParams) else params)
        H = self.hvp(params, X, y, np.eye(p), omega)
        return 0.5 * (H + H.T)


class Ridge(_Differentiable):
    """Linear least squares with penalty ``0.5 * lam * ||theta||**2`` on the
    mean loss, i.e. ``theta = (X'X + lam n I)^{-1} X'y``."""

    family = "ridge"

    def __init__(self, lam=1.0):
        if lam < 0:
            raise ValueError("ridge penalty must be nonnegative")
        self.lam = float(lam)

    def __repr__(self):
        return f"Ridge(lam={self.lam})"

    def fit(self, data: Dataset, seed: int = 0) -> ModelParams:
        order = canonical_order(data.X, data.y)
        X, y = data.X[order], data.y[order]
        n, d = X.shape
        A = X.T @ X + self.lam * n * np.eye(d)
        if self.lam == 0 and np.linalg.matrix_rank(A) < d:
            raise np.linalg.LinAlgError("singular ridge system with lam = 0")
        return ModelParams(np.linalg.solve(A, X.T @ y), self.family)

    def predict(self, params: ModelParams, X) -> np.ndarray:
        X = _check_dim(X, params.theta.size)
        return X @ params.theta

    def n_params(self, d):
        return d

    def objective(self, theta, X, y, omega=None):
        n = X.shape[0]
        omega = np.ones(n) if omega is None else omega
        r = y - X @ theta
        return (0.5 * self.lam * np.sum(omega) * theta @ theta + 0.5 * np.sum(omega * r**2)) / n

    def _weighted_grad_sum(self, theta, X, y, omega):
        # theta (B, p), omega (B, n) -> sum_i omega_i * x_i * (x_i . theta - y_i)
        r = jets.einsum("nd,bd->bn", X, theta) - y
        return jets.einsum("bn,nd->bd", omega * r, X)


@dataclass(frozen=True)
class MlpConfig:
    hidden_units: int = 25
    l2_lambda: float = 1.0
    epochs: int = 2000
    batch_size: int = 50
    learning_rate: float = 1e-4
    seed: int = 0
    polish: bool = True

    def __post_init__(self):
        for name in ("hidden_units", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class MLP(_Differentiable):
    """One hidden layer of logistic units and a linear output.

    Parameters are packed as ``[W (h*d), b (h), v (h), c]`` with
    ``f(x) = v . sigmoid(W x + b) + c``.

    Training runs the configured mini-batch schedule (Adam, batches drawn by
    a seeded shuffle of the canonical row order) and then polishes to a
    stationary point of the full penalized objective with L-BFGS followed
    by a few Newton steps, so that influence-function expansions are taken
    at an actual optimum.
    """

    family = "mlp"

    def __init__(self, config: MlpConfig | None = None):
        self.config = config or MlpConfig()
        self.lam = float(self.config.l2_lambda)
        self.h = int(self.config.hidden_units)

    def __repr__(self):
        return f"MLP({self.config})"

    def n_params(self, d):
        return self.h * d + 2 * self.h + 1

    def unpack(self, theta, d):
        h = self.h
        lead = theta.shape[:-1] if not isinstance(theta, Jet) else theta.shape[:-1]
        W = theta[..., : h * d].reshape(*lead, h, d)
        b = theta[..., h * d: h * d + h]
        v = theta[..., h * d + h: h * d + 2 * h]
        c = theta[..., h * d + 2 * h]
        return W, b, v, c

    def init_params(self, d, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(scale=1.0 / np.sqrt(d), size=(self.h, d))
        v = rng.normal(scale=1.0 / np.sqrt(self.h), size=self.h)
        return np.concatenate([W.ravel(), np.zeros(self.h), v, [0.0]])

    def predict(self, params: ModelParams, X) -> np.ndarray:
        theta = params.theta
        d = (theta.size - 2 * self.h - 1) // self.h
        X = _check_dim(X, d)
        W, b, v, c = self.unpack(theta, d)
        return expit(X @ W.T + b) @ v + c

    def _loss_and_grad(self, theta, X, y):
        """Mean squared-error loss plus penalty, and its gradient."""
        n, d = X.shape
        W, b, v, c = self.unpack(theta, d)
        s = expit(X @ W.T + b)
        r = s @ v + c - y
        loss = 0.5 * np.mean(r**2) + 0.5 * self.lam * theta @ theta
        t = (r[:, None] * v[None, :]) * s * (1 - s)
        grad = np.concatenate([(t.T @ X).ravel(), t.sum(0), s.T @ r, [r.sum()]]) / n
        return loss, grad + self.lam * theta

    def objective(self, theta, X, y, omega=None):
        n = X.shape[0]
        omega = np.ones(n) if omega is None else omega
        d = X.shape[1]
        W, b, v, c = self.unpack(theta, d)
        r = expit(X @ W.T + b) @ v + c - y
        return (0.5 * self.lam * np.sum(omega) * theta @ theta + 0.5 * np.sum(omega * r**2)) / n

    def fit(self, data: Dataset, seed: int | None = None) -> ModelParams:
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        order = canonical_order(data.X, data.y)
        X, y = data.X[order], data.y[order]
        n, d = X.shape
        h, lam = self.h, self.lam
        theta = self.init_params(d, seed)
        W, b, v, _ = self.unpack(theta, d)  # views, updated in place below
        grad = np.empty_like(theta)
        gW = grad[: h * d].reshape(h, d)
        gb, gv = grad[h * d: h * d + h], grad[h * d + h: h * d + 2 * h]
        rng = np.random.default_rng([seed, 1])
        m = np.zeros_like(theta)
        s2 = np.zeros_like(theta)
        b1, b2, eps = 0.9, 0.999, 1e-8
        step = 0
        bs = min(int(cfg.batch_size), n)
        batches = [slice(start, start + bs) for start in range(0, n, bs)]
        for epoch in range(int(cfg.epochs)):
            perm = rng.permutation(n) if bs < n else np.arange(n)
            Xp, yp = X[perm], y[perm]
            for sl in batches:
                Xb = Xp[sl]
                nb = Xb.shape[0]
                sig = expit(Xb @ W.T + b)
                r = sig @ v + theta[-1] - yp[sl]
                t = (r[:, None] * v) * (sig - sig * sig)
                np.dot(t.T, Xb, out=gW)
                t.sum(axis=0, out=gb)
                np.dot(sig.T, r, out=gv)
                grad[-1] = r.sum()
                grad /= nb
                grad += lam * theta
                step += 1
                m *= b1
                m += (1 - b1) * grad
                s2 *= b2
                s2 += (1 - b2) * grad * grad
                # bias-corrected Adam step in fused form
                c2 = np.sqrt(1 - b2**step)
                theta -= (cfg.learning_rate * c2 / (1 - b1**step)) * m / (np.sqrt(s2) + eps * c2)
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(epoch, np.nan)
        if cfg.polish:
            theta = self._polish(theta, X, y)
        return ModelParams(theta, self.family)

    def _polish(self, theta, X, y):
        res = minimize(self._loss_and_grad, theta, args=(X, y), jac=True,
                       method="L-BFGS-B",
                       options=dict(maxiter=50000, gtol=1e-11, ftol=0.0, maxcor=30))
        theta = res.x
        if not np.all(np.isfinite(theta)):
            raise TrainingDivergedError(self.config.epochs, np.nan)
        g = self.gradient(theta, X, y)
        for _ in range(8):
            gnorm = np.max(np.abs(g))
            if gnorm < 1e-13:
                break
            H = self.hessian(theta, X, y)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            cand = theta - step
            g_new = self.gradient(cand, X, y)
            if not np.max(np.abs(g_new)) < gnorm:
                break
            theta, g = cand, g_new
        return theta

    def _weighted_grad_sum(self, theta, X, y, omega):
        n, d = X.shape
        W, b, v, c = self.unpack(theta, d)
        z = jets.einsum("bhd,nd->bnh", W, X) + b[:, None, :]
        s = jets.sigmoid(z)
        r = jets.einsum("bnh,bh->bn", s, v) + c[:, None] - y
        wr = omega * r
        t = wr[:, :, None] * v[:, None, :] * (s - s * s)
        gW = jets.einsum("bnh,nd->bhd", t, X).reshape(t.shape[0], self.h * d)
        parts = [gW, t.sum(axis=1), jets.einsum("bn,bnh->bh", wr, s), wr.sum(axis=1)[:, None]]
        return jets.concatenate(parts, axis=1)


def exact_loo_ridge(data: Dataset, lam: float, i: int) -> ModelParams:
    """Ridge refit on the data without row ``i`` by a direct closed-form solve
    on the reduced rows (no rank-one updates)."""
    if data.n < 2:
        raise ValueError("cannot leave one out of a single-row dataset")
    keep = np.arange(data.n) != i
    X, y = data.X[keep], data.y[keep]
    m, d = X.shape
    return ModelParams(np.linalg.solve(X.T @ X + lam * m * np.eye(d), X.T @ y), "ridge")


def make_predictor(family: str, lam: float = 1.0, mlp_config: MlpConfig | None = None):
    family = family.lower()
    if family in ("constant-mean", "constant", "mean"):
        return ConstantMean()
    if family == "ridge":
        return Ridge(lam)
    if family == "mlp":
        return MLP(mlp_config or MlpConfig(l2_lambda=lam))
    raise ValueError(f"unknown predictor family {family!r}")
