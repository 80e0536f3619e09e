"""Benchmark harness: data loading, configuration and replicated experiments.

Each replicate draws a training set, standardizes on it, draws a shifted
test set, computes likelihood-ratio weights and runs every configured
method on every test point.  Output is one flat table (see
:data:`COLUMNS`) with per-replicate rows followed by ``mean`` and ``se``
aggregate rows.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import audit
from .empdist import PredictionInterval
from .iflow import compute_if_loo
from .infer import (
    compute_cv,
    compute_loo,
    compute_split,
    cv_plus_interval,
    jackknife_interval,
    jackknife_mm_interval,
    jackknife_plus_interval,
    jaw_interval,
    naive_interval,
    split_interval,
    weighted_split_interval,
)
from .metrics import (
    ReplicateResult,
    SingleClassError,
    auroc,
    coverage,
    fraction_infinite,
    mean_and_se,
    median_width,
)
from .predictors import Dataset, MlpConfig, make_predictor
from .shift import ShiftSpec, effective_sample_size, sample_shifted_test
from .weights_est import fit_ratio

log = logging.getLogger(__name__)

COLUMNS = ("replicate", "method", "alpha", "coverage", "median_width", "frac_infinite",
           "ess", "runtime_ms", "tau", "auroc")

LOO_METHODS = ("jaw", "jackknife+", "jackknife", "jackknife-mm")
IF_METHODS = ("jawa", "if-jackknife+", "if-jackknife", "if-jackknife-mm")
BASE_METHODS = LOO_METHODS + IF_METHODS + ("naive", "cv+", "split", "weighted-split")
# methods with an error-assessment counterpart
ASSESSABLE = ("jaw", "jackknife+", "cv+", "split", "weighted-split", "jawa", "if-jackknife+")

SYNTHETIC = "synthetic"
# penalties are per row (the penalty term is lambda * n * |theta|^2 / 2)
DEFAULT_LAMBDA = {"ridge": 0.01, "mlp": 1.0}
LAMBDA_GRID = (0.5, 1, 2, 4, 8, 16, 32, 64, 96, 128)
TUNE_THRESHOLD = 0.875


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


class EmptyDatasetError(ValueError):
    pass


class MethodError(RuntimeError):
    """A method failed inside a replicate; ``method`` names it."""

    def __init__(self, method, cause):
        super().__init__(f"{method}: {type(cause).__name__}: {cause}")
        self.method = method


# --------------------------------------------------------------------------- data

def load_csv(path, max_rows=None) -> Dataset:
    """Read a numeric CSV with one header row; the last column is the label."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDatasetError(f"{path}: file is empty")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ValueError(f"{path}: row {lineno} has a non-numeric field") from None
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"{path}: row {lineno} has a non-finite field")
            rows.append(values)
            if max_rows is not None and len(rows) >= max_rows:
                break
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    if len(header) < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")
    A = np.asarray(rows)
    return Dataset(A[:, :-1], A[:, -1])


def synthetic_noise_scale(x, kind):
    if kind == "homoscedastic":
        return np.ones_like(x)
    if kind == "heteroscedastic":
        return np.sqrt(1.0 + x * x)
    raise ConfigError(f"unknown synthetic noise {kind!r}")


def synthetic_draw(rng, size, mean, slope, noise):
    """``x ~ N(mean, 1)`` and ``y = slope * x + sigma(x) * N(0, 1)``."""
    x = rng.normal(mean, 1.0, size=size)
    y = slope * x + synthetic_noise_scale(x, noise) * rng.normal(size=size)
    return x[:, None], y


class Standardizer:
    """Centre and scale columns with statistics of the training split."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        self.mean = A.mean(axis=0)
        sd = A.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)

    def __call__(self, A):
        return (np.asarray(A, dtype=float) - self.mean) / self.scale


# ------------------------------------------------------------------------- config

@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = SYNTHETIC
    methods: tuple = ("jaw", "jackknife+")
    alpha: float = 0.1
    replicates: int = 10
    train_size: int = 200
    beta: tuple = (1.5,)
    weights: str = "oracle"
    predictor: str = "ridge"
    lam: float | None = None
    if_order: tuple = (1,)
    cv_folds: int = 10
    tau_grid: int = 0
    out: str = "-"
    seed: int = 0
    workers: int = 1
    max_rows: int | None = None
    sample_fraction: float = 0.5
    test_points: int = 50
    synthetic_slope: float = 1.0
    synthetic_noise: str = "heteroscedastic"
    hidden_units: int = 25
    epochs: int = 2000
    batch_size: int = 50
    learning_rate: float = 1e-4
    timing: bool = False

    def validate(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.train_size < 2:
            raise ConfigError("train_size must be at least 2")
        if not (0 < self.alpha < 1):
            raise ConfigError("alpha must lie in (0, 1)")
        if self.weights not in ("oracle", "estimated"):
            raise ConfigError("weights must be 'oracle' or 'estimated'")
        if self.predictor not in ("ridge", "mlp", "constant-mean"):
            raise ConfigError(f"unknown predictor {self.predictor!r}")
        if not self.methods:
            raise ConfigError("no methods configured")
        for m in self.methods:
            if m not in BASE_METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(BASE_METHODS)}")
        for k in self.if_order:
            if k not in (1, 2, 3):
                raise ConfigError("if_order entries must be 1, 2 or 3")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.tau_grid < 0 or self.workers < 1 or self.test_points < 1:
            raise ConfigError("tau_grid, workers and test_points must be nonnegative/positive")
        if self.dataset == SYNTHETIC and len(self.beta) != 1:
            raise ConfigError("the synthetic dataset has one feature; give one beta entry")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        synthetic_noise_scale(np.zeros(1), self.synthetic_noise)
        return self

    def method_labels(self):
        """Output method names, with influence-function methods expanded per order."""
        labels = []
        for m in self.methods:
            if m in IF_METHODS:
                labels.extend(f"{m}-{k}" for k in sorted(set(self.if_order)))
            else:
                labels.append(m)
        return labels

    @property
    def penalty(self):
        """Configured penalty, or the family default when unset."""
        if self.lam is not None:
            return float(self.lam)
        return DEFAULT_LAMBDA.get(self.predictor, 1.0)

    def model(self):
        cfg = MlpConfig(hidden_units=self.hidden_units, l2_lambda=self.penalty, epochs=self.epochs,
                        batch_size=self.batch_size, learning_rate=self.learning_rate)
        return make_predictor(self.predictor, self.penalty, cfg)


_KEY_ALIASES = {"lambda": "lam", "if_orders": "if_order", "method": "methods"}
_LIST_KEYS = {"methods": str, "beta": float, "if_order": int}


def _field_types():
    return {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, values):
    """Convert raw strings for ``key``; ``values`` is a list of raw strings."""
    key = _KEY_ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        if key in _LIST_KEYS:
            conv = _LIST_KEYS[key]
            items = [p.strip() for v in values for p in v.split(",") if p.strip()]
            return key, tuple(conv(p) for p in items)
        raw = values[-1].strip()
        default = getattr(ExperimentConfig, key)
        if key in ("max_rows", "lam"):
            conv = int if key == "max_rows" else float
            return key, None if raw.lower() in ("", "none") else conv(raw)
        if isinstance(default, bool):
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return key, raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return key, int(raw)
        if isinstance(default, float):
            return key, float(raw)
        return key, raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {values!r}") from None


def parse_config_text(text) -> dict:
    """``key=value`` lines; repeated keys accumulate into lists."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        raw.setdefault(key, []).append(value)
    return dict(_coerce(k, v) for k, v in raw.items())


def build_config(file_text=None, overrides=None) -> ExperimentConfig:
    values = parse_config_text(file_text) if file_text else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        k, v = _coerce(key, value if isinstance(value, list) else [str(value)])
        values[k] = v
    return ExperimentConfig(**values).validate()


# --------------------------------------------------------------------- experiment

@dataclass
class ResultTable:
    rows: list
    failed_replicates: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v) if math.isinf(v) else f"{v:.12g}"
    return str(v)


def draw_replicate(cfg, data, r):
    """Draws for replicate ``r``.

    Returns ``(X, y, test_X, test_y, shift_spec, feature_scaler)`` with raw
    features and labels; ``feature_scaler`` maps raw features to the scale
    the shift weights are defined on.
    """
    rng = np.random.default_rng([cfg.seed, r])
    beta = np.asarray(cfg.beta, dtype=float)
    if data is None:
        X, y = synthetic_draw(rng, cfg.train_size, 0.0, cfg.synthetic_slope, cfg.synthetic_noise)
        # exponential tilting of N(0, 1) by exp(beta x) is N(beta, 1)
        Xt, yt = synthetic_draw(rng, cfg.test_points, float(beta[0]), cfg.synthetic_slope,
                                cfg.synthetic_noise)
        return X, y, Xt, yt, ShiftSpec(beta), lambda A: A
    if cfg.train_size >= data.n:
        raise ConfigError(f"train_size {cfg.train_size} leaves no pool in {data.n} rows")
    if beta.size != data.d:
        raise ConfigError(f"beta has {beta.size} entries but the data has {data.d} features")
    idx = rng.permutation(data.n)
    tr, pool = np.sort(idx[: cfg.train_size]), np.sort(idx[cfg.train_size:])
    scaler = Standardizer(data.X[tr])
    spec = ShiftSpec(beta, cfg.sample_fraction, seed=int(rng.integers(2**63)))
    m = spec.test_size(pool.size)
    if m < 1:
        raise ConfigError("shifted test set is empty")
    chosen = pool[sample_shifted_test(scaler(data.X[pool]), spec, m)]
    return data.X[tr], data.y[tr], data.X[chosen], data.y[chosen], spec, scaler


def run_replicate(cfg: ExperimentConfig, data: Dataset | None, r: int) -> list[dict]:
    X, y, Xt, yt, spec, fscale = draw_replicate(cfg, data, r)
    Xs, Xts = fscale(X), fscale(Xt)
    # labels are standardized for every family; ridge has no intercept
    ymu, ysd = float(np.mean(y)), float(np.std(y)) or 1.0
    train = Dataset(Xs, (y - ymu) / ysd)
    model = cfg.model()
    model_seed = cfg.seed

    if cfg.weights == "oracle":
        w_train, w_test = spec.weights(Xs), spec.weights(Xts)
    else:
        est = fit_ratio(Xs, Xts, seed=cfg.seed)
        w_train, w_test = est.weights(Xs), est.weights(Xts)
    ess = effective_sample_size(w_train)
    m = Xts.shape[0]
    orders = sorted(set(cfg.if_order))

    artifacts, elapsed = {}, {}

    users = {"loo": LOO_METHODS, "if": IF_METHODS, "cv": ("cv+",), "split": ("split", "weighted-split")}

    def timed(key, fn):
        t0 = time.perf_counter()
        try:
            artifacts[key] = fn()
        except Exception as exc:
            raise MethodError("/".join(m for m in cfg.methods if m in users[key]), exc) from exc
        elapsed[key] = time.perf_counter() - t0
        return artifacts[key]

    need = set(cfg.methods)
    if need & set(LOO_METHODS):
        timed("loo", lambda: compute_loo(model, train, Xts, seed=model_seed).affine(ysd, ymu))
    if need & set(IF_METHODS):
        def if_all():
            res = compute_if_loo(model, train, Xts, orders, seed=model_seed)
            return {k: v.affine(ysd, ymu) for k, v in res.items()}
        timed("if", if_all)
    if "cv+" in need:
        timed("cv", lambda: compute_cv(model, train, Xts, k=min(cfg.cv_folds, train.n),
                                       seed=model_seed).affine(ysd, ymu))
    if need & {"split", "weighted-split"}:
        timed("split", lambda: compute_split(model, train, Xts, seed=model_seed).affine(ysd, ymu))

    a = cfg.alpha
    # (method label) -> (artifact key, interval builder for column j, assessor or None)
    plans = {}
    for meth in cfg.methods:
        if meth == "jaw":
            plans[meth] = ("loo", lambda j: jaw_interval(artifacts["loo"], (w_train, w_test[j]), a, j),
                           lambda j, c: audit.jaw_error_assessment(artifacts["loo"], (w_train, w_test[j]), c, j),
                           lambda j: artifacts["loo"].full_pred_test[j])
        elif meth == "jackknife+":
            plans[meth] = ("loo", lambda j: jackknife_plus_interval(artifacts["loo"], a, j),
                           lambda j, c: audit.jackknife_plus_error_assessment(artifacts["loo"], c, j),
                           lambda j: artifacts["loo"].full_pred_test[j])
        elif meth == "jackknife":
            plans[meth] = ("loo", lambda j: jackknife_interval(artifacts["loo"], a, j), None, None)
        elif meth == "jackknife-mm":
            plans[meth] = ("loo", lambda j: jackknife_mm_interval(artifacts["loo"], a, j), None, None)
        elif meth == "cv+":
            plans[meth] = ("cv", lambda j: cv_plus_interval(artifacts["cv"], a, j),
                           lambda j, c: audit.cv_plus_error_assessment(artifacts["cv"], c, j),
                           lambda j: artifacts["cv"].full_pred_test[j])
        elif meth == "split":
            plans[meth] = ("split", lambda j: split_interval(artifacts["split"], a, j),
                           lambda j, c: audit.split_error_assessment(artifacts["split"], c),
                           lambda j: artifacts["split"].pred_test[j])
        elif meth == "weighted-split":
            plans[meth] = ("split",
                           lambda j: weighted_split_interval(artifacts["split"], w_train, w_test[j], a, j),
                           lambda j, c: audit.split_error_assessment(artifacts["split"], c, w_train, w_test[j]),
                           lambda j: artifacts["split"].pred_test[j])
        elif meth == "naive":
            plans[meth] = ("naive", None, None, None)
        else:
            for k in orders:
                label = f"{meth}-{k}"
                get = (lambda k=k: artifacts["if"][k])
                if meth == "jawa":
                    plans[label] = ("if", lambda j, g=get: jaw_interval(g(), (w_train, w_test[j]), a, j),
                                    lambda j, c, g=get: audit.jawa_error_assessment(g(), (w_train, w_test[j]), c, j),
                                    lambda j, g=get: g().full_pred_test[j])
                elif meth == "if-jackknife+":
                    plans[label] = ("if", lambda j, g=get: jackknife_plus_interval(g(), a, j),
                                    lambda j, c, g=get: audit.jackknife_plus_error_assessment(g(), c, j),
                                    lambda j, g=get: g().full_pred_test[j])
                elif meth == "if-jackknife":
                    plans[label] = ("if", lambda j, g=get: jackknife_interval(g(), a, j), None, None)
                else:
                    plans[label] = ("if", lambda j, g=get: jackknife_mm_interval(g(), a, j), None, None)

    taus = None
    if cfg.tau_grid > 0:
        base = artifacts.get("loo") or artifacts.get("cv")
        if base is None and "if" in artifacts:
            base = artifacts["if"][orders[-1]]
        resid = base.loo_residuals if base is not None else artifacts["split"].residuals
        taus = audit.tau_grid(resid, cfg.tau_grid)

    rows = []
    for label, (key, build, assess_fn, center) in sorted(plans.items()):
        try:
            t0 = time.perf_counter()
            if key == "naive":
                ivs = naive_interval(model, train, Xts, a, seed=model_seed)
                ivs = [PredictionInterval(iv.lower * ysd + ymu, iv.upper * ysd + ymu) for iv in ivs]
            else:
                ivs = [build(j) for j in range(m)]
            res = ReplicateResult.from_intervals(ivs, yt)
            runtime = (time.perf_counter() - t0 + elapsed.get(key, 0.0)) * 1e3
            rows.append(dict(replicate=r, method=label, alpha=a, coverage=coverage(res),
                             median_width=median_width(res), frac_infinite=fraction_infinite(res),
                             ess=ess, runtime_ms=runtime if cfg.timing else None))
            if taus is not None and assess_fn is not None:
                err = np.abs(yt - np.array([center(j) for j in range(m)]))
                for t, tau in enumerate(taus):
                    crit = audit.ErrorCriteria.tolerance(float(tau))
                    scores = [assess_fn(j, crit).p_no_error for j in range(m)]
                    try:
                        value = auroc(scores, err <= tau)
                    except SingleClassError:
                        value = None
                    rows.append(dict(replicate=r, method=label, alpha=a, ess=ess, tau=float(tau),
                                     auroc=value, tau_index=t))
        except Exception as exc:
            raise MethodError(label, exc) from exc
    return rows


def _safe_replicate(args):
    cfg, data, r = args
    try:
        return r, run_replicate(cfg, data, r), None
    except ConfigError:
        raise
    except Exception as exc:  # one failed replicate must not sink the run
        return r, [], f"{type(exc).__name__}: {exc}"


def _row_key(row):
    return (row["method"], row.get("tau_index", -1))


def _aggregate(rows):
    """Mean and standard-error rows per method and per tau-grid position.

    Tau grids are built from each replicate's residuals, so AUROC rows are
    pooled by grid position and report the mean tau.
    """
    out = []
    groups = {}
    for row in rows:
        groups.setdefault(_row_key(row), []).append(row)
    for key in sorted(groups):
        group = groups[key]
        is_tau = key[1] >= 0
        cols = ("tau", "auroc") if is_tau else ("coverage", "median_width", "frac_infinite", "ess", "runtime_ms")
        mean_row = dict(replicate="mean", method=key[0], alpha=group[0]["alpha"])
        se_row = dict(replicate="se", method=key[0], alpha=group[0]["alpha"])
        for c in cols:
            vals = [math.nan if row.get(c) is None else row[c] for row in group]
            if all(math.isnan(v) for v in vals):
                continue
            if any(math.isinf(v) for v in vals):
                mean_row[c], se_row[c] = math.inf, math.nan
            else:
                mean_row[c], se_row[c] = mean_and_se(vals)
        if is_tau:
            se_row["tau"] = mean_row["tau"]
        out.extend([mean_row, se_row])
    return out


def run_experiment(cfg: ExperimentConfig, data: Dataset | None = None) -> ResultTable:
    """Run all replicates; rows sorted by (replicate, method, tau), then aggregates.

    A replicate that raises is logged and left out; its index is recorded in
    ``ResultTable.failed_replicates``.
    """
    cfg.validate()
    if data is None and cfg.dataset != SYNTHETIC:
        data = load_csv(cfg.dataset, cfg.max_rows)
    jobs = [(cfg, data, r) for r in range(cfg.replicates)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(job) for job in jobs]
    rows, failed = [], []
    for r, rep_rows, error in sorted(results, key=lambda t: t[0]):
        if error is not None:
            log.error("replicate %d aborted in %s", r, error)
            failed.append(r)
            continue
        rows.extend(sorted(rep_rows, key=_row_key))
    return ResultTable(rows + _aggregate(rows), failed)


def mean_of(table: ResultTable, method: str, column: str = "coverage") -> float:
    for row in table.rows:
        if row["replicate"] == "mean" and row["method"] == method and row.get("tau") is None:
            return row[column]
    raise KeyError(method)


def tune_lambda(cfg: ExperimentConfig, data: Dataset | None = None, grid=LAMBDA_GRID,
                threshold=TUNE_THRESHOLD):
    """Smallest penalty whose first-order IF jackknife+ mean coverage reaches ``threshold``.

    Returns ``(chosen or None, [(lambda, coverage), ...])``.
    """
    cfg = replace(cfg, methods=("if-jackknife+",), if_order=(1,), tau_grid=0)
    history = []
    for lam in grid:
        table = run_experiment(replace(cfg, lam=float(lam)), data)
        cov = mean_of(table, "if-jackknife+-1")
        history.append((float(lam), cov))
        if cov >= threshold:
            return float(lam), history
    return None, history
