"""Coverage, width and ranking metrics for benchmark replicates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class SingleClassError(ValueError):
    """AUROC is undefined when only one class is present."""


@dataclass(frozen=True)
class ReplicateResult:
    """Per-test-point outcomes of one method in one replicate."""

    covered: np.ndarray
    widths: np.ndarray
    p_no_error: np.ndarray | None = None
    no_error: np.ndarray | None = None

    def __post_init__(self):
        covered = np.asarray(self.covered, dtype=bool).ravel()
        widths = np.asarray(self.widths, dtype=float).ravel()
        if covered.size != widths.size:
            raise ValueError("covered flags and widths differ in length")
        object.__setattr__(self, "covered", covered)
        object.__setattr__(self, "widths", widths)
        if (self.p_no_error is None) != (self.no_error is None):
            raise ValueError("scores and labels must be given together")
        if self.p_no_error is not None:
            s = np.asarray(self.p_no_error, dtype=float).ravel()
            lab = np.asarray(self.no_error, dtype=bool).ravel()
            if not (s.size == lab.size == covered.size):
                raise ValueError("scores and labels must match the test points")
            object.__setattr__(self, "p_no_error", s)
            object.__setattr__(self, "no_error", lab)

    @classmethod
    def from_intervals(cls, intervals, labels):
        covered = [iv.contains(float(y)) for iv, y in zip(intervals, labels)]
        return cls(covered, [iv.width for iv in intervals])


def coverage(result: ReplicateResult) -> float:
    if result.covered.size == 0:
        raise ValueError("coverage of an empty test set is undefined")
    return float(np.mean(result.covered))


def median_width(result: ReplicateResult) -> float:
    """Lower median of the widths; infinite widths sort last."""
    if result.widths.size == 0:
        raise ValueError("median of an empty test set is undefined")
    w = np.sort(result.widths)
    return float(w[(w.size - 1) // 2])


def fraction_infinite(result: ReplicateResult) -> float:
    return float(np.mean(~np.isfinite(result.widths)))


def coverage_variance(coverages) -> float:
    """Population variance across replicates."""
    c = np.asarray(coverages, dtype=float)
    if c.size == 0:
        raise ValueError("no replicates")
    return float(np.var(c))


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with ties counted one half."""
    s = np.asarray(scores, dtype=float).ravel()
    lab = np.asarray(labels, dtype=bool).ravel()
    if s.size != lab.size:
        raise ValueError("scores and labels differ in length")
    n_pos = int(lab.sum())
    n_neg = lab.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUROC needs both positive and negative labels")
    ranks = rankdata(s)
    u = ranks[lab].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mean_and_se(values):
    """Mean and standard error over replicates (se is 0 for one value)."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return math.nan, math.nan
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se
