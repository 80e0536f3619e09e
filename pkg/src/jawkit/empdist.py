"""Weighted empirical distributions of point masses and their quantiles.

A :class:`WeightedAtoms` holds finitely many real point masses together with
optional mass sitting at ``-inf`` and ``+inf``.  Every interval in the package
is read off such a distribution with :func:`quantile_minus` (tail mass at
``-inf``) or :func:`quantile_plus` (tail mass at ``+inf``).

Extended reals are plain Python floats: ``-math.inf``/``math.inf`` only ever
appear as *returned* quantiles or interval endpoints, never inside the atom
arrays, which are validated to be finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Accepted deviation of the total mass from one.
MASS_TOL = 1e-9

#: Cumulative mass within this distance below a level counts as reaching it.
#: Without it, masses like ten copies of 0.1 never reach level 1.0.
LEVEL_TOL = 1e-12


class InvalidDistributionError(ValueError):
    """Raised when atoms or masses violate the distribution invariants."""


@dataclass(frozen=True)
class WeightedAtoms:
    """Finite point masses plus optional mass at ``-inf`` and ``+inf``.

    Atoms with exactly equal values are merged on construction, and the
    stored ``values`` are sorted ascending.  Instances are immutable.

    Parameters
    ----------
    values : array-like, shape (k,)
        Finite atom locations, any order.
    masses : array-like, shape (k,)
        Nonnegative masses of the atoms.
    neg_inf_mass, pos_inf_mass : float
        Mass placed at ``-inf`` / ``+inf``.
    """

    values: np.ndarray
    masses: np.ndarray
    neg_inf_mass: float = 0.0
    pos_inf_mass: float = 0.0
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        masses = np.asarray(self.masses, dtype=float).ravel()
        if values.shape != masses.shape:
            raise InvalidDistributionError(
                f"values and masses differ in length: {values.size} vs {masses.size}")
        if not np.all(np.isfinite(values)):
            raise InvalidDistributionError(
                "atom values must be finite; put infinite mass in neg_inf_mass/pos_inf_mass")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise InvalidDistributionError("atom masses must be finite and nonnegative")
        neg, pos = float(self.neg_inf_mass), float(self.pos_inf_mass)
        if not (neg >= 0 and pos >= 0 and math.isfinite(neg) and math.isfinite(pos)):
            raise InvalidDistributionError("tail masses must be finite and nonnegative")
        total = math.fsum(masses) + neg + pos
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidDistributionError(f"total mass is {total!r}, expected 1")

        # sort by (value, mass) so the merged sums do not depend on input order
        order = np.lexsort((masses, values))
        values, masses = values[order], masses[order]
        if values.size:
            starts = np.flatnonzero(np.r_[True, values[1:] != values[:-1]])
            values = values[starts]
            masses = np.add.reduceat(masses, starts)
        values.flags.writeable = False
        masses.flags.writeable = False
        cum = np.cumsum(masses)
        cum.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "neg_inf_mass", neg)
        object.__setattr__(self, "pos_inf_mass", pos)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def uniform(cls, values, tail: str = "+"):
        """Masses ``1/(n+1)`` on each value and on one infinite tail.

        ``tail`` is ``"+"`` for mass at ``+inf`` and ``"-"`` for ``-inf``.
        """
        values = np.asarray(values, dtype=float).ravel()
        p = 1.0 / (values.size + 1)
        masses = np.full(values.size, p)
        if tail == "+":
            return cls(values, masses, pos_inf_mass=p)
        if tail == "-":
            return cls(values, masses, neg_inf_mass=p)
        raise ValueError(f"tail must be '+' or '-', got {tail!r}")

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class PredictionInterval:
    """Closed interval over the extended reals, ``lower <= upper``."""

    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo == math.inf or hi == -math.inf:
            raise ValueError(f"invalid endpoints ({lo}, {hi})")
        if lo > hi:
            raise ValueError(f"lower endpoint {lo} exceeds upper endpoint {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper

    def __contains__(self, y):
        return self.contains(y)

    def contains_interval(self, other: "PredictionInterval") -> bool:
        return self.lower <= other.lower and other.upper <= self.upper


def _check_level(beta):
    beta = float(beta)
    if not (0.0 < beta <= 1.0):
        raise ValueError(f"quantile level must lie in (0, 1], got {beta!r}")
    return beta


def quantile_plus(d: WeightedAtoms, beta: float) -> float:
    """Level-``beta`` quantile with the tail mass at ``+inf``.

    Returns ``inf{v : F(v) >= beta}`` where ``F`` accumulates the finite
    atoms and reaches its final value only at ``+inf``.  Mass at ``-inf``
    is disregarded.
    """
    beta = _check_level(beta)
    idx = np.searchsorted(d._cum, beta - LEVEL_TOL, side="left")
    if idx >= d.values.size:
        return math.inf
    return float(d.values[idx])


def quantile_minus(d: WeightedAtoms, beta: float) -> float:
    """Level-``beta`` quantile with the tail mass at ``-inf``.

    Returns ``-inf`` as soon as the mass at ``-inf`` reaches ``beta``;
    mass at ``+inf`` is disregarded (so ``+inf`` is returned if the finite
    atoms never reach ``beta``).
    """
    beta = _check_level(beta)
    if d.neg_inf_mass >= beta - LEVEL_TOL:
        return -math.inf
    cum = np.cumsum(np.r_[d.neg_inf_mass, d.masses])[1:]
    idx = np.searchsorted(cum, beta - LEVEL_TOL, side="left")
    if idx >= d.values.size:
        return math.inf
    return float(d.values[idx])


def mass_strictly_below(d: WeightedAtoms, t: float) -> float:
    """Mass at ``-inf`` plus the mass of finite atoms ``< t``."""
    if t == -math.inf:
        return 0.0
    k = np.searchsorted(d.values, t, side="left")
    return d.neg_inf_mass + float(d._cum[k - 1]) if k else d.neg_inf_mass


def mass_strictly_above(d: WeightedAtoms, t: float) -> float:
    """Mass at ``+inf`` plus the mass of finite atoms ``> t``."""
    if t == math.inf:
        return 0.0
    k = np.searchsorted(d.values, t, side="right")
    return d.pos_inf_mass + math.fsum(d.masses[k:])
