"""Error assessment: how likely is a prediction to fall inside a tolerance?

Every interval method here reads its endpoints off a lower distribution
(tail mass at ``-inf``) and an upper distribution (tail mass at ``+inf``)
of scores.  Given a no-error set ``[tau_minus, tau_plus]`` in score space,
the smallest miscoverage level whose interval fits inside it is
``alpha_E = max(t_L, t_U)``, where ``t_L`` is the lower mass strictly below
``tau_minus`` and ``t_U`` the upper mass strictly above ``tau_plus``.  The
feasible levels are ``{a > t_L} & {a >= t_U}``, so the minimum is attained
only when ``t_U > t_L``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .empdist import LEVEL_TOL, WeightedAtoms, mass_strictly_above, mass_strictly_below
from .infer import LooArtifacts, SplitArtifacts
from .shift import NormalizedWeights, normalize

SIGNED = "signed-residual"
ABSOLUTE = "absolute-residual"


@dataclass(frozen=True)
class ErrorCriteria:
    """No-error set ``{y : tau_minus <= S(x, y) <= tau_plus}``.

    ``S`` is ``y - mu(x)`` for ``signed-residual`` and ``|y - mu(x)|`` for
    ``absolute-residual``.
    """

    score_kind: str
    tau_minus: float
    tau_plus: float

    def __post_init__(self):
        if self.score_kind not in (SIGNED, ABSOLUTE):
            raise ValueError(f"unknown score kind {self.score_kind!r}")
        if not self.tau_minus <= self.tau_plus:
            raise ValueError("tau_minus must not exceed tau_plus")
        if self.score_kind == ABSOLUTE and self.tau_minus != 0:
            raise ValueError("absolute-residual criteria have tau_minus = 0")

    @classmethod
    def tolerance(cls, tau):
        """``|y - mu(x)| <= tau``."""
        return cls(ABSOLUTE, 0.0, float(tau))

    def signed_bounds(self):
        """The same set written for the signed residual ``y - mu(x)``."""
        if self.score_kind == ABSOLUTE:
            return -self.tau_plus, self.tau_plus
        return self.tau_minus, self.tau_plus

    def absolute_bounds(self):
        if self.score_kind == SIGNED:
            if self.tau_minus != -self.tau_plus:
                raise ValueError("split assessment needs a symmetric tolerance")
            return 0.0, self.tau_plus
        return self.tau_minus, self.tau_plus


@dataclass(frozen=True)
class GuaranteeSpec:
    """Coverage guarantee ``1 - c1 * alpha - c2``."""

    c1: float
    c2: float = 0.0

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 >= 0):
            raise ValueError("need c1 > 0 and c2 >= 0")


JACKKNIFE_GUARANTEE = GuaranteeSpec(2.0, 0.0)
SPLIT_GUARANTEE = GuaranteeSpec(1.0, 0.0)


@dataclass(frozen=True)
class AlphaE:
    alpha_e: float
    attained: bool


@dataclass(frozen=True)
class ErrorAssessment:
    alpha_e: float | None
    attained: bool
    p_no_error: float
    guaranteed_lower_bound: float


def alpha_e(lower: WeightedAtoms, upper: WeightedAtoms, tau_minus: float, tau_plus: float) -> AlphaE | None:
    """Infimum of feasible miscoverage levels, or ``None`` if none exists."""
    if lower.pos_inf_mass > 0 or upper.neg_inf_mass > 0:
        raise ValueError("lower atoms must carry tail mass at -inf and upper atoms at +inf")
    t_lo = mass_strictly_below(lower, tau_minus)
    t_up = mass_strictly_above(upper, tau_plus)
    if t_lo >= 1.0 - LEVEL_TOL:
        return None
    value = max(t_lo, t_up)
    if value >= 1.0 - LEVEL_TOL:
        value = 1.0
    # at a = t_U the lower quantile needs cumulative mass t_L < a - LEVEL_TOL
    return AlphaE(value, bool(t_up > t_lo + LEVEL_TOL))


def assess(result: AlphaE | None, spec: GuaranteeSpec) -> ErrorAssessment:
    if result is None:
        return ErrorAssessment(None, False, 0.0, 0.0)
    a = result.alpha_e
    bound = max(0.0, 1.0 - spec.c1 * a - spec.c2) if a < (1.0 - spec.c2) / spec.c1 else 0.0
    return ErrorAssessment(a, result.attained, 1.0 - a, bound)


def jaw_score_atoms(loo: LooArtifacts, weights: NormalizedWeights, j: int = 0):
    """Lower/upper atoms of the signed residual ``y - mu(x)`` at test column ``j``."""
    if len(weights) != loo.n:
        raise ValueError(f"{len(weights)} training weights for {loo.n} artifacts")
    shift = loo.loo_pred_test[:, j] - loo.full_pred_test[j]
    lower = WeightedAtoms(shift - loo.loo_residuals, weights.train, neg_inf_mass=weights.test)
    upper = WeightedAtoms(shift + loo.loo_residuals, weights.train, pos_inf_mass=weights.test)
    return lower, upper


def jaw_error_assessment(loo: LooArtifacts, weights, crit: ErrorCriteria, j: int = 0,
                         spec: GuaranteeSpec = JACKKNIFE_GUARANTEE) -> ErrorAssessment:
    if not isinstance(weights, NormalizedWeights):
        weights = normalize(*weights)
    lower, upper = jaw_score_atoms(loo, weights, j)
    return assess(alpha_e(lower, upper, *crit.signed_bounds()), spec)


def jawa_error_assessment(loo_if: LooArtifacts, weights, crit: ErrorCriteria, j: int = 0) -> ErrorAssessment:
    """JAW assessment on influence-function artifacts."""
    return jaw_error_assessment(loo_if, weights, crit, j)


def jackknife_plus_error_assessment(loo: LooArtifacts, crit: ErrorCriteria, j: int = 0) -> ErrorAssessment:
    return jaw_error_assessment(loo, NormalizedWeights.uniform(loo.n), crit, j)


def cv_plus_error_assessment(cv: LooArtifacts, crit: ErrorCriteria, j: int = 0) -> ErrorAssessment:
    return jackknife_plus_error_assessment(cv, crit, j)


def split_score_atoms(split: SplitArtifacts, weights: NormalizedWeights | None = None):
    """Absolute-residual atoms: all lower scores 0, upper scores the holdout residuals."""
    k = split.residuals.size
    if weights is None:
        weights = NormalizedWeights.uniform(k)
    lower = WeightedAtoms(np.zeros(k), weights.train, neg_inf_mass=weights.test)
    upper = WeightedAtoms(split.residuals, weights.train, pos_inf_mass=weights.test)
    return lower, upper


def split_error_assessment(split: SplitArtifacts, crit: ErrorCriteria, train_weights=None,
                           test_weight=None) -> ErrorAssessment:
    """Split (or, given weights over all training rows, weighted split) assessment."""
    weights = None
    if train_weights is not None:
        w = np.asarray(train_weights, dtype=float)[split.calibration_index]
        weights = normalize(w, test_weight)
    lower, upper = split_score_atoms(split, weights)
    return assess(alpha_e(lower, upper, *crit.absolute_bounds()), SPLIT_GUARANTEE)


def tau_grid(residuals, count: int) -> np.ndarray:
    """``count`` evenly spaced tolerances between the 5% and 95% residual quantiles."""
    lo, hi = np.quantile(np.asarray(residuals, dtype=float), [0.05, 0.95])
    return np.linspace(lo, hi, int(count))
