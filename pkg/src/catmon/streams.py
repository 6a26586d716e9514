"""Stream models: nominal and ordinal categorical streams and their shifts.

A nominal stream is described by its in-control level probabilities.  An
ordinal stream is additionally backed by a latent continuous variable whose
cut points induce those probabilities; its monitoring statistic works through
a score vector computed from the latent density at the cut points.

Out-of-control behaviour is a ``NominalShift`` (an additive perturbation of
the probability vector) or an ``OrdinalShift`` (a location shift of the
latent variable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import stat_math
from .stat_math import InvalidDistributionError

__all__ = [
    "PROB_FLOOR",
    "ShiftValidityError",
    "NominalSpec",
    "OrdinalSpec",
    "StreamSpec",
    "NoShift",
    "NominalShift",
    "OrdinalShift",
    "ShiftSpec",
    "ordinal_scores",
    "lambda_matrix",
    "shifted_probs_nominal",
    "shifted_probs_ordinal",
    "probs_from_cutpoints",
    "cutpoints_from_probs",
]

# Constructed level probabilities below this floor are rejected: the local
# statistics divide by them and take their logs.
PROB_FLOOR = 1e-9

_LATENT_FAMILIES = {
    "normal": (stat_math.normal_pdf, stat_math.normal_cdf, stat_math.normal_quantile),
    "logistic": (stat_math.logistic_pdf, stat_math.logistic_cdf, stat_math.logistic_quantile),
}


class ShiftValidityError(ValueError):
    """A shift would push some level probability out of (0, 1)."""


def _check_pi0(pi0) -> np.ndarray:
    pi0 = np.asarray(pi0, dtype=float)
    if pi0.ndim != 1 or pi0.size < 2:
        raise InvalidDistributionError(
            f"need at least 2 levels in a 1-D probability vector, got shape {pi0.shape}"
        )
    if np.any(~np.isfinite(pi0)) or np.any(pi0 < PROB_FLOOR):
        raise InvalidDistributionError(
            f"every level probability must be at least {PROB_FLOOR}"
        )
    if abs(pi0.sum() - 1.0) > 1e-12:
        raise InvalidDistributionError(f"level probabilities sum to {pi0.sum()!r}, not 1")
    pi0.flags.writeable = False
    return pi0


@dataclass(frozen=True, eq=False)
class NominalSpec:
    """Nominal stream: ``h`` unordered levels with IC probabilities ``pi0``."""

    pi0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi0", _check_pi0(self.pi0))

    @property
    def h(self) -> int:
        return self.pi0.size

    @property
    def df(self) -> int:
        """Degrees of freedom of the local statistic (one per free level)."""
        return self.h - 1


@dataclass(frozen=True, eq=False)
class OrdinalSpec:
    """Ordinal stream backed by a latent continuous variable.

    Build through :meth:`from_cutpoints` or :meth:`from_probs`; the other
    representation plus the score vector and level covariance are derived at
    construction.
    """

    pi0: np.ndarray
    latent_family: str
    cutpoints: np.ndarray
    alpha: np.ndarray = field(repr=False)
    lambda_mat: np.ndarray = field(repr=False)
    alpha_quad: float = field(repr=False)

    def __post_init__(self):
        if self.latent_family not in _LATENT_FAMILIES:
            raise ValueError(f"unknown latent family {self.latent_family!r}")
        if np.any(np.diff(self.cutpoints) <= 0.0):
            raise InvalidDistributionError("cut points must be strictly increasing")
        centering = float(self.pi0 @ self.alpha)
        if abs(centering) > 1e-10:
            raise InvalidDistributionError(
                f"scores are not centered: sum pi*alpha = {centering!r}"
            )
        if not self.alpha_quad > 0.0:
            raise InvalidDistributionError(
                "score vector has zero variance under the IC distribution"
            )
        for name in ("pi0", "cutpoints", "alpha", "lambda_mat"):
            getattr(self, name).flags.writeable = False

    @classmethod
    def from_probs(cls, pi0, latent_family: str = "normal") -> "OrdinalSpec":
        pi0 = _check_pi0(np.array(pi0, dtype=float))
        cuts = cutpoints_from_probs(pi0, latent_family)
        return cls._build(pi0, cuts, latent_family)

    @classmethod
    def from_cutpoints(cls, cutpoints, latent_family: str = "normal") -> "OrdinalSpec":
        cuts = np.asarray(cutpoints, dtype=float)
        if cuts.ndim != 1 or cuts.size < 1:
            raise InvalidDistributionError("need at least one interior cut point")
        pi0 = probs_from_cutpoints(cuts, latent_family)
        return cls._build(_check_pi0(pi0), cuts.copy(), latent_family)

    @classmethod
    def _build(cls, pi0, cuts, latent_family) -> "OrdinalSpec":
        alpha = ordinal_scores(pi0, latent_family)
        lam = lambda_matrix(pi0)
        quad = float(alpha @ lam @ alpha)
        return cls(pi0=pi0, latent_family=latent_family, cutpoints=cuts,
                   alpha=alpha, lambda_mat=lam, alpha_quad=quad)

    @property
    def h(self) -> int:
        return self.pi0.size

    @property
    def df(self) -> int:
        """One degree of freedom: the test targets a single slope parameter."""
        return 1


StreamSpec = Union[NominalSpec, OrdinalSpec]


@dataclass(frozen=True)
class NoShift:
    """The stream stays in control."""


@dataclass(frozen=True, eq=False)
class NominalShift:
    """Additive perturbation ``xi`` of the level probability vector."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if abs(xi.sum()) > 1e-12:
            raise ShiftValidityError(f"shift components must sum to 0, got {xi.sum()!r}")
        xi.flags.writeable = False
        object.__setattr__(self, "xi", xi)


@dataclass(frozen=True)
class OrdinalShift:
    """Location shift ``delta`` of the latent continuous variable."""

    delta: float


ShiftSpec = Union[NoShift, NominalShift, OrdinalShift]


def probs_from_cutpoints(cutpoints, latent_family: str = "normal") -> np.ndarray:
    """Level probabilities induced by latent cut points: F differences."""
    _, cdf, _ = _LATENT_FAMILIES[latent_family]
    cuts = np.asarray(cutpoints, dtype=float)
    cum = np.concatenate(([0.0], [cdf(b) for b in cuts], [1.0]))
    return np.diff(cum)


def cutpoints_from_probs(pi0, latent_family: str = "normal") -> np.ndarray:
    """Latent cut points recovering ``pi0``: quantiles of the cumulative sums."""
    _, _, quantile = _LATENT_FAMILIES[latent_family]
    pi0 = np.asarray(pi0, dtype=float)
    cum = np.cumsum(pi0)[:-1]
    return np.array([quantile(c) for c in cum])


def ordinal_scores(pi0, latent_family: str = "normal") -> np.ndarray:
    """Score vector of an ordinal stream.

    Level j gets the average latent density drop over its interval:
    ``(f(F^-1(c_{j-1})) - f(F^-1(c_j))) / pi0_j`` with the convention that
    the density vanishes at the quantiles of 0 and 1.  The scores are
    centered: ``sum_j pi0_j * score_j == 0`` up to rounding.
    """
    pdf, _, quantile = _LATENT_FAMILIES[latent_family]
    pi0 = _check_pi0(np.array(pi0, dtype=float))
    h = pi0.size
    cum = np.cumsum(pi0)
    f_at = np.empty(h + 1)
    f_at[0] = 0.0
    f_at[h] = 0.0
    for j in range(1, h):
        f_at[j] = pdf(quantile(cum[j - 1]))
    return (f_at[:-1] - f_at[1:]) / pi0


def lambda_matrix(pi0) -> np.ndarray:
    """Covariance structure of one multinomial draw: diag(pi) - pi pi^T."""
    pi0 = np.asarray(pi0, dtype=float)
    return np.diag(pi0) - np.outer(pi0, pi0)


def shifted_probs_nominal(pi0, xi) -> np.ndarray:
    """Out-of-control probabilities ``pi0 + xi``; every level must stay in (0, 1)."""
    pi0 = np.asarray(pi0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if pi0.shape != xi.shape:
        raise ShiftValidityError(
            f"shift has {xi.size} components but the stream has {pi0.size} levels"
        )
    if abs(xi.sum()) > 1e-12:
        raise ShiftValidityError(f"shift components must sum to 0, got {xi.sum()!r}")
    shifted = pi0 + xi
    if np.any(shifted < PROB_FLOOR) or np.any(shifted > 1.0 - PROB_FLOOR):
        raise ShiftValidityError(
            f"shifted probabilities {shifted} leave the open interval (0, 1)"
        )
    return shifted


def shifted_probs_ordinal(spec: OrdinalSpec, delta: float) -> np.ndarray:
    """Level probabilities after a latent location shift ``delta``.

    ``P(level j) = F(b_j - delta) - F(b_{j-1} - delta)`` with the outer cut
    points at -inf/+inf.  ``delta == 0`` returns ``pi0`` exactly.
    """
    if delta == 0.0:
        return spec.pi0.copy()
    _, cdf, _ = _LATENT_FAMILIES[spec.latent_family]
    cum = np.concatenate(([0.0], [cdf(b - delta) for b in spec.cutpoints], [1.0]))
    return np.diff(cum)


def sampling_probs(spec: StreamSpec, shift: ShiftSpec) -> np.ndarray:
    """Actual level probabilities of a stream under a shift assignment."""
    if isinstance(shift, NoShift):
        return spec.pi0.copy()
    if isinstance(shift, NominalShift):
        if not isinstance(spec, NominalSpec):
            raise ShiftValidityError("probability-vector shifts apply to nominal streams only")
        return shifted_probs_nominal(spec.pi0, shift.xi)
    if isinstance(shift, OrdinalShift):
        if not isinstance(spec, OrdinalSpec):
            raise ShiftValidityError("latent location shifts apply to ordinal streams only")
        return shifted_probs_ordinal(spec, shift.delta)
    raise TypeError(f"unknown shift {shift!r}")
