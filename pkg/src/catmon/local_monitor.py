"""Per-stream statistics: raw likelihood ratios, EWMA smoothing, uniform scores.

The pipeline for one stream at sample k is

    counts -> ewma_update -> smoothed_stat -> normalize

which yields a score in (0, 1) that is approximately uniform while the
stream is in control, whatever its level structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stat_math import chi_square_cdf
from .streams import NominalSpec, OrdinalSpec, StreamSpec

__all__ = [
    "DimensionMismatchError",
    "EwmaState",
    "init_state",
    "ewma_update",
    "raw_lrt_nominal",
    "raw_lrt_ordinal",
    "smoothed_stat",
    "normalize",
    "U_CLAMP",
]

# Uniform scores are clamped into [U_CLAMP, 1 - U_CLAMP] so the downstream
# fusion terms ln(1/U - 1) stay finite in floating point.
U_CLAMP = 1e-12


class DimensionMismatchError(ValueError):
    """Counts, state, and spec disagree on the number of levels."""


@dataclass
class EwmaState:
    """Smoothed count vector of one stream plus the sample index reached."""

    w: np.ndarray
    k: int = 0


def init_state(spec: StreamSpec, n_per_sample: int) -> EwmaState:
    """Fresh state centered at the IC expectation ``N * pi0``."""
    if n_per_sample < 1:
        raise ValueError(f"sample size must be >= 1, got {n_per_sample}")
    return EwmaState(w=n_per_sample * spec.pi0.copy(), k=0)


def ewma_update(state: EwmaState, counts, lam: float) -> EwmaState:
    """One smoothing step ``w' = (1 - lam) w + lam n``.

    Returns a new state; the input state is untouched.
    """
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"smoothing parameter must be in (0, 1], got {lam}")
    counts = np.asarray(counts, dtype=float)
    if counts.shape != state.w.shape:
        raise DimensionMismatchError(
            f"counts have shape {counts.shape}, state has {state.w.shape}"
        )
    return EwmaState(w=(1.0 - lam) * state.w + lam * counts, k=state.k + 1)


def raw_lrt_nominal(counts, spec: NominalSpec, n_per_sample: int) -> float:
    """-2 log likelihood ratio of one sample against the IC probabilities.

    ``2 sum_j n_j ln(n_j / (N pi0_j))`` with ``0 ln 0 := 0``.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.shape != spec.pi0.shape:
        raise DimensionMismatchError(
            f"counts have shape {counts.shape}, spec has {spec.pi0.shape}"
        )
    expected = n_per_sample * spec.pi0
    positive = counts > 0
    value = 2.0 * float(
        np.sum(counts[positive] * np.log(counts[positive] / expected[positive]))
    )
    return max(value, 0.0)


def raw_lrt_ordinal(counts, spec: OrdinalSpec, n_per_sample: int) -> float:
    """Score-based -2 log likelihood ratio: ``(alpha' n)^2 / (N alpha' Lambda alpha)``."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape != spec.pi0.shape:
        raise DimensionMismatchError(
            f"counts have shape {counts.shape}, spec has {spec.pi0.shape}"
        )
    score = float(spec.alpha @ counts)
    return score * score / (n_per_sample * spec.alpha_quad)


def smoothed_stat(state: EwmaState, spec: StreamSpec, n_per_sample: int) -> float:
    """Local statistic evaluated on the smoothed counts.

    Same functional form as the raw statistics, with ``w`` in place of the
    sample counts; zero exactly when ``w`` sits at the IC expectation.
    """
    w = state.w
    if w.shape != spec.pi0.shape:
        raise DimensionMismatchError(
            f"state has shape {w.shape}, spec has {spec.pi0.shape}"
        )
    if isinstance(spec, NominalSpec):
        # w > 0 always holds for lam < 1; at lam = 1 the smoothed counts are
        # the raw counts, so zero entries use the 0 ln 0 = 0 convention
        positive = w > 0
        value = 2.0 * float(np.sum(
            w[positive] * np.log(w[positive] / (n_per_sample * spec.pi0[positive]))))
        return max(value, 0.0)
    score = float(spec.alpha @ w)
    return score * score / (n_per_sample * spec.alpha_quad)


def normalize(stat: float, df: int, lam: float) -> float:
    """Map a smoothed local statistic to a uniform-scale score in (0, 1).

    The smoothed statistic, rescaled by ``(2 - lam) / lam``, is approximately
    chi-square with ``df`` degrees of freedom in control; its CDF value is
    therefore approximately uniform.  The result is clamped away from 0 and 1.
    """
    if stat < 0.0:
        raise ValueError(f"local statistic must be >= 0, got {stat}")
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"smoothing parameter must be in (0, 1], got {lam}")
    u = chi_square_cdf((2.0 - lam) / lam * stat, df)
    return min(max(u, U_CLAMP), 1.0 - U_CLAMP)
