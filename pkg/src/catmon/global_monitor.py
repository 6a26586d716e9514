"""Fusion of per-stream uniform scores into one chart statistic.

Three fusion rules are supported: a goodness-of-fit statistic on the ordered
scores (the default, sensitive across sparse and dense shift patterns), the
maximum score, and the plain sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import local_monitor
from .local_monitor import EwmaState, ewma_update, normalize, smoothed_stat
from .streams import StreamSpec

__all__ = [
    "STATISTICS",
    "ChartConfig",
    "ChartPoint",
    "zhang_gof",
    "max_stat",
    "sum_stat",
    "fuse",
    "chart_step",
]

STATISTICS = ("zhang", "max", "sum")


@dataclass(frozen=True)
class ChartConfig:
    """Chart parameters: smoothing, sample size, fusion rule, control limit.

    ``limit`` is None while calibrating (no alarm decisions yet) and must be
    positive once monitoring.
    """

    lam: float
    n_per_sample: int
    statistic: str = "zhang"
    limit: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"smoothing parameter must be in (0, 1], got {self.lam}")
        if self.n_per_sample < 1:
            raise ValueError(f"sample size must be >= 1, got {self.n_per_sample}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}, got {self.statistic!r}")
        if self.limit is not None and not self.limit > 0.0:
            raise ValueError(f"control limit must be > 0, got {self.limit}")


@dataclass
class ChartPoint:
    """One monitored sample: index, fused value, and the alarm decision."""

    k: int
    value: float
    alarm: bool
    local_scores: Optional[np.ndarray] = None


def _check_scores(scores) -> np.ndarray:
    u = np.asarray(scores, dtype=float)
    if u.ndim != 1 or u.size < 1:
        raise ValueError(f"need a nonempty 1-D score vector, got shape {u.shape}")
    return u


def zhang_gof(scores) -> float:
    """Goodness-of-fit fusion of the score vector against uniformity.

    With ``u_(1) <= ... <= u_(p)`` the sorted scores, sums the squared log
    ratios ``[ln((u_(i)^-1 - 1) / ((p - 1/2)/(i - 3/4) - 1))]^2`` over the
    positions where ``u_(i) >= (i - 3/4)/p``.  The one-sided indicator keeps
    only the upper tail, which is where shifted streams push their scores.
    """
    u = _check_scores(scores)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("scores must lie strictly inside (0, 1)")
    p = u.size
    u = np.sort(u, kind="stable")
    i = np.arange(1, p + 1)
    threshold = (i - 0.75) / p
    active = u >= threshold
    if not np.any(active):
        return 0.0
    denom = (p - 0.5) / (i[active] - 0.75) - 1.0
    terms = np.log((1.0 / u[active] - 1.0) / denom) ** 2
    return float(terms.sum())


def max_stat(scores) -> float:
    """Largest score; sensitive when few streams shift."""
    return float(_check_scores(scores).max())


def sum_stat(scores) -> float:
    """Sum of scores; sensitive when many streams shift."""
    return float(_check_scores(scores).sum())


_FUSERS = {"zhang": zhang_gof, "max": max_stat, "sum": sum_stat}


def fuse(scores, statistic: str) -> float:
    """Apply the named fusion rule to a score vector."""
    try:
        fn = _FUSERS[statistic]
    except KeyError:
        raise ValueError(f"statistic must be one of {STATISTICS}, got {statistic!r}") from None
    return fn(scores)


def chart_step(
    states: Sequence[EwmaState],
    specs: Sequence[StreamSpec],
    counts: Sequence,
    config: ChartConfig,
    keep_scores: bool = False,
) -> tuple[list[EwmaState], ChartPoint]:
    """Advance every stream by one sample and fuse into a chart point.

    ``counts[i]`` holds the grouped counts of stream i for the next sample.
    Returns the updated states and the chart point; an alarm is flagged when
    the fused value exceeds ``config.limit``.
    """
    if not len(states) == len(specs) == len(counts):
        raise local_monitor.DimensionMismatchError(
            f"got {len(states)} states, {len(specs)} specs, {len(counts)} count vectors"
        )
    new_states = []
    scores = np.empty(len(specs))
    for i, (state, spec, n) in enumerate(zip(states, specs, counts)):
        state = ewma_update(state, n, config.lam)
        scores[i] = normalize(smoothed_stat(state, spec, config.n_per_sample),
                              spec.df, config.lam)
        new_states.append(state)
    value = fuse(scores, config.statistic)
    k = new_states[0].k
    alarm = config.limit is not None and value > config.limit
    point = ChartPoint(k=k, value=value, alarm=alarm,
                       local_scores=scores if keep_scores else None)
    return new_states, point
