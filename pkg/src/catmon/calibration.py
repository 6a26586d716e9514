"""Run-length estimation and control-limit calibration.

``estimate_arl`` runs independent replications (seeded by replication index,
executed on a process pool) and summarizes their run lengths.

``calibrate_limit`` finds the control limit whose in-control average run
length hits a target.  The bisection evaluates every candidate limit against
one fixed set of common-random-number replications: each replication's
running-max record curve is simulated once up to a search horizon, after
which the run length at any limit is an exact lookup.  This is ordinary
common-random-numbers bisection with the re-simulation cost removed.  The
returned limit is then confirmed with an independently seeded fresh run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _engine
from ._engine import DEFAULT_CAP, DEFAULT_WARMUP
from .global_monitor import ChartConfig
from .streams import NoShift

__all__ = [
    "CalibrationError",
    "RunLengthSummary",
    "CalibrationResult",
    "simulate_run_length",
    "estimate_arl",
    "calibrate_limit",
    "calibrate_limits",
    "ic_scores",
]

# Branch codes keeping the seed streams of the different consumers disjoint.
_BRANCH_ESTIMATE = 0
_BRANCH_SEARCH = 1
_BRANCH_CONFIRM = 2

# The search horizon is this multiple of the target ARL; run lengths censored
# at the horizon bias the search estimate by roughly exp(-factor), far below
# the bisection tolerance.
HORIZON_FACTOR = 5.0

MAX_BISECT_ITER = 40
DEFAULT_TOL_REL = 0.02


class CalibrationError(RuntimeError):
    """The control-limit search could not reach the target ARL."""


@dataclass
class RunLengthSummary:
    """Mean run length with its Monte Carlo uncertainty and cap diagnostics."""

    arl: float
    se: float
    reps: int
    capped_fraction: float
    cap: int

    @classmethod
    def from_lengths(cls, lengths: np.ndarray, cap: int) -> "RunLengthSummary":
        lengths = np.asarray(lengths)
        reps = lengths.size
        se = 0.0 if reps < 2 else float(lengths.std(ddof=1) / math.sqrt(reps))
        return cls(arl=float(lengths.mean()), se=se, reps=reps,
                   capped_fraction=float(np.mean(lengths >= cap)), cap=cap)


@dataclass
class CalibrationResult:
    """Calibrated limit plus the diagnostics of the search and confirmation."""

    limit: float
    achieved_arl: float
    achieved_se: float
    iterations: int
    bracket: tuple[float, float]
    confirmation: RunLengthSummary
    search_arl: float


def simulate_run_length(specs, shifts, config: ChartConfig, rng,
                        cap: int = DEFAULT_CAP,
                        warmup: int = DEFAULT_WARMUP) -> int:
    """Run length of a single replication driven by ``rng``.

    States start at the IC expectation, the EWMA is warmed up with in-control
    draws, and shifts apply from sample 1 on.  Returns the first sample whose
    fused statistic exceeds ``config.limit``, or ``cap`` if none does.
    """
    if config.limit is None:
        raise ValueError("config.limit must be set to simulate run lengths")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    groups = _engine.build_groups(specs, shifts, config.n_per_sample)
    lengths = _engine.run_length_block(
        groups, config.lam, config.n_per_sample, config.statistic,
        config.limit, [rng], cap, warmup)
    return int(lengths[0])


def estimate_arl(specs, shifts, config: ChartConfig, reps: int,
                 master_seed: int, cap: int = DEFAULT_CAP,
                 warmup: int = DEFAULT_WARMUP,
                 workers: Optional[int] = None,
                 branch: tuple[int, ...] = (_BRANCH_ESTIMATE,)) -> RunLengthSummary:
    """ARL over ``reps`` replications seeded by index under ``master_seed``."""
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if config.limit is None:
        raise ValueError("config.limit must be set to estimate an ARL")
    groups = _engine.build_groups(specs, shifts, config.n_per_sample)
    lengths = _engine.run_lengths_parallel(
        groups, config.lam, config.n_per_sample, config.statistic,
        config.limit, reps, master_seed, branch=branch, cap=cap,
        warmup=warmup, workers=workers)
    return RunLengthSummary.from_lengths(lengths, cap)


def _run_lengths_at(records, limit: float, horizon: int) -> np.ndarray:
    """Exact run lengths of the recorded replications at a given limit."""
    out = np.empty(len(records), dtype=np.int64)
    for i, (times, values) in enumerate(records):
        idx = int(np.searchsorted(values, limit, side="right"))
        out[i] = times[idx] if idx < values.size else horizon
    return out


def calibrate_limits(specs, config: ChartConfig, statistics: Sequence[str],
                     target_arl0: float, reps: int,
                     tol_rel: float = DEFAULT_TOL_REL,
                     master_seed: int = 0, cap: int = DEFAULT_CAP,
                     warmup: int = DEFAULT_WARMUP,
                     workers: Optional[int] = None,
                     confirm_reps: Optional[int] = None) -> dict[str, CalibrationResult]:
    """Calibrate control limits for several fusion statistics in one pass.

    The common-random-number search replications are shared across the
    statistics (the sampled counts do not depend on the fusion rule), so
    calibrating all three costs barely more than calibrating one.
    """
    if target_arl0 <= 1.0:
        raise ValueError(f"target ARL0 must be > 1, got {target_arl0}")
    if reps < 2:
        raise ValueError(f"reps must be >= 2, got {reps}")
    horizon = int(min(cap, max(math.ceil(HORIZON_FACTOR * target_arl0),
                               math.ceil(target_arl0) + 50)))
    shifts = [NoShift()] * len(specs)
    groups = _engine.build_groups(specs, shifts, config.n_per_sample)
    records = _engine.trajectories_parallel(
        groups, config.lam, config.n_per_sample, tuple(statistics), reps,
        master_seed, branch=(_BRANCH_SEARCH,), horizon=horizon,
        warmup=warmup, workers=workers)

    results = {}
    for si, statistic in enumerate(statistics):
        recs = records[statistic]
        knots = np.unique(np.concatenate(
            [v for _, v in recs if v.size] or [np.array([])]))
        knots = knots[knots > 0.0]  # a control limit must be positive
        if knots.size == 0:
            raise CalibrationError("chart statistic never exceeded 0 during the search")
        # The ARL under common random numbers is a step function of the limit
        # whose knots are exactly the recorded statistic values, so bisecting
        # over the knots reaches the attainable resolution directly.  Raw
        # midpoint bisection stalls when the statistic saturates (the max
        # fusion has limits within ~1e-6 of 1).
        lo, hi = 0, knots.size - 1
        arl_lo = float(_run_lengths_at(recs, knots[lo], horizon).mean())
        arl_hi = float(_run_lengths_at(recs, knots[hi], horizon).mean())
        iterations = 2
        while hi - lo > 1 and iterations < MAX_BISECT_ITER:
            mid = (lo + hi) // 2
            arl = float(_run_lengths_at(recs, knots[mid], horizon).mean())
            iterations += 1
            if arl < target_arl0:
                lo, arl_lo = mid, arl
            else:
                hi, arl_hi = mid, arl
        if abs(arl_lo - target_arl0) <= abs(arl_hi - target_arl0):
            limit, search_arl = float(knots[lo]), arl_lo
        else:
            limit, search_arl = float(knots[hi]), arl_hi
        if abs(search_arl - target_arl0) / target_arl0 > tol_rel:
            raise CalibrationError(
                f"search for {statistic!r} ended at ARL {search_arl:.1f} vs "
                f"target {target_arl0} (rel. gap beyond {tol_rel}); "
                "increase reps or tol_rel"
            )
        capped = float(np.mean(_run_lengths_at(recs, limit, horizon) >= horizon))
        if capped > 0.5:
            raise CalibrationError(
                f"target ARL0 {target_arl0} appears unreachable for {statistic!r}: "
                f"{capped:.0%} of search replications never crossed the limit"
            )
        confirm = estimate_arl(
            specs, shifts,
            ChartConfig(config.lam, config.n_per_sample, statistic, limit),
            confirm_reps or reps, master_seed, cap=cap, warmup=warmup,
            workers=workers, branch=(_BRANCH_CONFIRM, si))
        results[statistic] = CalibrationResult(
            limit=limit, achieved_arl=confirm.arl, achieved_se=confirm.se,
            iterations=iterations, bracket=(float(knots[lo]), float(knots[hi])),
            confirmation=confirm, search_arl=search_arl)
    return results


def calibrate_limit(specs, config: ChartConfig, target_arl0: float,
                    reps: int, tol_rel: float = DEFAULT_TOL_REL,
                    master_seed: int = 0, **kwargs) -> CalibrationResult:
    """Calibrate the control limit of ``config.statistic``; see ``calibrate_limits``."""
    return calibrate_limits(specs, config, [config.statistic], target_arl0,
                            reps, tol_rel, master_seed, **kwargs)[config.statistic]


def ic_scores(spec, lam: float, n_per_sample: int, reps: int,
              burn_in: int = 50, master_seed: int = 0) -> np.ndarray:
    """Independent in-control uniform scores of one stream.

    Each replication starts cold at the IC expectation, runs ``burn_in``
    samples, and reports the normalized score of the next sample; the scores
    are mutually independent, which a distributional test downstream needs.
    """
    from .local_monitor import U_CLAMP
    from .stat_math import make_rng

    rng = make_rng(master_seed)
    steps = burn_in + 1
    counts = rng.multinomial(n_per_sample, spec.pi0, size=(reps, steps)).astype(float)
    w = np.broadcast_to(n_per_sample * spec.pi0, (reps, spec.h)).copy()
    for k in range(steps):
        w = (1.0 - lam) * w + lam * counts[:, k]
    if hasattr(spec, "alpha"):
        dot = w @ spec.alpha
        stat = dot * dot / (n_per_sample * spec.alpha_quad)
    else:
        stat = 2.0 * np.einsum("rh,rh->r", w, np.log(w / (n_per_sample * spec.pi0)))
        np.maximum(stat, 0.0, out=stat)
    u = _engine._chi2_cdf_array((2.0 - lam) / lam * stat, spec.df)
    return np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
