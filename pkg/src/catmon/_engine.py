"""Vectorized Monte Carlo engine for run-length simulation.

Streams with identical (spec, shift) pairs are grouped so their grouped
counts can be drawn in bulk.  Each replication owns a Generator derived from
``(master_seed, branch..., replication_index)`` and consumes a fixed budget
of ``h - 1`` uniforms per stream per sample, turned into multinomial counts
by inverse-CDF lookups against precomputed conditional binomial tables (a
numba kernel; the lookup agrees with ``scipy.stats.binom.ppf`` exactly).
Replications are therefore bit-reproducible regardless of how they are
batched into blocks or distributed over worker processes.

Chart runs are simulated from the steady-state regime: the EWMA recursion is
warmed up with in-control draws before sample 1, and shifts apply from
sample 1 onward.  Pass ``warmup=0`` for a cold start at the IC expectation.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import special
from scipy import stats as _sstats

from .global_monitor import STATISTICS
from .local_monitor import U_CLAMP
from .stat_math import make_rng
from .streams import (
    NoShift,
    NominalSpec,
    OrdinalSpec,
    sampling_probs,
)

# Fixed draw-protocol constants.  CHUNK is part of the protocol (a
# replication's uniforms are drawn in chunks of this many samples); BLOCK is
# only a batching detail and never affects results.
CHUNK = 32
BLOCK = 128
DEFAULT_WARMUP = 100
DEFAULT_CAP = 20_000


def default_workers() -> int:
    env = os.environ.get("CATMON_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# stream groups


@dataclass
class StreamGroup:
    """A run of consecutive streams sharing one spec and one shift."""

    kind: int                 # 0 nominal, 1 ordinal
    m: int
    h: int
    df: int
    pi0: np.ndarray           # (h,)
    probs: np.ndarray         # sampling probabilities (shifted when OC)
    ln_npi0: np.ndarray       # ln(N * pi0), nominal statistic term
    alpha: Optional[np.ndarray]
    denom: float              # N * alpha' Lambda alpha (ordinal)
    tables: np.ndarray        # (h-1, N+1, N+2) conditional binomial CDFs
    anchors: np.ndarray       # (h-1, N+1) search start indices
    tables_ic: np.ndarray     # same, built from pi0 (used during warm-up)
    anchors_ic: np.ndarray


def _conditional_tables(probs: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """CDF tables for the sequential conditional binomial chain.

    ``tables[j, r, k] = P(Binomial(r, pc_j) <= k)`` for remaining count r,
    padded with 1.0 beyond the support so that inverse lookups always land
    inside [0, r].
    """
    h = probs.size
    width = n + 2
    tables = np.ones((h - 1, n + 1, width))
    remaining_mass = 1.0
    r = np.arange(n + 1)[:, None]
    k = np.arange(width)[None, :]
    for j in range(h - 1):
        pc = 0.0 if remaining_mass <= 0.0 else min(probs[j] / remaining_mass, 1.0)
        cdf = _sstats.binom.cdf(np.minimum(k, r), r, pc)
        cdf = np.where(k >= r, 1.0, cdf)
        tables[j] = np.maximum.accumulate(np.minimum(cdf, 1.0), axis=1)
        tables[j][:, -1] = 1.0
        remaining_mass -= probs[j]
    anchors = np.argmax(tables >= 0.5, axis=2).astype(np.int64)
    return tables, anchors


def build_groups(specs: Sequence, shifts: Sequence, n_per_sample: int) -> list[StreamGroup]:
    """Group consecutive streams with identical (spec, shift) pairs."""
    if len(specs) != len(shifts):
        raise ValueError(f"{len(specs)} specs but {len(shifts)} shifts")
    groups: list[StreamGroup] = []
    run_key = None
    for spec, shift in zip(specs, shifts):
        key = (id(spec), shift)
        if key == run_key:
            groups[-1].m += 1
            continue
        run_key = key
        probs = sampling_probs(spec, shift)
        tables, anchors = _conditional_tables(probs, n_per_sample)
        if isinstance(shift, NoShift):
            tables_ic, anchors_ic = tables, anchors
        else:
            tables_ic, anchors_ic = _conditional_tables(spec.pi0, n_per_sample)
        if isinstance(spec, NominalSpec):
            kind, alpha, denom = 0, None, 0.0
        elif isinstance(spec, OrdinalSpec):
            kind, alpha, denom = 1, spec.alpha, n_per_sample * spec.alpha_quad
        else:
            raise TypeError(f"unknown stream spec {spec!r}")
        groups.append(StreamGroup(
            kind=kind, m=1, h=spec.h, df=spec.df, pi0=spec.pi0,
            probs=probs, ln_npi0=np.log(n_per_sample * spec.pi0),
            alpha=alpha, denom=denom,
            tables=tables, anchors=anchors,
            tables_ic=tables_ic, anchors_ic=anchors_ic,
        ))
    if not groups:
        raise ValueError("need at least one stream")
    return groups


# ---------------------------------------------------------------------------
# numba draw kernel


@njit(cache=True)
def _draw_block(unif, tables, anchors, m, h, n, out):  # pragma: no cover - jitted
    """Turn uniforms into multinomial counts for one group.

    unif: (B, S, m*(h-1)) uniforms; out: (B, S, m, h) float64 counts.
    Each level is the inverse CDF of its conditional binomial, located by a
    short scan outward from the distribution's median.
    """
    nb, ns = unif.shape[0], unif.shape[1]
    for b in range(nb):
        for s in range(ns):
            pos = 0
            for mm in range(m):
                remaining = n
                for j in range(h - 1):
                    u = unif[b, s, pos]
                    pos += 1
                    k = anchors[j, remaining]
                    if tables[j, remaining, k] < u:
                        k += 1
                        while tables[j, remaining, k] < u:
                            k += 1
                    else:
                        while k > 0 and tables[j, remaining, k - 1] >= u:
                            k -= 1
                    out[b, s, mm, j] = k
                    remaining -= k
                out[b, s, mm, h - 1] = remaining
    return out


# ---------------------------------------------------------------------------
# chi-square CDF, vectorized with closed forms for the small dfs in hot loops

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def _chi2_cdf_array(x: np.ndarray, df: int) -> np.ndarray:
    y = 0.5 * x
    if df == 1:
        return special.erf(np.sqrt(y))
    if df == 2:
        return -np.expm1(-y)
    if df == 3:
        s = np.sqrt(y)
        return special.erf(s) - 2.0 * _INV_SQRT_PI * s * np.exp(-y)
    if df == 4:
        return -np.expm1(-y) - y * np.exp(-y)
    return special.gammainc(0.5 * df, y)


# ---------------------------------------------------------------------------
# fusion, vectorized over a block of replications


def _zhang_consts(p: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(1, p + 1)
    thresholds = (i - 0.75) / p
    ln_denom = np.log((p - 0.5) / (i - 0.75) - 1.0)
    return thresholds, ln_denom


def _fuse_block(scores: np.ndarray, statistic: str, zc) -> np.ndarray:
    if statistic == "sum":
        return scores.sum(axis=1)
    if statistic == "max":
        return scores.max(axis=1)
    thresholds, ln_denom = zc
    ordered = np.sort(scores, axis=1)
    terms = (np.log(1.0 / ordered - 1.0) - ln_denom) ** 2
    return np.where(ordered >= thresholds, terms, 0.0).sum(axis=1)


# ---------------------------------------------------------------------------
# block simulation


class _BlockSim:
    """Lockstep simulation of a block of replications."""

    def __init__(self, groups, lam, n_per_sample, rngs, warmup):
        self.groups = groups
        self.lam = lam
        self.n = n_per_sample
        self.rngs = list(rngs)
        self.nb = len(self.rngs)
        self.p = sum(g.m for g in groups)
        self.d = sum(g.m * (g.h - 1) for g in groups)
        self.w = [np.broadcast_to(self.n * g.pi0, (self.nb, g.m, g.h)).copy()
                  for g in groups]
        self.scores = np.empty((self.nb, self.p))
        self._warm(warmup)

    def _draw(self, nsteps: int, ic: bool):
        unif = np.empty((self.nb, nsteps, self.d))
        for i, rng in enumerate(self.rngs):
            unif[i] = rng.random((nsteps, self.d))
        counts = []
        off = 0
        for g in self.groups:
            width = g.m * (g.h - 1)
            out = np.empty((self.nb, nsteps, g.m, g.h))
            tables = g.tables_ic if ic else g.tables
            anchors = g.anchors_ic if ic else g.anchors
            _draw_block(np.ascontiguousarray(unif[:, :, off:off + width]),
                        tables, anchors, g.m, g.h, self.n, out)
            counts.append(out)
            off += width
        return counts

    def _warm(self, warmup: int):
        done = 0
        while done < warmup:
            nsteps = min(CHUNK, warmup - done)
            counts = self._draw(nsteps, ic=True)
            for s in range(nsteps):
                for gi in range(len(self.groups)):
                    w = self.w[gi]
                    w *= 1.0 - self.lam
                    w += self.lam * counts[gi][:, s]
            done += nsteps

    def step_scores(self, counts, s: int) -> np.ndarray:
        """Advance one sample and fill the per-stream score matrix."""
        scale = (2.0 - self.lam) / self.lam
        col = 0
        for gi, g in enumerate(self.groups):
            w = self.w[gi]
            w *= 1.0 - self.lam
            w += self.lam * counts[gi][:, s]
            if g.kind == 0:
                # the inner clamp only matters at lam = 1, where w can hold
                # exact zeros: 0 * log(tiny) is the required 0 ln 0 = 0
                lw = np.log(np.maximum(w, 1e-300))
                lw -= g.ln_npi0
                stat = 2.0 * np.einsum("bmh,bmh->bm", w, lw)
                np.maximum(stat, 0.0, out=stat)
            else:
                dot = w @ g.alpha
                stat = dot * dot / g.denom
            u = _chi2_cdf_array(scale * stat, g.df)
            np.clip(u, U_CLAMP, 1.0 - U_CLAMP, out=u)
            self.scores[: self.nb, col:col + g.m] = u
            col += g.m
        return self.scores[: self.nb]

    def compact(self, keep: np.ndarray):
        self.w = [w[keep].copy() for w in self.w]
        self.rngs = [r for r, k in zip(self.rngs, keep) if k]
        self.nb = len(self.rngs)


def run_length_block(groups, lam, n_per_sample, statistic, limit,
                     rngs, cap, warmup) -> np.ndarray:
    """Run lengths (first sample whose fused value exceeds ``limit``) per rep."""
    sim = _BlockSim(groups, lam, n_per_sample, rngs, warmup)
    zc = _zhang_consts(sim.p) if statistic == "zhang" else None
    out = np.full(len(rngs), cap, dtype=np.int64)
    alive = np.arange(len(rngs))
    k = 0
    while k < cap and alive.size:
        nsteps = min(CHUNK, cap - k)
        counts = sim._draw(nsteps, ic=False)
        first = np.full(alive.size, -1, dtype=np.int64)
        for s in range(nsteps):
            scores = sim.step_scores(counts, s)
            values = _fuse_block(scores, statistic, zc)
            hit = (values > limit) & (first < 0)
            first[hit] = k + s + 1
        k += nsteps
        alarmed = first > 0
        out[alive[alarmed]] = first[alarmed]
        if alarmed.any():
            keep = ~alarmed
            alive = alive[keep]
            sim.compact(keep)
    return out


def trajectory_block(groups, lam, n_per_sample, statistics, rngs,
                     horizon, warmup) -> dict[str, list[tuple[np.ndarray, np.ndarray]]]:
    """Running-max record curves of the fused statistics up to ``horizon``.

    For each statistic and replication, returns the strictly increasing
    record values with the samples at which they occurred; the run length at
    any limit L is the time of the first record exceeding L.
    """
    sim = _BlockSim(groups, lam, n_per_sample, rngs, warmup)
    nb = len(rngs)
    zc = _zhang_consts(sim.p) if "zhang" in statistics else None
    curmax = {st: np.full(nb, -np.inf) for st in statistics}
    times = {st: [[] for _ in range(nb)] for st in statistics}
    values = {st: [[] for _ in range(nb)] for st in statistics}
    k = 0
    while k < horizon:
        nsteps = min(CHUNK, horizon - k)
        counts = sim._draw(nsteps, ic=False)
        for s in range(nsteps):
            scores = sim.step_scores(counts, s)
            for st in statistics:
                fused = _fuse_block(scores, st, zc)
                hit = fused > curmax[st]
                for b in np.flatnonzero(hit):
                    times[st][b].append(k + s + 1)
                    values[st][b].append(fused[b])
                curmax[st][hit] = fused[hit]
        k += nsteps
    return {
        st: [(np.asarray(times[st][b], dtype=np.int64),
              np.asarray(values[st][b]))
             for b in range(nb)]
        for st in statistics
    }


def statistic_values_block(groups, lam, n_per_sample, statistics, rngs,
                           horizon, warmup) -> dict[str, np.ndarray]:
    """Full fused-statistic paths, shape (reps, horizon); used for diagnostics."""
    sim = _BlockSim(groups, lam, n_per_sample, rngs, warmup)
    zc = _zhang_consts(sim.p) if "zhang" in statistics else None
    out = {st: np.empty((len(rngs), horizon)) for st in statistics}
    k = 0
    while k < horizon:
        nsteps = min(CHUNK, horizon - k)
        counts = sim._draw(nsteps, ic=False)
        for s in range(nsteps):
            scores = sim.step_scores(counts, s)
            for st in statistics:
                out[st][:, k + s] = _fuse_block(scores, st, zc)
        k += nsteps
    return out


# ---------------------------------------------------------------------------
# parallel drivers


def _rep_rngs(master_seed: int, branch: tuple[int, ...], rep_ids: np.ndarray):
    return [make_rng(master_seed, *branch, int(r)) for r in rep_ids]


def _runlength_task(args):
    (groups, lam, n, statistic, limit, master_seed, branch, rep_ids,
     cap, warmup) = args
    rngs = _rep_rngs(master_seed, branch, rep_ids)
    return rep_ids, run_length_block(groups, lam, n, statistic, limit, rngs,
                                     cap, warmup)


def _trajectory_task(args):
    (groups, lam, n, statistics, master_seed, branch, rep_ids,
     horizon, warmup) = args
    rngs = _rep_rngs(master_seed, branch, rep_ids)
    return rep_ids, trajectory_block(groups, lam, n, statistics, rngs,
                                     horizon, warmup)


def _block_ranges(reps: int):
    return [np.arange(lo, min(lo + BLOCK, reps)) for lo in range(0, reps, BLOCK)]


def _map_blocks(task_fn, arg_fn, reps: int, workers: Optional[int]):
    blocks = _block_ranges(reps)
    workers = min(default_workers() if workers is None else workers, len(blocks))
    if workers <= 1:
        return [task_fn(arg_fn(b)) for b in blocks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task_fn, [arg_fn(b) for b in blocks]))


def run_lengths_parallel(groups, lam, n_per_sample, statistic, limit, reps,
                         master_seed, branch=(), cap=DEFAULT_CAP,
                         warmup=DEFAULT_WARMUP, workers=None) -> np.ndarray:
    """Run lengths of ``reps`` independent replications, ordered by index."""
    results = _map_blocks(
        _runlength_task,
        lambda b: (groups, lam, n_per_sample, statistic, limit, master_seed,
                   tuple(branch), b, cap, warmup),
        reps, workers)
    out = np.empty(reps, dtype=np.int64)
    for rep_ids, lengths in results:
        out[rep_ids] = lengths
    return out


def trajectories_parallel(groups, lam, n_per_sample, statistics, reps,
                          master_seed, branch=(), horizon=2000,
                          warmup=DEFAULT_WARMUP, workers=None):
    """Record curves for ``reps`` replications, ordered by index."""
    results = _map_blocks(
        _trajectory_task,
        lambda b: (groups, lam, n_per_sample, tuple(statistics), master_seed,
                   tuple(branch), b, horizon, warmup),
        reps, workers)
    merged = {st: [None] * reps for st in statistics}
    for rep_ids, recs in results:
        for st in statistics:
            for i, r in enumerate(rep_ids):
                merged[st][r] = recs[st][i]
    return merged
