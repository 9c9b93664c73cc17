"""Streaming Monte Carlo summaries that never materialize dense paths.

Each realization is reduced to small per-block sums as soon as it is drawn.
Blocks are merged in realization order, so the results do not depend on the
thread count. These are the entry points for long horizons (10⁴ years or
50,000 realizations) where dense ensembles would not fit in memory.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..freq_analytic import FreqParams
from ..loss_analytic import ConfigError, LossModel, PairLossModel, bins_per_window
from . import kernels
from .engine import (
    _EMPTY,
    SimConfig,
    StreamDraw,
    _check_clip,
    _log_floor,
    _map_realizations,
    _v0,
    draw_pair,
    draw_single,
    window_sums,
)
from .estimators import (
    DEFAULT_BATCHES,
    BlockMoments,
    CovEstimate,
    LagEstimate,
    MomentEstimate,
    blocks_dense,
    blocks_dense_pair,
    blocks_sparse,
    pooled_lag_cov,
    split_edges,
    time_blocks,
)
from .rng import substream

log = logging.getLogger(__name__)


@dataclass
class LossSummary:
    R: MomentEstimate
    Q: dict
    n_realizations: int
    n_events: int
    clip_fraction: float
    partial: bool
    elapsed: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "R": self.R.to_dict(),
            "Q": {str(k): v.to_dict() for k, v in self.Q.items()},
            "n_realizations": self.n_realizations,
            "n_events": self.n_events,
            "clip_fraction": self.clip_fraction,
            "partial": self.partial,
            "elapsed": self.elapsed,
            "meta": self.meta,
        }


@dataclass
class PairSummary:
    R: CovEstimate
    Q: dict
    n_realizations: int
    n_floor: int
    clip_fraction: float
    partial: bool
    elapsed: float
    cross: Optional[LagEstimate] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "R": self.R.to_dict(),
            "Q": {str(k): v.to_dict() for k, v in self.Q.items()},
            "n_realizations": self.n_realizations,
            "n_floor": self.n_floor,
            "clip_fraction": self.clip_fraction,
            "partial": self.partial,
            "elapsed": self.elapsed,
            "meta": self.meta,
        }
        if self.cross is not None:
            out["cross"] = [list(r) for r in self.cross.rows()]
        return out


@dataclass
class RateSummary:
    moments: MomentEstimate
    autocov: LagEstimate
    n_realizations: int
    meta: dict = field(default_factory=dict)


def _windows(T_ws: Sequence[float], cfg: SimConfig):
    out = []
    for T_w in T_ws:
        n = bins_per_window(T_w, cfg.dt)
        nw = cfg.n_bins // n
        if nw < 2:
            raise ConfigError(f"horizon {cfg.horizon} holds fewer than two windows of T_w={T_w}")
        out.append((float(T_w), n, nw))
    return out


def _q_blocks(n_real: int, nw: int) -> int:
    return min(time_blocks(n_real), max(1, nw // 2))


def blocks_sparse_pair(d1: StreamDraw, d2: StreamDraw, n_bins: int, k: int) -> BlockMoments:
    """Paired blocks of two mostly-zero binned series."""
    b1 = blocks_sparse(d1.bins, d1.losses, n_bins, k)
    b2 = blocks_sparse(d2.bins, d2.losses, n_bins, k)
    edges = split_edges(n_bins, k)
    common, i1, i2 = np.intersect1d(d1.bins, d2.bins, assume_unique=True, return_indices=True)
    blk = np.searchsorted(edges, common, side="right") - 1
    p12 = np.bincount(blk, weights=d1.losses[i1] * d2.losses[i2], minlength=edges.shape[0] - 1)
    s12 = p12 - b1.n * b1.m1 * b2.m1
    return BlockMoments(b1.n, b1.m1, b1.s11, b2.m1, b2.s11, s12)


def _run(fn, cfg: SimConfig):
    t0 = time.perf_counter()
    parts = _map_realizations(fn, cfg.n_realizations, cfg.n_threads, cfg.time_budget)
    if not parts:
        raise ConfigError("time budget exhausted before the first realization finished")
    partial = len(parts) < cfg.n_realizations
    if partial:
        log.warning("time budget reached after %d of %d realizations", len(parts), cfg.n_realizations)
    return parts, partial, time.perf_counter() - t0


def loss_window_stats(m: LossModel, cfg: SimConfig, T_ws: Sequence[float] = (1.0,)) -> LossSummary:
    """Per-bin and per-window loss moments, pooled over realizations and time."""
    wins = _windows(T_ws, cfg)
    kr = time_blocks(cfg.n_realizations)

    def one(r):
        d = draw_single(m, cfg, r)
        rb = blocks_sparse(d.bins, d.losses, cfg.n_bins, kr)
        qb = [blocks_dense(window_sums(d, n, nw), _q_blocks(cfg.n_realizations, nw)) for _, n, nw in wins]
        return rb, qb, d.n_clip, d.bins.shape[0]

    parts, partial, elapsed = _run(one, cfg)
    n_done = len(parts)
    frac = _check_clip(sum(p[2] for p in parts), n_done * cfg.n_bins, cfg)
    R = BlockMoments.concat(p[0] for p in parts).moments(DEFAULT_BATCHES)
    Q = {
        T_w: BlockMoments.concat(p[1][i] for p in parts).moments(DEFAULT_BATCHES)
        for i, (T_w, _, _) in enumerate(wins)
    }
    return LossSummary(
        R=R,
        Q=Q,
        n_realizations=n_done,
        n_events=int(sum(p[3] for p in parts)),
        clip_fraction=frac,
        partial=partial,
        elapsed=elapsed,
        meta={"config": cfg.to_dict(), "severity": m.severity.to_dict()},
    )


def _lag_corrections(b, x, lo, hi):
    """Σ x over bins in [lo, hi) for arrays of bounds."""
    c = np.concatenate([[0.0], np.cumsum(x)])
    return c[np.searchsorted(b, hi, side="left")] - c[np.searchsorted(b, lo, side="left")]


def _sparse_cross_parts(d1: StreamDraw, d2: StreamDraw, n_bins: int, lags: np.ndarray):
    kmax = int(np.abs(lags).max()) if lags.shape[0] else 0
    full = kernels.sparse_lag_products(d1.bins, d1.losses, d2.bins, d2.losses, kmax)
    prod = full[lags + kmax]
    # x1 runs over bins j+k, x2 over bins j, j in [max(0,-k), n_bins-max(0,k))
    j_lo = np.maximum(0, -lags)
    j_hi = n_bins - np.maximum(0, lags)
    s1 = _lag_corrections(d1.bins, d1.losses, j_lo + lags, j_hi + lags)
    s2 = _lag_corrections(d2.bins, d2.losses, j_lo, j_hi)
    return prod, s1, s2, float(d1.losses.sum()), float(d2.losses.sum())


def _pool_cross(parts, n_bins: int, lags: np.ndarray, dt: float) -> LagEstimate:
    n = len(parts)
    mu1 = sum(p[3] for p in parts) / (n * n_bins)
    mu2 = sum(p[4] for p in parts) / (n * n_bins)
    m = (n_bins - np.abs(lags)).astype(np.float64)
    per = np.empty((n, lags.shape[0]))
    for i, (prod, s1, s2, _, _) in enumerate(parts):
        per[i] = (prod - mu2 * s1 - mu1 * s2 + m * mu1 * mu2) / m
    se = per.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(lags.shape[0], np.nan)
    return LagEstimate(lags=lags * dt, values=per.mean(axis=0), se=se, dt=dt, n_realizations=n)


def _lag_grid(max_lag: float, step: float, dt: float, n_bins: int, symmetric: bool) -> np.ndarray:
    kmax = int(round(max_lag / dt))
    if kmax > n_bins // 2:
        raise ConfigError("max_lag must not exceed half the horizon")
    ks = max(1, int(round(step / dt)))
    pos = np.arange(0, kmax + 1, ks, dtype=np.int64)
    return np.concatenate([-pos[:0:-1], pos]) if symmetric else pos


def loss_autocov_stats(m: LossModel, cfg: SimConfig, max_lag: float, step: float) -> LagEstimate:
    """Across-realization loss autocovariance at lags 0, step, ..., max_lag."""
    lags = _lag_grid(max_lag, step, cfg.dt, cfg.n_bins, symmetric=False)

    def one(r):
        d = draw_single(m, cfg, r)
        return _sparse_cross_parts(d, d, cfg.n_bins, lags), d.n_clip

    parts, _, _ = _run(one, cfg)
    _check_clip(sum(p[1] for p in parts), len(parts) * cfg.n_bins, cfg)
    return _pool_cross([p[0] for p in parts], cfg.n_bins, lags, cfg.dt)


def pair_window_stats(
    m: PairLossModel,
    cfg: SimConfig,
    T_ws: Sequence[float] = (1.0,),
    max_lag: Optional[float] = None,
    lag_step: Optional[float] = None,
) -> PairSummary:
    """Cov(R₁,R₂), Cov(Q₁,Q₂) per window and optionally the CC_R lag curve."""
    wins = _windows(T_ws, cfg)
    kr = time_blocks(cfg.n_realizations)
    lags = None
    if max_lag is not None:
        lags = _lag_grid(max_lag, lag_step or max_lag / 20, cfg.dt, cfg.n_bins, symmetric=True)

    def one(r):
        d1, d2 = draw_pair(m, cfg, r)
        rb = blocks_sparse_pair(d1, d2, cfg.n_bins, kr)
        qb = []
        for _, n, nw in wins:
            q1 = window_sums(d1, n, nw)
            q2 = window_sums(d2, n, nw)
            qb.append(blocks_dense_pair(q1, q2, _q_blocks(cfg.n_realizations, nw)))
        cc = _sparse_cross_parts(d1, d2, cfg.n_bins, lags) if lags is not None else None
        return rb, qb, d1.n_clip + d2.n_clip, d1.n_floor + d2.n_floor, cc

    parts, partial, elapsed = _run(one, cfg)
    n_done = len(parts)
    frac = _check_clip(sum(p[2] for p in parts), 2 * n_done * cfg.n_bins, cfg)
    n_floor = int(sum(p[3] for p in parts))
    _log_floor(n_floor)
    R = BlockMoments.concat(p[0] for p in parts).covariance(DEFAULT_BATCHES)
    Q = {
        T_w: BlockMoments.concat(p[1][i] for p in parts).covariance(DEFAULT_BATCHES)
        for i, (T_w, _, _) in enumerate(wins)
    }
    cross = _pool_cross([p[4] for p in parts], cfg.n_bins, lags, cfg.dt) if lags is not None else None
    return PairSummary(
        R=R,
        Q=Q,
        n_realizations=n_done,
        n_floor=n_floor,
        clip_fraction=frac,
        partial=partial,
        elapsed=elapsed,
        cross=cross,
        meta={"config": cfg.to_dict(), "coupling": m.coupling.to_dict()},
    )


def rate_stats(p: FreqParams, cfg: SimConfig, max_lag: float, step: float) -> RateSummary:
    """Rate mean, variance and autocovariance without keeping the paths."""
    lags = _lag_grid(max_lag, step, cfg.dt, cfg.n_bins, symmetric=False)
    n_burn = cfg.burn_bins(p.tau)
    logd = -cfg.dt / p.tau
    h = -p.tau * math.expm1(logd) / cfg.dt
    v0 = _v0(p, cfg)
    shift = p.mean_rate
    kb_ = time_blocks(cfg.n_realizations)

    def one(r):
        jumps = kernels.jump_bins(substream(cfg.base_seed, r, "private-1"), p.gamma, cfg.dt, n_burn + cfg.n_bins)
        kb, kv, _ = kernels.build_knots(jumps, _EMPTY, p.a, logd, v0)
        x = kernels.rate_path(kb, kv, v0, logd, h, n_burn, n_burn + cfg.n_bins)
        return blocks_dense(x, kb_), kernels.lag_sums(x, lags, shift)

    parts, _, _ = _run(one, cfg)
    mom = BlockMoments.concat(q[0] for q in parts).moments(DEFAULT_BATCHES)
    ac = pooled_lag_cov([q[1] for q in parts], cfg.n_bins, lags, cfg.dt)
    return RateSummary(moments=mom, autocov=ac, n_realizations=len(parts), meta={"config": cfg.to_dict()})
