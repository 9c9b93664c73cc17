"""Monte Carlo simulation of rate paths, loss paths and correlated pairs.

Every realization is an independent work unit that draws only from its own
substreams, so dense ensembles and streaming summaries are bit-identical for
any thread count. Streaming summaries keep per-block moment sums and merge
them in realization order.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import severity as sev
from ..freq_analytic import FreqParams
from ..loss_analytic import ConfigError, LossModel, PairLossModel, bins_per_window
from . import kernels
from .rng import ROLES, substream

log = logging.getLogger(__name__)

_EMPTY = np.empty(0, np.int64)


@dataclass(frozen=True)
class SimConfig:
    """Simulation grid and budget.

    Attributes:
        dt: grid step (years).
        horizon: recorded length of each realization (years).
        n_realizations: number of independent realizations.
        base_seed: root of all substreams.
        burn_in: discarded lead-in (years); None means 20 decay times.
        initial_rate: rate at the start of burn-in; None means the
            stationary mean aτγ. Use 0.0 for a cold start.
        n_threads: worker threads.
        max_clip_fraction: largest tolerated share of bins with p > 1.
        negative_stream: which stream of a pair takes the down-jump when c < 0.
        time_budget: optional wall-clock cap (seconds) for streaming runs;
            when exceeded the summary is flagged partial.
        max_dense_bytes: refuse to materialize larger dense ensembles.
    """

    dt: float = 0.001
    horizon: float = 100.0
    n_realizations: int = 100
    base_seed: int = 0
    burn_in: Optional[float] = None
    initial_rate: Optional[float] = None
    n_threads: int = 1
    max_clip_fraction: float = 1e-4
    negative_stream: int = 2
    time_budget: Optional[float] = None
    max_dense_bytes: int = 2 * 1024**3

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0")
        if int(self.n_realizations) < 1:
            raise ConfigError("n_realizations must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.initial_rate is not None and self.initial_rate < 0:
            raise ConfigError("initial_rate must be >= 0")
        if self.negative_stream not in (1, 2):
            raise ConfigError("negative_stream must be 1 or 2")
        if int(self.n_threads) < 1:
            raise ConfigError("n_threads must be >= 1")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be >= 0")

    @property
    def n_bins(self) -> int:
        return int(round(self.horizon / self.dt))

    def burn_bins(self, tau: float) -> int:
        b = 20.0 * tau if self.burn_in is None else self.burn_in
        return int(math.ceil(b / self.dt - 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PathEnsemble:
    """N realizations × M bins of rates or losses."""

    kind: str
    data: np.ndarray
    dt: float
    base_seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_realizations(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def horizon(self) -> float:
        return self.n_bins * self.dt


@dataclass
class StreamDraw:
    """Sparse output of one stream in one realization."""

    bins: np.ndarray
    losses: np.ndarray
    n_clip: int = 0
    n_floor: int = 0


def _map_realizations(fn: Callable[[int], object], n: int, n_threads: int, budget: Optional[float] = None):
    """Apply fn to 0..n-1 and return results in index order.

    With a time budget, work is issued in chunks and stops once the budget is
    spent; the returned list is then a prefix.
    """
    t0 = time.perf_counter()
    if n_threads <= 1:
        out = []
        for r in range(n):
            if budget is not None and time.perf_counter() - t0 > budget:
                break
            out.append(fn(r))
        return out
    chunk = max(n_threads * 4, 1)
    out = []
    with ThreadPoolExecutor(max_workers=n_threads) as ex:
        for lo in range(0, n, chunk):
            if budget is not None and time.perf_counter() - t0 > budget:
                break
            out.extend(ex.map(fn, range(lo, min(n, lo + chunk))))
    return out


def _v0(p: FreqParams, cfg: SimConfig) -> float:
    return p.a * p.tau * p.gamma if cfg.initial_rate is None else float(cfg.initial_rate)


def _shot_draw(
    p: FreqParams, spec, cfg: SimConfig, r: int, stream: int, pos: np.ndarray, neg: np.ndarray, n_burn: int
) -> StreamDraw:
    n_main = cfg.n_bins
    logd = -cfg.dt / p.tau
    v0 = _v0(p, cfg)
    kb, kv, n_floor = kernels.build_knots(pos, neg, p.a, logd, v0)
    qfac = -p.tau * math.expm1(logd)
    expected = p.a * p.tau * p.gamma * cfg.dt * n_main
    bins, n_clip = kernels.shot_events(
        substream(cfg.base_seed, r, f"bernoulli-{stream}"), kb, kv, v0, logd, qfac, n_burn, n_burn + n_main, expected
    )
    losses = sev.sample(spec, substream(cfg.base_seed, r, f"severity-{stream}"), bins.shape[0])
    return StreamDraw(bins=bins, losses=losses, n_clip=int(n_clip), n_floor=int(n_floor))


def draw_single(m: LossModel, cfg: SimConfig, r: int) -> StreamDraw:
    """Events and severities of realization r for one loss stream."""
    if m.homogeneous:
        p = m.freq.nu * cfg.dt
        bins, n_clip = kernels.homog_events(substream(cfg.base_seed, r, "bernoulli-1"), p, cfg.n_bins)
        losses = sev.sample(m.severity, substream(cfg.base_seed, r, "severity-1"), bins.shape[0])
        return StreamDraw(bins=bins, losses=losses, n_clip=int(n_clip))
    p = m.freq
    n_burn = cfg.burn_bins(p.tau)
    jumps = kernels.jump_bins(substream(cfg.base_seed, r, "private-1"), p.gamma, cfg.dt, n_burn + cfg.n_bins)
    return _shot_draw(p, m.severity, cfg, r, 1, jumps, _EMPTY, n_burn)


def draw_pair(m: PairLossModel, cfg: SimConfig, r: int) -> tuple[StreamDraw, StreamDraw]:
    """Events and severities of realization r for both streams of a pair."""
    pc = m.coupling
    p1, p2 = pc.p1, pc.p2
    shared = pc.common_rate
    g1 = p1.gamma - shared
    g2 = p2.gamma - shared
    # γ̄ = min(γ₁, γ₂) makes both private rates non-negative
    assert g1 > -1e-12 * max(1.0, p1.gamma) and g2 > -1e-12 * max(1.0, p2.gamma)
    n_burn = max(cfg.burn_bins(p1.tau), cfg.burn_bins(p2.tau))
    n_tot = n_burn + cfg.n_bins
    common = kernels.jump_bins(substream(cfg.base_seed, r, "common-jumps"), shared, cfg.dt, n_tot)
    priv1 = kernels.jump_bins(substream(cfg.base_seed, r, "private-1"), max(g1, 0.0), cfg.dt, n_tot)
    priv2 = kernels.jump_bins(substream(cfg.base_seed, r, "private-2"), max(g2, 0.0), cfg.dt, n_tot)
    negative = pc.c < 0
    if negative and cfg.negative_stream == 1:
        pos1, neg1 = priv1, common
    else:
        pos1, neg1 = np.sort(np.concatenate([common, priv1]), kind="stable"), _EMPTY
    if negative and cfg.negative_stream == 2:
        pos2, neg2 = priv2, common
    else:
        pos2, neg2 = np.sort(np.concatenate([common, priv2]), kind="stable"), _EMPTY
    d1 = _shot_draw(p1, m.sev1, cfg, r, 1, pos1, neg1, n_burn)
    d2 = _shot_draw(p2, m.sev2, cfg, r, 2, pos2, neg2, n_burn)
    return d1, d2


def _check_clip(n_clip: int, n_bins_total: int, cfg: SimConfig):
    frac = n_clip / max(n_bins_total, 1)
    if n_clip:
        log.warning("per-bin probability clipped to 1 in %d bins (fraction %.3g)", n_clip, frac)
    if frac > cfg.max_clip_fraction:
        raise ConfigError(
            f"clip fraction {frac:.3g} exceeds {cfg.max_clip_fraction:g}; refine dt or lower the rate"
        )
    return frac


def _log_floor(n_floor: int):
    if n_floor:
        log.info("rate floored at zero after a down-jump %d times", n_floor)


def _dense_guard(cfg: SimConfig, n_streams: int = 1):
    need = 8 * cfg.n_realizations * cfg.n_bins * n_streams
    if need > cfg.max_dense_bytes:
        raise ConfigError(
            f"dense ensemble needs {need / 1e9:.2f} GB; use the streaming summaries or raise max_dense_bytes"
        )


def _provenance(cfg: SimConfig, roles: Sequence[str], **extra) -> dict:
    meta = {"config": cfg.to_dict(), "roles": list(roles)}
    meta.update(extra)
    return meta


def simulate_rate_paths(p: FreqParams, cfg: SimConfig) -> PathEnsemble:
    """Bin-averaged shot-noise rate paths after burn-in."""
    _dense_guard(cfg)
    n_burn = cfg.burn_bins(p.tau)
    logd = -cfg.dt / p.tau
    h = -p.tau * math.expm1(logd) / cfg.dt
    v0 = _v0(p, cfg)

    def one(r):
        jumps = kernels.jump_bins(substream(cfg.base_seed, r, "private-1"), p.gamma, cfg.dt, n_burn + cfg.n_bins)
        kb, kv, _ = kernels.build_knots(jumps, _EMPTY, p.a, logd, v0)
        return kernels.rate_path(kb, kv, v0, logd, h, n_burn, n_burn + cfg.n_bins)

    rows = _map_realizations(one, cfg.n_realizations, cfg.n_threads)
    data = np.vstack(rows) if rows else np.empty((0, cfg.n_bins))
    return PathEnsemble("rate", data, cfg.dt, cfg.base_seed, _provenance(cfg, ["private-1"], freq=p.to_dict()))


def _densify(draw: StreamDraw, n_bins: int) -> np.ndarray:
    row = np.zeros(n_bins)
    row[draw.bins] = draw.losses
    return row


def simulate_losses(m: LossModel, cfg: SimConfig) -> PathEnsemble:
    """Dense loss paths: each bin holds 0 or one severity draw."""
    _dense_guard(cfg)
    draws = _map_realizations(lambda r: draw_single(m, cfg, r), cfg.n_realizations, cfg.n_threads)
    _check_clip(sum(d.n_clip for d in draws), cfg.n_bins * cfg.n_realizations, cfg)
    data = np.vstack([_densify(d, cfg.n_bins) for d in draws])
    roles = ["bernoulli-1", "severity-1"] + ([] if m.homogeneous else ["private-1"])
    return PathEnsemble("loss", data, cfg.dt, cfg.base_seed, _provenance(cfg, roles, severity=m.severity.to_dict()))


def simulate_pair(m: PairLossModel, cfg: SimConfig) -> tuple[PathEnsemble, PathEnsemble]:
    """Dense loss paths for both streams of a coupled pair."""
    _dense_guard(cfg, 2)
    draws = _map_realizations(lambda r: draw_pair(m, cfg, r), cfg.n_realizations, cfg.n_threads)
    n_total = cfg.n_bins * cfg.n_realizations
    _check_clip(sum(a.n_clip + b.n_clip for a, b in draws), 2 * n_total, cfg)
    _log_floor(sum(b.n_floor + a.n_floor for a, b in draws))
    meta = _provenance(cfg, list(ROLES), coupling=m.coupling.to_dict())
    e1 = PathEnsemble("loss", np.vstack([_densify(a, cfg.n_bins) for a, _ in draws]), cfg.dt, cfg.base_seed, meta)
    e2 = PathEnsemble("loss", np.vstack([_densify(b, cfg.n_bins) for _, b in draws]), cfg.dt, cfg.base_seed, meta)
    return e1, e2


def window_aggregate(e: PathEnsemble, T_w: float) -> np.ndarray:
    """Non-overlapping window sums, shape (N, floor(M/n))."""
    if e.kind != "loss":
        raise ConfigError("window aggregation applies to loss ensembles")
    n = bins_per_window(T_w, e.dt)
    if n > e.n_bins:
        raise ConfigError(f"T_w={T_w} exceeds the horizon {e.horizon}")
    w = e.n_bins // n
    return e.data[:, : w * n].reshape(e.n_realizations, w, n).sum(axis=2)


def window_sums(draw: StreamDraw, n: int, n_windows: int) -> np.ndarray:
    """Window sums of a sparse draw (bins beyond the last full window dropped)."""
    idx = draw.bins // n
    keep = idx < n_windows
    return np.bincount(idx[keep], weights=draw.losses[keep], minlength=n_windows)
