"""Pooled moment, covariance and lag-covariance estimators.

Samples are pooled across realizations and time, which assumes stationarity.
Standard errors come from batch means: contiguous blocks of samples (whole
realizations, or time blocks within them when there are few realizations)
are grouped into batches and the spread of batch estimates gives the SE.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..loss_analytic import LagSamples
from . import kernels

DEFAULT_BATCHES = 40


@dataclass
class MomentEstimate:
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    n: int
    n_batches: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CovEstimate:
    cov: float
    se: float
    mean1: float
    mean2: float
    var1: float
    var2: float
    n: int
    n_batches: int

    @property
    def corr(self) -> float:
        den = math.sqrt(self.var1 * self.var2)
        return self.cov / den if den > 0 else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corr"] = self.corr
        return d


@dataclass
class LagEstimate:
    """Raw covariance per lag (in the units of the binned series)."""

    lags: np.ndarray
    values: np.ndarray
    se: np.ndarray
    dt: float
    n_realizations: int

    def as_lag_samples(self) -> LagSamples:
        """Density form (values/dt²) suitable for window integration."""
        lags = np.asarray(self.lags)
        even = bool(np.all(lags >= 0))
        return LagSamples(lags=lags, values=np.asarray(self.values) / self.dt**2, dt=self.dt, even=even)

    def rows(self):
        for t, v, s in zip(self.lags, self.values, self.se):
            yield float(t), float(v), float(s)


class BlockMoments:
    """Per-block count, mean and centred sums for one or two variables."""

    def __init__(self, n, m1, s11, m2=None, s22=None, s12=None):
        self.n = np.asarray(n, dtype=np.float64)
        self.m1 = np.asarray(m1, dtype=np.float64)
        self.s11 = np.asarray(s11, dtype=np.float64)
        self.pair = m2 is not None
        if self.pair:
            self.m2 = np.asarray(m2, dtype=np.float64)
            self.s22 = np.asarray(s22, dtype=np.float64)
            self.s12 = np.asarray(s12, dtype=np.float64)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("no blocks to combine")
        if parts[0].pair:
            return cls(
                *[np.concatenate([getattr(p, f) for p in parts]) for f in ("n", "m1", "s11", "m2", "s22", "s12")]
            )
        return cls(*[np.concatenate([getattr(p, f) for p in parts]) for f in ("n", "m1", "s11")])

    @staticmethod
    def _merge(n, m1, s11, m2=None, s22=None, s12=None):
        # exact pooled merge (parallel-axis form)
        tot = n.sum()
        mu1 = float(np.dot(n, m1) / tot)
        d1 = m1 - mu1
        out = [tot, mu1, float(s11.sum() + np.dot(n, d1 * d1))]
        if m2 is not None:
            mu2 = float(np.dot(n, m2) / tot)
            d2 = m2 - mu2
            out += [mu2, float(s22.sum() + np.dot(n, d2 * d2)), float(s12.sum() + np.dot(n, d1 * d2))]
        return out

    def _fields(self, sl=slice(None)):
        if self.pair:
            return (self.n[sl], self.m1[sl], self.s11[sl], self.m2[sl], self.s22[sl], self.s12[sl])
        return (self.n[sl], self.m1[sl], self.s11[sl])

    def _batches(self, n_batches):
        nb = self.n.shape[0]
        b = max(1, min(n_batches, nb))
        edges = np.linspace(0, nb, b + 1).round().astype(int)
        return [self._merge(*self._fields(slice(lo, hi))) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]

    def moments(self, n_batches=DEFAULT_BATCHES) -> MomentEstimate:
        tot, mu, s = self._merge(*self._fields())[:3]
        if tot < 2:
            raise ValueError("need at least 2 samples")
        var = s / (tot - 1)
        bs = self._batches(n_batches)
        if len(bs) >= 2:
            bm = np.array([x[1] for x in bs])
            bv = np.array([x[2] / (x[0] - 1) if x[0] > 1 else np.nan for x in bs])
            se_m = float(bm.std(ddof=1) / math.sqrt(len(bs)))
            se_v = float(np.nanstd(bv, ddof=1) / math.sqrt(np.isfinite(bv).sum()))
        else:
            se_m = se_v = float("nan")
        return MomentEstimate(float(mu), float(var), se_m, se_v, int(tot), len(bs))

    def covariance(self, n_batches=DEFAULT_BATCHES) -> CovEstimate:
        if not self.pair:
            raise ValueError("covariance needs paired blocks")
        tot, mu1, s11, mu2, s22, s12 = self._merge(*self._fields())
        if tot < 2:
            raise ValueError("need at least 2 samples")
        bs = self._batches(n_batches)
        if len(bs) >= 2:
            bc = np.array([x[5] / (x[0] - 1) for x in bs if x[0] > 1])
            se = float(bc.std(ddof=1) / math.sqrt(bc.shape[0]))
        else:
            se = float("nan")
        return CovEstimate(
            cov=float(s12 / (tot - 1)),
            se=se,
            mean1=float(mu1),
            mean2=float(mu2),
            var1=float(s11 / (tot - 1)),
            var2=float(s22 / (tot - 1)),
            n=int(tot),
            n_batches=len(bs),
        )


def split_edges(length: int, k: int) -> np.ndarray:
    k = max(1, min(k, length))
    return np.linspace(0, length, k + 1).round().astype(np.int64)


def blocks_dense(x: np.ndarray, k: int) -> BlockMoments:
    """Blocks of a 1-D series split into k contiguous time blocks."""
    edges = split_edges(x.shape[0], k)
    n, m, s = [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        seg = x[lo:hi]
        mu = seg.mean()
        n.append(hi - lo)
        m.append(mu)
        s.append(float(np.dot(seg - mu, seg - mu)))
    return BlockMoments(n, m, s)


def blocks_dense_pair(x: np.ndarray, y: np.ndarray, k: int) -> BlockMoments:
    edges = split_edges(x.shape[0], k)
    cols = [[] for _ in range(6)]
    for lo, hi in zip(edges[:-1], edges[1:]):
        a = x[lo:hi]
        b = y[lo:hi]
        ma, mb = a.mean(), b.mean()
        da, db = a - ma, b - mb
        for c, v in zip(cols, (hi - lo, ma, float(np.dot(da, da)), mb, float(np.dot(db, db)), float(np.dot(da, db)))):
            c.append(v)
    return BlockMoments(*cols)


def blocks_sparse(bins: np.ndarray, values: np.ndarray, n_bins: int, k: int) -> BlockMoments:
    """Blocks of a mostly-zero binned series given only its nonzero entries."""
    edges = split_edges(n_bins, k)
    blk = np.searchsorted(edges, bins, side="right") - 1
    nb = edges.shape[0] - 1
    s1 = np.bincount(blk, weights=values, minlength=nb)
    s2 = np.bincount(blk, weights=values * values, minlength=nb)
    n = np.diff(edges).astype(np.float64)
    mean = s1 / n
    return BlockMoments(n, mean, s2 - s1 * mean)


def time_blocks(n_realizations: int, n_batches: int = DEFAULT_BATCHES) -> int:
    """Time blocks per realization needed to reach n_batches in total."""
    return max(1, int(math.ceil(n_batches / max(n_realizations, 1))))


def _as_2d(x) -> np.ndarray:
    data = getattr(x, "data", x)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected a 1-D series or a (realizations, samples) array")
    return arr


def estimate_moments(x, n_batches: int = DEFAULT_BATCHES) -> MomentEstimate:
    """Pooled mean and variance with batch-means standard errors.

    Args:
        x: a PathEnsemble, a (realizations, samples) array such as window
            sums, or a single series.
    """
    arr = _as_2d(x)
    if arr.size < 2:
        raise ValueError("need at least 2 samples")
    k = min(time_blocks(arr.shape[0], n_batches), max(1, arr.shape[1] // 2))
    return BlockMoments.concat(blocks_dense(row, k) for row in arr).moments(n_batches)


def estimate_covariance(x, y, n_batches: int = DEFAULT_BATCHES) -> CovEstimate:
    a, b = _as_2d(x), _as_2d(y)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal shape")
    k = min(time_blocks(a.shape[0], n_batches), max(1, a.shape[1] // 2))
    return BlockMoments.concat(blocks_dense_pair(r1, r2, k) for r1, r2 in zip(a, b)).covariance(n_batches)


def _lag_bins(max_lag: float, dt: float, n_bins: int, step: int = 1) -> np.ndarray:
    kmax = int(round(max_lag / dt))
    if kmax > n_bins // 2:
        raise ValueError("max_lag must not exceed half the horizon")
    return np.arange(0, kmax + 1, max(1, int(step)), dtype=np.int64)


def pooled_lag_cov(parts, n_bins: int, lags: np.ndarray, dt: float):
    """Combine per-realization lag sums into pooled estimates and SEs.

    ``parts`` holds (Σy, Σy², prod, head, tail) per realization for y = x - shift.
    """
    n = len(parts)
    s1 = np.array([p[0] for p in parts])
    ybar = s1.sum() / (n * n_bins)
    m = (n_bins - lags).astype(np.float64)
    per = np.empty((n, lags.shape[0]))
    for i, (_, _, prod, head, tail) in enumerate(parts):
        per[i] = (prod - ybar * (head + tail) + ybar * ybar * m) / m
    est = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(lags.shape[0], np.nan)
    return LagEstimate(lags=lags * dt, values=est, se=se, dt=dt, n_realizations=n)


def estimate_autocov(e, max_lag: float, step: int = 1) -> LagEstimate:
    """Across-realization, across-time covariance at lags 0..max_lag.

    The estimator divides by the number of overlapping pairs at each lag.
    """
    arr = _as_2d(e)
    dt = e.dt
    lags = _lag_bins(max_lag, dt, arr.shape[1], step)
    shift = float(arr.mean())
    parts = [kernels.lag_sums(np.ascontiguousarray(row), lags, shift) for row in arr]
    return pooled_lag_cov(parts, arr.shape[1], lags, dt)


def estimate_cross_cov(pair, max_lag: float, step: int = 1) -> LagEstimate:
    """Cov(x₁(t'+t), x₂(t')) for t in [-max_lag, max_lag]."""
    e1, e2 = pair
    a, b = _as_2d(e1), _as_2d(e2)
    if a.shape != b.shape:
        raise ValueError("ensembles must have equal shape")
    dt = e1.dt
    pos = _lag_bins(max_lag, dt, a.shape[1], step)
    lags = np.concatenate([-pos[:0:-1], pos])
    n, m_bins = a.shape
    mu1, mu2 = float(a.mean()), float(b.mean())
    m = (m_bins - np.abs(lags)).astype(np.float64)
    per = np.empty((n, lags.shape[0]))
    for i in range(n):
        prod = kernels.cross_lag_sums(
            np.ascontiguousarray(a[i] - mu1), np.ascontiguousarray(b[i] - mu2), lags
        )
        per[i] = prod / m
    est = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(lags.shape[0], np.nan)
    return LagEstimate(lags=lags * dt, values=est, se=se, dt=dt, n_realizations=n)
