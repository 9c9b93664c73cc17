"""Compiled kernels for the sparse per-bin sampler.

Grid bins are indexed from 0 at the start of burn-in. Jumps that fall inside
bin b land at its right edge, so the rate over bin j is the decaying value
left by the last jump in a bin < j. Between jumps the per-bin event
probability only decreases, which lets events be drawn by geometric skipping
plus thinning instead of one uniform per bin. The result has the same law as
drawing Bernoulli(min(p_j, 1)) independently in every bin.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True)


@_jit
def _grow(buf, k):
    if k < buf.shape[0]:
        return buf
    new = np.empty(max(16, 2 * buf.shape[0]), buf.dtype)
    new[:k] = buf[:k]
    return new


@_jit
def jump_bins(rng, rate, dt, n_bins):
    """Sorted bin indices (with repeats) of a Poisson(rate) process on [0, n_bins*dt)."""
    if rate <= 0.0 or n_bins <= 0:
        return np.empty(0, np.int64)
    horizon = n_bins * dt
    mean = rate * horizon
    out = np.empty(int(mean + 6.0 * math.sqrt(mean) + 16.0), np.int64)
    k = 0
    t = 0.0
    while True:
        t += rng.standard_exponential() / rate
        if t >= horizon:
            break
        b = int(t / dt)
        if b >= n_bins:
            b = n_bins - 1
        out = _grow(out, k)
        out[k] = b
        k += 1
    return out[:k]


@_jit
def build_knots(pos, neg, a, logd, v0):
    """Post-jump rate values at every bin that receives jumps.

    ``pos`` and ``neg`` are sorted bin arrays of up- and down-jumps of size a.
    Down-jumps are applied after up-jumps in the same bin and the rate is
    floored at zero; each flooring is counted.
    """
    n = pos.shape[0] + neg.shape[0]
    kb = np.empty(n, np.int64)
    kv = np.empty(n, np.float64)
    i = 0
    j = 0
    m = 0
    last = -1
    v = v0
    n_floor = 0
    while i < pos.shape[0] or j < neg.shape[0]:
        if j >= neg.shape[0] or (i < pos.shape[0] and pos[i] <= neg[j]):
            b = pos[i]
        else:
            b = neg[j]
        n_up = 0
        while i < pos.shape[0] and pos[i] == b:
            n_up += 1
            i += 1
        n_dn = 0
        while j < neg.shape[0] and neg[j] == b:
            n_dn += 1
            j += 1
        v = v * math.exp((b - last) * logd) + a * n_up
        if n_dn > 0:
            v -= a * n_dn
            if v < 0.0:
                v = 0.0
                n_floor += 1
        kb[m] = b
        kv[m] = v
        m += 1
        last = b
    return kb[:m], kv[:m], n_floor


@_jit
def shot_events(rng, kb, kv, v0, logd, qfac, start, stop, expected):
    """Event bins in [start, stop) for a rate described by its jump knots.

    qfac converts a post-jump rate value into the probability for the next
    bin, i.e. the integral of the decaying rate over one bin. Within each
    inter-jump interval p_j = min(q·exp((j-b0-1)·logd), 1) is non-increasing,
    so a geometric skip at the current bound followed by thinning is exact.
    Returns the event bins relative to start and the number of bins whose
    raw probability exceeded 1.
    """
    out = np.empty(int(expected + 6.0 * math.sqrt(expected) + 16.0), np.int64)
    k = 0
    n_clip = 0
    b0 = -1
    v = v0
    nk = kb.shape[0]
    for i in range(nk + 1):
        hi = kb[i] if i < nk else stop - 1
        lo = b0 + 1
        if lo < start:
            lo = start
        if hi > stop - 1:
            hi = stop - 1
        q = v * qfac
        if lo <= hi and q > 0.0:
            j = lo
            pbar = q * math.exp((j - b0 - 1) * logd)
            while j <= hi:
                if pbar >= 1.0:
                    if k >= out.shape[0]:
                        out = _grow(out, k)
                    out[k] = j
                    k += 1
                    if pbar > 1.0:
                        n_clip += 1
                    j += 1
                    pbar = q * math.exp((j - b0 - 1) * logd)
                    continue
                if pbar <= 0.0:
                    # the decayed rate has underflowed; no further events here
                    break
                g = rng.standard_exponential() / -math.log1p(-pbar)
                if g >= hi - j + 1:
                    break
                jc = j + int(g)
                pc = q * math.exp((jc - b0 - 1) * logd)
                if rng.random() * pbar < pc:
                    if k >= out.shape[0]:
                        out = _grow(out, k)
                    out[k] = jc
                    k += 1
                j = jc + 1
                pbar = pc * math.exp(logd)
        if i < nk:
            b0 = kb[i]
            v = kv[i]
            if b0 >= stop - 1:
                break
    return out[:k] - start, n_clip


@_jit
def homog_events(rng, p, n_bins):
    """Bernoulli(min(p, 1)) events on n_bins bins by geometric skipping."""
    if p >= 1.0:
        n_clip = n_bins if p > 1.0 else 0
        return np.arange(n_bins), n_clip
    expected = p * n_bins
    out = np.empty(int(expected + 6.0 * math.sqrt(expected) + 16.0), np.int64)
    k = 0
    if p <= 0.0:
        return out[:0], 0
    rate = -math.log1p(-p)
    j = 0
    while True:
        g = rng.standard_exponential() / rate
        if g >= n_bins - j:
            break
        j += int(g)
        if k >= out.shape[0]:
            out = _grow(out, k)
        out[k] = j
        k += 1
        j += 1
    return out[:k], 0


@_jit
def rate_path(kb, kv, v0, logd, h, start, stop):
    """Bin-averaged rate on bins [start, stop)."""
    out = np.empty(stop - start, np.float64)
    b0 = -1
    v = v0
    i = 0
    n = kb.shape[0]
    for j in range(start, stop):
        while i < n and kb[i] < j:
            b0 = kb[i]
            v = kv[i]
            i += 1
        out[j - start] = h * v * math.exp((j - b0 - 1) * logd)
    return out


@_jit
def lag_sums(x, lags, shift):
    """Sums needed by the pooled lag-covariance estimator.

    For y = x - shift returns Σy, Σy², and for each lag k: Σ y[j+k]y[j],
    Σ y[k:], Σ y[:M-k].
    """
    m = x.shape[0]
    y = x - shift
    s1 = 0.0
    s2 = 0.0
    for j in range(m):
        s1 += y[j]
        s2 += y[j] * y[j]
    nl = lags.shape[0]
    prod = np.zeros(nl)
    head = np.zeros(nl)
    tail = np.zeros(nl)
    for i in range(nl):
        k = lags[i]
        s = 0.0
        for j in range(m - k):
            s += y[j + k] * y[j]
        prod[i] = s
        a = 0.0
        for j in range(k, m):
            a += y[j]
        head[i] = a
        b = 0.0
        for j in range(m - k):
            b += y[j]
        tail[i] = b
    return s1, s2, prod, head, tail


@_jit
def cross_lag_sums(x1, x2, lags):
    """Σ x1[j+k]·x2[j] for k >= 0 and Σ x1[j]·x2[j-k] for k < 0."""
    m = x1.shape[0]
    prod = np.zeros(lags.shape[0])
    for i in range(lags.shape[0]):
        k = lags[i]
        s = 0.0
        if k >= 0:
            for j in range(m - k):
                s += x1[j + k] * x2[j]
        else:
            for j in range(m + k):
                s += x1[j] * x2[j - k]
        prod[i] = s
    return prod


@_jit
def sparse_lag_products(b1, x1, b2, x2, kmax):
    """Σ x1[j+k]·x2[j] for k = -kmax..kmax from sorted sparse series.

    Index i of the result holds lag i - kmax.
    """
    out = np.zeros(2 * kmax + 1)
    lo = 0
    n1 = b1.shape[0]
    for i in range(b2.shape[0]):
        j = b2[i]
        while lo < n1 and b1[lo] < j - kmax:
            lo += 1
        p = lo
        while p < n1 and b1[p] <= j + kmax:
            out[b1[p] - j + kmax] += x1[p] * x2[i]
            p += 1
    return out
