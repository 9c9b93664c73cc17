"""Closed-form statistics of the shot-noise event rate and windowed counts.

The rate follows dν = -ν/τ dt + a Σ δ(t - t_k) with jump times t_k drawn from
a Poisson process of rate γ. Pairs of streams share a fraction of their jump
times; the share is |c|·min(γ₁, γ₂) and the sign of c decides whether the
second stream jumps up or down at shared times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FreqParams",
    "HomogRate",
    "PairCoupling",
    "RateMoments",
    "CountStats",
    "window_kernel",
    "rate_moments",
    "rate_autocov",
    "count_window_stats",
    "rate_cross_cov",
    "count_window_cov",
]

_GAMMA_BAR_TOL = 1e-12


@dataclass(frozen=True)
class FreqParams:
    """Shot-noise rate parameters.

    Attributes:
        a: jump size (events/year).
        tau: decay time (years).
        gamma: driving Poisson rate (1/year).
    """

    a: float
    tau: float
    gamma: float

    def __post_init__(self):
        for name in ("a", "tau", "gamma"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        # a = 0 and gamma = 0 are allowed as degenerate "no events" models
        if self.a < 0:
            raise ValueError("a must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    @property
    def mean_rate(self) -> float:
        return self.a * self.tau * self.gamma

    def to_dict(self) -> dict:
        return {"a": self.a, "tau": self.tau, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d) -> "FreqParams":
        return cls(a=d["a"], tau=d["tau"], gamma=d["gamma"])


@dataclass(frozen=True)
class HomogRate:
    """Constant event rate ν_r (events/year)."""

    nu: float

    def __post_init__(self):
        v = float(self.nu)
        if not (math.isfinite(v) and v > 0):
            raise ValueError("nu must be a finite positive rate")
        object.__setattr__(self, "nu", v)

    @property
    def mean_rate(self) -> float:
        return self.nu

    def to_dict(self) -> dict:
        return {"nu": self.nu}

    @classmethod
    def from_dict(cls, d) -> "HomogRate":
        return cls(nu=d["nu"])


@dataclass(frozen=True)
class PairCoupling:
    """Two shot-noise streams with input correlation ``c`` in [-1, 1]."""

    p1: FreqParams
    p2: FreqParams
    c: float

    def __post_init__(self):
        c = float(self.c)
        if not (-1.0 <= c <= 1.0):
            raise ValueError("input correlation c must lie in [-1, 1]")
        object.__setattr__(self, "c", c)
        shared = abs(c) * self.gamma_bar
        if shared > min(self.p1.gamma, self.p2.gamma) * (1 + _GAMMA_BAR_TOL):
            raise ValueError("shared jump rate exceeds a stream's own rate")

    @property
    def gamma_bar(self) -> float:
        return min(self.p1.gamma, self.p2.gamma)

    @property
    def common_rate(self) -> float:
        return abs(self.c) * self.gamma_bar

    def swapped(self) -> "PairCoupling":
        return PairCoupling(self.p2, self.p1, self.c)

    def to_dict(self) -> dict:
        return {"p1": self.p1.to_dict(), "p2": self.p2.to_dict(), "c": self.c}

    @classmethod
    def from_dict(cls, d) -> "PairCoupling":
        return cls(FreqParams.from_dict(d["p1"]), FreqParams.from_dict(d["p2"]), d["c"])


@dataclass(frozen=True)
class RateMoments:
    mean: float
    variance: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "variance": self.variance}


@dataclass(frozen=True)
class CountStats:
    T_w: float
    mean: float
    variance: float

    def to_dict(self) -> dict:
        return {"T_w": self.T_w, "mean": self.mean, "variance": self.variance}


def window_kernel(T, tau):
    """T + τ(e^{-T/τ} - 1), evaluated without cancellation for small T/τ."""
    T = np.asarray(T, dtype=float)
    x = T / tau
    # series τ·(x²/2 - x³/6 + x⁴/24 - ...) for small x
    small = x < 1e-2
    xs = np.where(small, x, 0.0)
    series = tau * xs * xs * (0.5 - xs / 6 * (1 - xs / 4 * (1 - xs / 5 * (1 - xs / 6))))
    direct = T + tau * np.expm1(-x)
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def rate_moments(p: FreqParams) -> RateMoments:
    """Stationary mean aτγ and variance a²γτ/2 of ν(t)."""
    return RateMoments(mean=p.a * p.tau * p.gamma, variance=p.a**2 * p.gamma * p.tau / 2)


def rate_autocov(p: FreqParams, t):
    """A_ν(t) = (a²γτ/2)·exp(-|t|/τ)."""
    t = np.asarray(t, dtype=float)
    out = rate_moments(p).variance * np.exp(-np.abs(t) / p.tau)
    return out if out.ndim else float(out)


def count_window_stats(p: FreqParams, T_w: float) -> CountStats:
    """Mean and variance of the integrated rate over a window of length T_w.

    The variance is the window integral of A_ν and excludes the Poisson
    (counting) noise of the events themselves.
    """
    if not T_w > 0:
        raise ValueError("T_w must be > 0")
    mean = T_w * p.a * p.gamma * p.tau
    var = p.a**2 * p.gamma * p.tau**2 * window_kernel(T_w, p.tau)
    return CountStats(T_w=float(T_w), mean=mean, variance=float(var))


def _cross_amplitude(pc: PairCoupling) -> float:
    t1, t2 = pc.p1.tau, pc.p2.tau
    return pc.c * pc.gamma_bar * pc.p1.a * pc.p2.a * t1 * t2 / (t1 + t2)


def rate_cross_cov(pc: PairCoupling, t):
    """CC_ν(t) = E[ν₁(t'+t)ν₂(t')] - E[ν₁]E[ν₂].

    Decays with τ₁ for t >= 0 and with τ₂ for t < 0.
    """
    t = np.asarray(t, dtype=float)
    amp = _cross_amplitude(pc)
    out = amp * np.where(t >= 0, np.exp(-np.abs(t) / pc.p1.tau), np.exp(-np.abs(t) / pc.p2.tau))
    return out if out.ndim else float(out)


def count_window_cov(pc: PairCoupling, T_w: float) -> float:
    """Covariance of the two integrated rates over a common window T_w."""
    if not T_w > 0:
        raise ValueError("T_w must be > 0")
    t1, t2 = pc.p1.tau, pc.p2.tau
    bracket = t1 * window_kernel(T_w, t1) + t2 * window_kernel(T_w, t2)
    return float(_cross_amplitude(pc) * bracket)
