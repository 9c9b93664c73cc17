"""Closed-form aggregate-loss statistics on a Δt grid.

R is the loss in one grid bin and Q the sum of R over a window of
n = T_w/Δt bins. Homogeneous Poisson and shot-noise frequency models are
covered, plus pair covariances and the generic autocovariance-to-window
integral σ²_Q = ∫ A(t)(T_w - |t|) dt.

The shot-noise σ²_Q is an approximation that is known to under-estimate the
simulated variance, so results carry an ``approximate`` flag and an optional
``scale`` multiplier (see :func:`calibrate_scale`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .freq_analytic import FreqParams, HomogRate, PairCoupling, window_kernel
from .severity import SeveritySpec, moments

__all__ = [
    "ConfigError",
    "LossModel",
    "PairLossModel",
    "LossStats",
    "AutocovKernel",
    "LagSamples",
    "homog_stats",
    "inhomog_stats",
    "loss_stats",
    "autocov_kernel",
    "loss_autocov",
    "windowed_var_from_autocov",
    "pair_cov_small",
    "pair_cross_cov",
    "pair_cov_window",
    "calibrate_scale",
    "bins_per_window",
]


class ConfigError(ValueError):
    """Model or grid configuration that the formulas cannot represent."""


def bins_per_window(T_w: float, dt: float, tol: float = 1e-9) -> int:
    """Number of whole bins in a window; rejects non-commensurate lengths."""
    ratio = T_w / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > tol * max(1.0, ratio):
        raise ConfigError(f"T_w={T_w} is not a whole number of bins of width {dt}")
    return n


@dataclass(frozen=True)
class LossModel:
    """One loss stream: frequency model, severity and grid step."""

    freq: Union[HomogRate, FreqParams]
    severity: SeveritySpec
    dt: float = 0.001

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be a finite positive step")
        p = self.freq.mean_rate * self.dt
        if p >= 1:
            raise ConfigError(f"expected per-bin event probability {p:.4g} must be < 1")

    @property
    def homogeneous(self) -> bool:
        return isinstance(self.freq, HomogRate)


@dataclass(frozen=True)
class PairLossModel:
    coupling: PairCoupling
    sev1: SeveritySpec
    sev2: SeveritySpec
    dt: float = 0.001

    def __post_init__(self):
        # per-stream checks
        self.stream(0)
        self.stream(1)

    def stream(self, i: int) -> LossModel:
        if i == 0:
            return LossModel(self.coupling.p1, self.sev1, self.dt)
        return LossModel(self.coupling.p2, self.sev2, self.dt)


@dataclass(frozen=True)
class LossStats:
    """Bin and window statistics of one loss stream.

    Attributes:
        T_w: window length (years).
        n: bins per window.
        mu_R, var_R: mean and variance of the per-bin loss.
        mu_Q: mean window loss.
        var_Q_raw: the unscaled closed-form window variance.
        approximate: True when var_Q_raw is the shot-noise approximation.
        scale: multiplier applied to var_Q_raw to give var_Q.
    """

    T_w: float
    n: int
    mu_R: float
    var_R: float
    mu_Q: float
    var_Q_raw: float
    approximate: bool = False
    scale: float = 1.0

    @property
    def var_Q(self) -> float:
        return self.scale * self.var_Q_raw

    def scaled(self, s: float) -> "LossStats":
        return replace(self, scale=float(s))

    def to_dict(self) -> dict:
        return {
            "T_w": self.T_w,
            "n": self.n,
            "mu_R": self.mu_R,
            "var_R": self.var_R,
            "mu_Q": self.mu_Q,
            "var_Q": self.var_Q,
            "var_Q_raw": self.var_Q_raw,
            "approximate": self.approximate,
            "scale": self.scale,
        }


def _check_window(m: LossModel, T_w: float) -> int:
    if T_w < m.dt * (1 - 1e-12):
        raise ConfigError("T_w must be at least one bin")
    return max(1, int(round(T_w / m.dt)))


def homog_stats(m: LossModel, T_w: float) -> LossStats:
    """Statistics for a constant rate ν_r; bins are independent."""
    if not m.homogeneous:
        raise ConfigError("homog_stats needs a HomogRate model")
    n = _check_window(m, T_w)
    mo = moments(m.severity)
    p = m.freq.nu * m.dt
    mu_R = p * mo.mean
    var_R = p * mo.second_moment - mu_R**2
    mu_Q = T_w * m.freq.nu * mo.mean
    var_Q = T_w * m.freq.nu * (mo.second_moment - p * mo.mean**2)
    return LossStats(T_w=float(T_w), n=n, mu_R=mu_R, var_R=var_R, mu_Q=mu_Q, var_Q_raw=var_Q)


def inhomog_stats(m: LossModel, T_w: float) -> LossStats:
    """Statistics for a shot-noise rate; σ²_Q is flagged approximate."""
    if m.homogeneous:
        raise ConfigError("inhomog_stats needs a FreqParams model")
    n = _check_window(m, T_w)
    f = m.freq
    mo = moments(m.severity)
    p = f.a * f.tau * f.gamma * m.dt
    mu_R = mo.mean * p
    var_R = mo.second_moment * p - mu_R**2
    mu_Q = T_w * f.a * f.gamma * f.tau * mo.mean
    var_Q = 2 * (var_R / m.dt) * f.tau * window_kernel(T_w, f.tau)
    return LossStats(
        T_w=float(T_w), n=n, mu_R=mu_R, var_R=var_R, mu_Q=mu_Q, var_Q_raw=float(var_Q), approximate=True
    )


def loss_stats(m: LossModel, T_w: float) -> LossStats:
    return homog_stats(m, T_w) if m.homogeneous else inhomog_stats(m, T_w)


@dataclass(frozen=True)
class AutocovKernel:
    """Closed-form autocovariance: an atom at lag 0 plus amplitude·e^{-|t|/τ}.

    Units are those of a density in lag, so that the window integral
    atom·T_w + ∫ amplitude·e^{-|t|/τ}(T_w - |t|) dt is a window variance.
    """

    atom: float = 0.0
    amplitude: float = 0.0
    tau: float = 1.0

    def density(self, t):
        t = np.asarray(t, dtype=float)
        out = self.amplitude * np.exp(-np.abs(t) / self.tau)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class LagSamples:
    """Autocovariance density sampled on a lag grid of step ``dt``.

    If ``even`` is True the samples cover lags 0, dt, 2dt, ... and are mirrored
    to negative lags; otherwise ``lags`` must span [-L, L] symmetrically.
    """

    lags: np.ndarray
    values: np.ndarray
    dt: float
    even: bool = True
    atom: float = 0.0


def autocov_kernel(m: LossModel) -> AutocovKernel:
    """The closed-form A_R for a model (atom for homogeneous, exponential otherwise)."""
    if m.homogeneous:
        st = homog_stats(m, m.dt)
        return AutocovKernel(atom=st.var_R / m.dt, amplitude=0.0, tau=1.0)
    st = inhomog_stats(m, m.dt)
    return AutocovKernel(atom=0.0, amplitude=st.var_R / m.dt, tau=m.freq.tau)


def loss_autocov(m: LossModel, t):
    """A_R(t).

    Shot-noise models give σ²_R e^{-|t|/τ}/Δt. Homogeneous models have all
    their mass in the lag-0 atom σ²_R/Δt, which is returned at t == 0 and zero
    elsewhere; use :func:`autocov_kernel` when integrating.
    """
    k = autocov_kernel(m)
    t = np.asarray(t, dtype=float)
    if m.homogeneous:
        out = np.where(t == 0, k.atom, 0.0)
    else:
        out = np.asarray(k.density(t))
    return out if out.ndim else float(out)


def windowed_var_from_autocov(A, T_w: float, dt: float) -> float:
    """∫_{-T_w}^{T_w} A(t)(T_w - |t|) dt.

    A closed-form kernel is integrated exactly; sampled or callable
    autocovariances use the trapezoidal rule on a grid of step dt.

    Args:
        A: an :class:`AutocovKernel`, a :class:`LagSamples`, or a callable
            density of lag.
        T_w: window length; must be a whole number of grid steps.
        dt: grid step.

    Raises:
        ConfigError: if sampled lags do not reach T_w or the grid step
            disagrees with dt.
    """
    n = bins_per_window(T_w, dt)
    k = np.arange(-(n - 1), n)
    weight = (T_w - np.abs(k) * dt) * dt
    atom = 0.0
    if isinstance(A, LagSamples):
        if not math.isclose(A.dt, dt, rel_tol=1e-9):
            raise ConfigError(f"lag grid step {A.dt} differs from dt={dt}")
        lags = np.asarray(A.lags, dtype=float)
        vals = np.asarray(A.values, dtype=float)
        idx = np.rint(lags / dt).astype(np.int64)
        if A.even:
            if idx.min() != 0 or idx.max() < n - 1:
                raise ConfigError(
                    f"sampled lags reach {idx.max() * dt:g} but T_w={T_w:g} needs lags up to {(n - 1) * dt:g}"
                )
            lookup = dict(zip(idx.tolist(), vals.tolist()))
            dens = np.array([lookup[abs(j)] for j in k])
        else:
            if idx.min() > -(n - 1) or idx.max() < n - 1:
                raise ConfigError(f"sampled lags do not cover [-{T_w:g}, {T_w:g}]")
            lookup = dict(zip(idx.tolist(), vals.tolist()))
            dens = np.array([lookup[j] for j in k])
        atom = A.atom
    elif isinstance(A, AutocovKernel):
        # exact: ∫ amplitude·e^{-|t|/τ}(T_w - |t|) dt = 2·amplitude·τ·(T_w + τ(e^{-T_w/τ} - 1))
        return float(A.atom * T_w + 2 * A.amplitude * A.tau * window_kernel(T_w, A.tau))
    elif callable(A):
        dens = np.asarray(A(k * dt), dtype=float)
    else:
        raise TypeError("A must be an AutocovKernel, LagSamples or callable")
    return float(np.dot(dens, weight) + atom * T_w)


def _pair_amplitude(m: PairLossModel) -> float:
    pc = m.coupling
    mu1 = moments(m.sev1).mean
    mu2 = moments(m.sev2).mean
    t1, t2 = pc.p1.tau, pc.p2.tau
    return mu1 * mu2 * pc.c * pc.gamma_bar * pc.p1.a * pc.p2.a * t1 * t2 / (t1 + t2)


def pair_cov_small(m: PairLossModel) -> float:
    """Cov(R₁, R₂) for a single bin."""
    return _pair_amplitude(m) * m.dt**2


def pair_cross_cov(m: PairLossModel, t):
    """CC_R(t) with the τ₁ branch for t >= 0 and the τ₂ branch for t < 0."""
    t = np.asarray(t, dtype=float)
    pc = m.coupling
    base = pair_cov_small(m) / m.dt
    out = base * np.where(t >= 0, np.exp(-np.abs(t) / pc.p1.tau), np.exp(-np.abs(t) / pc.p2.tau))
    return out if out.ndim else float(out)


def pair_cov_window(m: PairLossModel, T_w: float) -> float:
    """Cov(Q₁, Q₂) over a common window of length T_w."""
    if not T_w > 0:
        raise ConfigError("T_w must be > 0")
    t1, t2 = m.coupling.p1.tau, m.coupling.p2.tau
    bracket = t1 * window_kernel(T_w, t1) + t2 * window_kernel(T_w, t2)
    return float(_pair_amplitude(m) * bracket * m.dt)


def calibrate_scale(analytic, mc) -> float:
    """Least-squares s minimizing Σ(s·analytic_i - mc_i)²."""
    x = np.asarray(analytic, dtype=float).ravel()
    y = np.asarray(mc, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("analytic and mc series must have equal length")
    if x.size < 2:
        raise ValueError("need at least 2 points to fit a scale")
    nrm = float(np.dot(x, x))
    if nrm == 0:
        raise ValueError("analytic series is identically zero")
    return float(np.dot(x, y) / nrm)
