"""Parameter sweeps that pair closed-form statistics with Monte Carlo estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .freq_analytic import FreqParams, HomogRate, PairCoupling
from .loss_analytic import LossModel, PairLossModel, calibrate_scale, loss_stats, pair_cov_small, pair_cov_window
from .mc_engine import SimConfig, loss_window_stats, pair_window_stats
from .severity import SeveritySpec

log = logging.getLogger(__name__)

# Severity sweep ranges: one parameter varies, the others are fixed. GPD and
# Burr stay where the fourth moment is finite so that the standard error of a
# sample variance is well defined.
FAMILY_SWEEPS = {
    "gamma": ("alpha", 2.0, 40.0, {"beta": 3.0}),
    "lognormal": ("sigma", None, None, {"mu": 0.0}),
    "gpd": ("k", 0.0, 0.2, {"sigma": 50.0}),
    "weibull": ("b", 0.4, 2.0, {"a": 5.0}),
    "burr": ("k", 2.5, 6.0, {"alpha": 50.0, "c": 2.0}),
}

SHOT_NOISE_BASE = FreqParams(a=1.0, tau=1.2, gamma=37.5)
HOMOG_BASE = HomogRate(nu=75.0)
TAU_SWEEP = (0.5, 1.0, 1.5, 2.0, 2.5, 3.1)
TAU_SWEEP_GAMMA = 75.0 / 3.1
PAIR_BASE = (FreqParams(1.5, 1.3, 30.0), FreqParams(2.0, 0.75, 40.0))
PAIR_SEVERITIES = (SeveritySpec.gpd(0.15, 50.0), SeveritySpec.weibull(5.0, 0.4))


def family_sweep(family: str, n_points: int = 20) -> list:
    """Severity specs along the standard sweep of one family."""
    name, lo, hi, fixed = FAMILY_SWEEPS[family]
    if family == "lognormal":
        # σ² = 2 log m for mean m between 2 and 4
        vals = np.sqrt(2 * np.log(np.linspace(2.0, 4.0, n_points)))
    else:
        vals = np.linspace(lo, hi, n_points)
    return [SeveritySpec(family, {**fixed, name: float(v)}) for v in vals]


def tau_sweep_models(dt: float = 0.001, taus: Sequence[float] = TAU_SWEEP) -> list:
    sev = SeveritySpec.gamma(20.0, 3.0)
    return [LossModel(FreqParams(1.0, t, TAU_SWEEP_GAMMA), sev, dt) for t in taus]


@dataclass
class CompareRow:
    label: str
    stat: str
    analytic: float
    mc: float
    se: float

    @property
    def ratio(self) -> float:
        return self.mc / self.analytic if self.analytic != 0 else float("nan")

    @property
    def z(self) -> float:
        return (self.mc - self.analytic) / self.se if self.se > 0 else float("nan")

    def as_list(self):
        return [self.label, self.stat, self.analytic, self.mc, self.se, self.ratio]


@dataclass
class SweepComparison:
    rows: list
    scale: Optional[float]
    partial: bool
    meta: dict = field(default_factory=dict)

    def of(self, stat: str) -> list:
        return [r for r in self.rows if r.stat == stat]


def _label(m: LossModel) -> str:
    sev = ",".join(f"{k}={v:g}" for k, v in m.severity.params.items())
    if m.homogeneous:
        fr = f"nu={m.freq.nu:g}"
    else:
        fr = f"a={m.freq.a:g},tau={m.freq.tau:g},gamma={m.freq.gamma:g}"
    return f"{m.severity.family}({sev});{fr}"


def compare_losses(models: Sequence[LossModel], cfg: SimConfig, T_w: float = 1.0) -> SweepComparison:
    """μ_R, σ²_R, μ_Q, σ²_Q: closed form vs Monte Carlo for each model.

    The σ²_Q scale factor is the least-squares fit of the closed form to the
    Monte Carlo values over the sweep (None for fewer than two points).
    """
    rows = []
    partial = False
    for i, m in enumerate(models):
        if m.dt != cfg.dt:
            m = replace(m, dt=cfg.dt)
        a = loss_stats(m, T_w)
        # consecutive points use disjoint seeds
        s = loss_window_stats(m, replace(cfg, base_seed=cfg.base_seed + i), [T_w])
        q = s.Q[T_w]
        lab = _label(m)
        rows += [
            CompareRow(lab, "mu_R", a.mu_R, s.R.mean, s.R.se_mean),
            CompareRow(lab, "var_R", a.var_R, s.R.variance, s.R.se_variance),
            CompareRow(lab, "mu_Q", a.mu_Q, q.mean, q.se_mean),
            CompareRow(lab, "var_Q", a.var_Q_raw, q.variance, q.se_variance),
        ]
        partial |= s.partial
    vq = [r for r in rows if r.stat == "var_Q"]
    scale = calibrate_scale([r.analytic for r in vq], [r.mc for r in vq]) if len(vq) >= 2 else None
    return SweepComparison(rows, scale, partial, {"config": cfg.to_dict(), "T_w": T_w})


def pair_model(c: float, dt: float = 0.001) -> PairLossModel:
    p1, p2 = PAIR_BASE
    return PairLossModel(PairCoupling(p1, p2, c), PAIR_SEVERITIES[0], PAIR_SEVERITIES[1], dt)


@dataclass
class PairRow:
    c: float
    T_w: float
    analytic: float
    mc_raw: float
    se_raw: float
    dt: float

    @property
    def mc(self) -> float:
        # the closed form carries one extra factor Δt relative to the raw window covariance
        return self.mc_raw * self.dt

    @property
    def se(self) -> float:
        return self.se_raw * self.dt

    @property
    def rel_error(self) -> float:
        return abs(self.analytic - self.mc) / abs(self.mc) if self.mc != 0 else float("inf")

    def as_list(self):
        return [self.c, self.T_w, self.analytic, self.mc, self.se, self.mc_raw, self.se_raw]


def compare_pairs(cs: Sequence[float], cfg: SimConfig, T_ws: Sequence[float] = (1.0, 2.0), model_fn=pair_model):
    """Cov(R₁,R₂) and Cov(Q₁,Q₂): closed form vs Monte Carlo across c."""
    out = []
    small = []
    for i, c in enumerate(cs):
        m = model_fn(c, cfg.dt)
        s = pair_window_stats(m, replace(cfg, base_seed=cfg.base_seed + i), T_ws)
        small.append((c, pair_cov_small(m), s.R.cov, s.R.se))
        for T_w in T_ws:
            q = s.Q[T_w]
            out.append(PairRow(c, T_w, pair_cov_window(m, T_w), q.cov, q.se, cfg.dt))
        log.info("c=%g done in %.1fs (floors: %d)", c, s.elapsed, s.n_floor)
    return out, small
