"""Discrete-time Monte Carlo engine for rates, losses and coupled pairs."""

from .engine import (
    PathEnsemble,
    SimConfig,
    StreamDraw,
    draw_pair,
    draw_single,
    simulate_losses,
    simulate_pair,
    simulate_rate_paths,
    window_aggregate,
    window_sums,
)
from .estimators import (
    CovEstimate,
    LagEstimate,
    MomentEstimate,
    estimate_autocov,
    estimate_covariance,
    estimate_cross_cov,
    estimate_moments,
)
from .rng import ROLES, substream
from .summaries import (
    LossSummary,
    PairSummary,
    RateSummary,
    loss_autocov_stats,
    loss_window_stats,
    pair_window_stats,
    rate_stats,
)

__all__ = [
    "ROLES",
    "CovEstimate",
    "LagEstimate",
    "LossSummary",
    "MomentEstimate",
    "PairSummary",
    "PathEnsemble",
    "RateSummary",
    "SimConfig",
    "StreamDraw",
    "draw_pair",
    "draw_single",
    "estimate_autocov",
    "estimate_covariance",
    "estimate_cross_cov",
    "estimate_moments",
    "loss_autocov_stats",
    "loss_window_stats",
    "pair_window_stats",
    "rate_stats",
    "simulate_losses",
    "simulate_pair",
    "simulate_rate_paths",
    "substream",
    "window_aggregate",
    "window_sums",
]
