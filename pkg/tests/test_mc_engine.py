import math
from dataclasses import replace

import numpy as np
import pytest

from oprisk_windows.freq_analytic import FreqParams, HomogRate, PairCoupling
from oprisk_windows.loss_analytic import ConfigError, LossModel, PairLossModel, homog_stats, inhomog_stats
from oprisk_windows.mc_engine import (
    SimConfig,
    draw_pair,
    draw_single,
    estimate_autocov,
    estimate_covariance,
    estimate_moments,
    loss_window_stats,
    pair_window_stats,
    rate_stats,
    simulate_losses,
    simulate_pair,
    simulate_rate_paths,
    substream,
    window_aggregate,
    window_sums,
)
from oprisk_windows.mc_engine import kernels
from oprisk_windows.severity import SeveritySpec, sample

from oracles import dense_pair_losses, dense_shot_losses, row_moments, two_sample_z

G = SeveritySpec.gamma(20, 3)
SHOT = FreqParams(1.0, 1.2, 37.5)


def strip(d):
    return {k: v for k, v in d.items() if k not in ("elapsed", "meta")}


# ------------------------------------------------------------------ rng


def test_substreams_keyed_and_independent():
    a = substream(1, 0, "private-1").random(5)
    assert np.array_equal(a, substream(1, 0, "private-1").random(5))
    assert not np.array_equal(a, substream(1, 1, "private-1").random(5))
    assert not np.array_equal(a, substream(1, 0, "private-2").random(5))
    assert not np.array_equal(a, substream(2, 0, "private-1").random(5))
    with pytest.raises(KeyError):
        substream(1, 0, "bogus")


# ------------------------------------------------------------------ kernels


def test_homog_events_rate_and_edge_cases():
    rng = np.random.default_rng(0)
    bins, clip = kernels.homog_events(rng, 0.075, 10**6)
    assert clip == 0
    assert np.all(np.diff(bins) > 0)
    assert abs(bins.size - 75000) < 4 * math.sqrt(75000 * 0.925)
    allb, _ = kernels.homog_events(rng, 1.0, 10)
    assert allb.tolist() == list(range(10))
    assert kernels.homog_events(rng, 1e-300, 10)[0].size == 0


def test_jump_bins_poisson_count():
    n = kernels.jump_bins(np.random.default_rng(1), 37.5, 0.001, 10**6).size
    assert abs(n - 37500) < 4 * math.sqrt(37500)


def test_sparse_lag_products_against_dense():
    rng = np.random.default_rng(4)
    n = 500
    x1 = np.where(rng.random(n) < 0.1, rng.random(n), 0.0)
    x2 = np.where(rng.random(n) < 0.1, rng.random(n), 0.0)
    b1, b2 = np.flatnonzero(x1), np.flatnonzero(x2)
    kmax = 7
    got = kernels.sparse_lag_products(b1, x1[b1], b2, x2[b2], kmax)
    for i, k in enumerate(range(-kmax, kmax + 1)):
        if k >= 0:
            ref = np.dot(x1[k:], x2[: n - k])
        else:
            ref = np.dot(x1[: n + k], x2[-k:])
        assert got[i] == pytest.approx(ref, rel=1e-12, abs=1e-15)


# ------------------------------------------------------------------ config


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(n_realizations=0)
    with pytest.raises(ConfigError):
        SimConfig(dt=0)
    with pytest.raises(ConfigError):
        SimConfig(negative_stream=3)
    with pytest.raises(ConfigError):
        loss_window_stats(LossModel(HomogRate(75), G), SimConfig(horizon=1.5, n_realizations=2), [1.0])


def test_dense_guard():
    cfg = SimConfig(horizon=100, n_realizations=10, max_dense_bytes=1000)
    with pytest.raises(ConfigError):
        simulate_losses(LossModel(HomogRate(75), G), cfg)


# ------------------------------------------------------------------ determinism


def test_thread_count_does_not_change_outputs():
    m = LossModel(SHOT, G)
    c1 = SimConfig(horizon=5, n_realizations=12, base_seed=9)
    c3 = replace(c1, n_threads=3)
    assert np.array_equal(simulate_losses(m, c1).data, simulate_losses(m, c3).data)
    assert strip(loss_window_stats(m, c1, [1.0]).to_dict()) == strip(loss_window_stats(m, c3, [1.0]).to_dict())
    pm = PairLossModel(PairCoupling(FreqParams(1.5, 1.3, 30), FreqParams(2, 0.75, 40), -0.4), G, G)
    a = simulate_pair(pm, c1)
    b = simulate_pair(pm, c3)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)


def test_seed_changes_output():
    m = LossModel(SHOT, G)
    a = simulate_losses(m, SimConfig(horizon=2, n_realizations=2, base_seed=1)).data
    b = simulate_losses(m, SimConfig(horizon=2, n_realizations=2, base_seed=2)).data
    assert not np.array_equal(a, b)


def test_streaming_matches_dense():
    m = LossModel(SHOT, G)
    cfg = SimConfig(horizon=4, n_realizations=6, base_seed=3)
    e = simulate_losses(m, cfg)
    q = window_aggregate(e, 1.0)
    s = loss_window_stats(m, cfg, [1.0])
    dense = estimate_moments(q)
    assert s.Q[1.0].mean == pytest.approx(dense.mean, rel=1e-12)
    assert s.Q[1.0].variance == pytest.approx(dense.variance, rel=1e-10)
    assert s.R.mean == pytest.approx(e.data.mean(), rel=1e-12)


# ------------------------------------------------------------------ paths


def test_no_event_model_gives_zero_paths():
    p = FreqParams(0.0, 1.0, 10.0)
    cfg = SimConfig(horizon=2, n_realizations=3)
    assert not simulate_rate_paths(p, cfg).data.any()
    assert not simulate_losses(LossModel(p, G), cfg).data.any()


def test_constant_severity_entries():
    e = simulate_losses(LossModel(SHOT, SeveritySpec.constant(7.0)), SimConfig(horizon=3, n_realizations=3))
    nz = e.data[e.data != 0]
    assert nz.size > 0 and np.all(nz == 7.0)


def test_window_aggregation_identities():
    m = LossModel(SHOT, SeveritySpec.constant(3.0))
    cfg = SimConfig(horizon=10, n_realizations=4, base_seed=5)
    e = simulate_losses(m, cfg)
    q = window_aggregate(e, 1.0)
    # integer-valued losses: the sums are exact
    assert np.array_equal(q.sum(axis=1), e.data.sum(axis=1))
    assert np.array_equal(window_aggregate(e, cfg.dt), e.data)
    z = replace(e, data=np.zeros_like(e.data))
    assert not window_aggregate(z, 1.0).any()
    d = draw_single(m, cfg, 0)
    assert np.array_equal(window_sums(d, 1000, 10), q[0])
    with pytest.raises(ConfigError):
        window_aggregate(e, 11.0)


def test_no_clipping_for_reference_parameters():
    for m in (LossModel(SHOT, G), LossModel(HomogRate(75), G)):
        s = loss_window_stats(m, SimConfig(horizon=20, n_realizations=5), [1.0])
        assert s.clip_fraction == 0.0


def test_clip_limit_enforced():
    m = LossModel(FreqParams(2000.0, 0.01, 10.0), G, dt=0.001)  # each jump lifts the rate above 1/dt
    with pytest.raises(ConfigError):
        loss_window_stats(m, SimConfig(horizon=5, n_realizations=2, max_clip_fraction=0.0), [1.0])


# ------------------------------------------------------------------ statistics vs closed forms


def test_rate_mean_and_variance():
    cfg = SimConfig(horizon=100, n_realizations=20, base_seed=2)
    rs = rate_stats(SHOT, cfg, 6.0, 0.3)
    assert abs(rs.moments.mean - 45) < 3 * rs.moments.se_mean
    assert abs(rs.moments.variance - 22.5) < 3 * rs.moments.se_variance
    assert rs.autocov.values[0] == pytest.approx(rs.moments.variance, rel=1e-3)


def test_homogeneous_bin_moments():
    m = LossModel(HomogRate(75), G)
    s = loss_window_stats(m, SimConfig(horizon=100, n_realizations=50, base_seed=8), [1.0])
    a = homog_stats(m, 1.0)
    assert abs(s.R.mean - a.mu_R) < 3 * s.R.se_mean
    assert abs(s.R.variance - a.var_R) < 3 * s.R.se_variance
    assert abs(s.Q[1.0].variance - a.var_Q) < 3 * s.Q[1.0].se_variance


def test_shot_noise_window_mean():
    m = LossModel(SHOT, G)
    s = loss_window_stats(m, SimConfig(horizon=100, n_realizations=50, base_seed=8), [1.0])
    assert abs(s.Q[1.0].mean - inhomog_stats(m, 1.0).mu_Q) < 3 * s.Q[1.0].se_mean


def test_se_scaling_with_realizations():
    m = LossModel(HomogRate(75), G)
    a = loss_window_stats(m, SimConfig(horizon=50, n_realizations=80, base_seed=1), [1.0]).Q[1.0]
    b = loss_window_stats(m, SimConfig(horizon=50, n_realizations=160, base_seed=1), [1.0]).Q[1.0]
    assert 0.3 < (b.se_mean / a.se_mean) ** 2 < 0.8


def test_constant_series_variance_zero():
    est = estimate_moments(np.full((4, 10), 2.5))
    assert est.variance == 0.0 and est.mean == 2.5


def test_white_noise_autocov():
    m = LossModel(HomogRate(75), G)
    e = simulate_losses(m, SimConfig(horizon=20, n_realizations=20, base_seed=4))
    ac = estimate_autocov(e, 0.05, 5)
    z = ac.values[1:] / ac.se[1:]
    assert np.all(np.abs(z) < 4)
    # lag-0 estimator equals the pooled bin variance
    assert ac.values[0] == pytest.approx(estimate_moments(e).variance, rel=1e-4)


def test_estimate_covariance_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 200))
    c = estimate_covariance(x, x)
    assert c.cov == pytest.approx(estimate_moments(x).variance)
    assert c.corr == pytest.approx(1.0)


# ------------------------------------------------------------------ dense oracle


def _gamma_sampler(rng, k):
    return rng.gamma(20, 3, k)


def test_engine_matches_dense_oracle_single_stream():
    n_real, horizon, dt = 1500, 4.0, 0.001
    n_bins = int(horizon / dt)
    ref = dense_shot_losses(1.0, 1.2, 37.5, _gamma_sampler, dt, n_bins, n_real, np.random.default_rng(77))
    m = LossModel(SHOT, G)
    cfg = SimConfig(horizon=horizon, n_realizations=n_real, base_seed=123)
    q_eng = np.vstack([window_sums(draw_single(m, cfg, r), 1000, 4) for r in range(n_real)])
    q_ref = ref.reshape(n_real, 4, 1000).sum(axis=2)
    for a, b in zip(row_moments(q_eng), row_moments(q_ref)):
        assert abs(two_sample_z(a, b)) < 4
    ne = np.array([draw_single(m, cfg, r).bins.size for r in range(200)])
    nr = (ref[:200] != 0).sum(axis=1)
    assert abs(ne.mean() - nr.mean()) < 4 * math.hypot(ne.std() / math.sqrt(200), nr.std() / math.sqrt(200))


def test_engine_matches_dense_oracle_pair():
    p1, p2 = (1.5, 1.3, 30.0), (2.0, 0.75, 40.0)
    n_real, horizon, dt = 800, 3.0, 0.001
    n_bins = int(horizon / dt)
    ref1, ref2 = dense_pair_losses(p1, p2, 0.6, _gamma_sampler, _gamma_sampler, dt, n_bins, n_real, np.random.default_rng(5))
    pm = PairLossModel(PairCoupling(FreqParams(*p1), FreqParams(*p2), 0.6), G, G, dt)
    cfg = SimConfig(horizon=horizon, n_realizations=n_real, base_seed=99)
    qe = []
    for r in range(n_real):
        d1, d2 = draw_pair(pm, cfg, r)
        qe.append(window_sums(d1, 1000, 3) * window_sums(d2, 1000, 3))
    qr = ref1.reshape(n_real, 3, 1000).sum(axis=2) * ref2.reshape(n_real, 3, 1000).sum(axis=2)
    (a, _), (b, _) = row_moments(np.array(qe)), row_moments(qr)
    assert abs(two_sample_z(a, b)) < 4


# ------------------------------------------------------------------ pairs


P1, P2 = FreqParams(1.5, 1.3, 30.0), FreqParams(2.0, 0.75, 40.0)
S1, S2 = SeveritySpec.gpd(0.15, 50), SeveritySpec.weibull(5, 0.4)


def test_independent_pair_zero_covariance():
    pm = PairLossModel(PairCoupling(P1, P2, 0.0), S1, S2)
    s = pair_window_stats(pm, SimConfig(horizon=200, n_realizations=10, base_seed=3), [1.0])
    assert abs(s.Q[1.0].cov) < 3 * s.Q[1.0].se


def test_negative_coupling_sign_and_floor():
    pm = PairLossModel(PairCoupling(P1, P2, -0.5), S1, S2)
    s = pair_window_stats(pm, SimConfig(horizon=500, n_realizations=4, base_seed=3), [1.0])
    assert s.Q[1.0].cov < 0
    assert s.n_floor > 0


def test_negative_stream_switch():
    pm = PairLossModel(PairCoupling(P1, P2, -0.5), S1, S2)
    cfg = SimConfig(horizon=2, n_realizations=1, base_seed=3)
    a = draw_pair(pm, cfg, 0)
    b = draw_pair(pm, replace(cfg, negative_stream=1), 0)
    assert not np.array_equal(a[0].bins, b[0].bins)


def test_time_budget_marks_partial():
    m = LossModel(SHOT, G)
    s = loss_window_stats(m, SimConfig(horizon=50, n_realizations=10_000, time_budget=0.2), [1.0])
    assert s.partial and s.n_realizations < 10_000
