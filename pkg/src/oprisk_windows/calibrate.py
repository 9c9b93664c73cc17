"""Multistart ℓ₁ calibration of seven coupled shot-noise streams.

The 42 unknowns are (a_j, τ_j, γ_j) for seven categories and the 21 input
correlations c_jk. They are fitted to 35 statistics of yearly event counts:
seven means, seven variances and 21 covariances, all over T_w = 1 year.

Each start runs two local stages inside a box given by the sampling ranges
(log coordinates for the positive parameters, c kept in (-1, 1)):

1. bounded trust-region least squares on relative residuals, with an
   analytic Jacobian, to reach the basin of an exact fit;
2. a trust-region sequential linear program on the weighted ℓ₁ residual,
   which polishes the non-smooth objective to convergence.

The reported objective is always the unweighted ℓ₁ norm.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, linprog
from scipy.stats import qmc

from . import freq_analytic as fa
from .freq_analytic import window_kernel
from .loss_analytic import PairLossModel, pair_cov_window
from .orx_pipeline import CATEGORIES, CategoryStats
from .severity import SeveritySpec

log = logging.getLogger(__name__)

N_CAT = 7
N_PAIRS = N_CAT * (N_CAT - 1) // 2
N_PARAMS = 3 * N_CAT + N_PAIRS
N_STATS = 2 * N_CAT + N_PAIRS
PAIRS = tuple(zip(*np.triu_indices(N_CAT, 1)))
_J, _K = np.triu_indices(N_CAT, 1)

# sampling ranges for the starts; also the solver box
LHS_RANGES = {"a": (0.0, 15.0), "tau": (0.0, 2.0), "gamma": (0.0, 40.0), "c": (-1.0, 1.0)}
BOX_FLOOR = 1e-8
C_MARGIN = 1e-9
# means and variances get this extra weight relative to covariances in the solver
MOMENT_WEIGHT = 6.0
# converged starts must also reach objective < this x the target l1 norm
CONVERGED_REL_OBJECTIVE = 1e-4


class DomainError(ValueError):
    """Parameter vector outside a_j, τ_j, γ_j > 0 and c_jk in (-1, 1)."""


@dataclass
class FitTarget:
    """The 35 fitted statistics plus the per-event mean severities."""

    means: np.ndarray
    variances: np.ndarray
    covs: np.ndarray
    sev_means: np.ndarray
    categories: tuple = CATEGORIES
    T_w: float = 1.0

    def __post_init__(self):
        self.means = np.asarray(self.means, float).reshape(N_CAT)
        self.variances = np.asarray(self.variances, float).reshape(N_CAT)
        self.covs = np.asarray(self.covs, float).reshape(N_PAIRS)
        self.sev_means = np.asarray(self.sev_means, float).reshape(N_CAT)
        self.categories = tuple(self.categories)

    @classmethod
    def from_matrix(cls, means, cov: np.ndarray, sev_means, categories=CATEGORIES, T_w=1.0) -> "FitTarget":
        cov = np.asarray(cov, float)
        if cov.shape != (N_CAT, N_CAT):
            raise ValueError(f"covariance matrix must be {N_CAT}x{N_CAT}")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance matrix must be symmetric")
        return cls(means, np.diag(cov).copy(), cov[_J, _K], sev_means, categories, T_w)

    @classmethod
    def from_category_stats(cls, s: CategoryStats) -> "FitTarget":
        return cls.from_matrix(s.freq_mean, s.freq_cov, s.severity, s.categories)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.means, self.variances, self.covs])

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self.vector()).sum())

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "T_w": self.T_w,
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "covs": self.covs.tolist(),
            "sev_means": self.sev_means.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "FitTarget":
        return cls(d["means"], d["variances"], d["covs"], d["sev_means"], tuple(d["categories"]), d.get("T_w", 1.0))


@dataclass
class ParamVector42:
    a: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, float).reshape(N_CAT)
        self.tau = np.asarray(self.tau, float).reshape(N_CAT)
        self.gamma = np.asarray(self.gamma, float).reshape(N_CAT)
        self.c = np.asarray(self.c, float).reshape(N_PAIRS)

    @classmethod
    def from_array(cls, x) -> "ParamVector42":
        x = np.asarray(x, float)
        if x.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {x.shape}")
        return cls(x[:7], x[7:14], x[14:21], x[21:])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.a, self.tau, self.gamma, self.c])

    def c_matrix(self) -> np.ndarray:
        m = np.eye(N_CAT)
        m[_J, _K] = self.c
        m[_K, _J] = self.c
        return m

    def check(self):
        x = self.to_array()
        if not np.all(np.isfinite(x)):
            raise DomainError("parameters must be finite")
        if np.any(x[:21] <= 0):
            raise DomainError("a, tau and gamma must be > 0")
        if np.any(np.abs(self.c) >= 1):
            raise DomainError("input correlations must lie in (-1, 1)")

    def freq(self, j: int) -> fa.FreqParams:
        return fa.FreqParams(self.a[j], self.tau[j], self.gamma[j])

    def coupling(self, j: int, k: int) -> fa.PairCoupling:
        return fa.PairCoupling(self.freq(j), self.freq(k), self.c_matrix()[j, k])

    def to_dict(self, categories=CATEGORIES) -> dict:
        return {
            "a": dict(zip(categories, self.a.tolist())),
            "tau": dict(zip(categories, self.tau.tolist())),
            "gamma": dict(zip(categories, self.gamma.tolist())),
            "c": {f"{categories[j]}-{categories[k]}": float(v) for (j, k), v in zip(PAIRS, self.c)},
        }

    @classmethod
    def from_dict(cls, d, categories=CATEGORIES) -> "ParamVector42":
        c = [d["c"][f"{categories[j]}-{categories[k]}"] for j, k in PAIRS]
        return cls([d["a"][n] for n in categories], [d["tau"][n] for n in categories], [d["gamma"][n] for n in categories], c)


def _as_array(x) -> np.ndarray:
    return x.to_array() if isinstance(x, ParamVector42) else np.asarray(x, float)


def model_stats(x, T_w: float = 1.0) -> np.ndarray:
    """Means, variances and pair covariances of windowed event counts."""
    x = _as_array(x)
    a, tau, g, c = x[:7], x[7:14], x[14:21], x[21:]
    B = window_kernel(T_w, tau)
    m = T_w * a * g * tau
    v = a * a * g * tau * tau * B
    gbar = np.minimum(g[_J], g[_K])
    P = tau[_J] * tau[_K] / (tau[_J] + tau[_K])
    W = tau[_J] * B[_J] + tau[_K] * B[_K]
    return np.concatenate([m, v, c * gbar * a[_J] * a[_K] * P * W])


def _kernel_dtau(T_w, tau):
    # d/dτ of T + τ(e^{-T/τ} - 1)
    x = T_w / tau
    return np.exp(-x) * (1 + x) - 1


def model_stats_jac(x, T_w: float = 1.0):
    """Statistics and their Jacobian in (log a, log τ, log γ, c) coordinates."""
    x = _as_array(x)
    a, tau, g, c = x[:7], x[7:14], x[14:21], x[21:]
    B = window_kernel(T_w, tau)
    dB = _kernel_dtau(T_w, tau)
    m = T_w * a * g * tau
    v = a * a * g * tau * tau * B
    gbar = np.minimum(g[_J], g[_K])
    P = tau[_J] * tau[_K] / (tau[_J] + tau[_K])
    W = tau[_J] * B[_J] + tau[_K] * B[_K]
    base = gbar * a[_J] * a[_K] * P * W
    cov = c * base
    J = np.zeros((N_STATS, N_PARAMS))
    r = np.arange(N_CAT)
    J[r, r] = m
    J[r, 7 + r] = m
    J[r, 14 + r] = m
    J[7 + r, r] = 2 * v
    J[7 + r, 14 + r] = v
    J[7 + r, 7 + r] = v * (2 + tau * dB / B)
    rows = 14 + np.arange(N_PAIRS)
    J[rows, 21 + np.arange(N_PAIRS)] = base
    J[rows, _J] += cov
    J[rows, _K] += cov
    # γ̄ = min(γ_j, γ_k); split the derivative on ties
    wj = np.where(g[_J] < g[_K], 1.0, np.where(g[_J] == g[_K], 0.5, 0.0))
    J[rows, 14 + _J] += cov * wj
    J[rows, 14 + _K] += cov * (1 - wj)
    s = tau[_J] + tau[_K]
    dPj, dPk = tau[_K] ** 2 / s**2, tau[_J] ** 2 / s**2
    dWj, dWk = B[_J] + tau[_J] * dB[_J], B[_K] + tau[_K] * dB[_K]
    pre = c * gbar * a[_J] * a[_K]
    J[rows, 7 + _J] += pre * tau[_J] * (dPj * W + P * dWj)
    J[rows, 7 + _K] += pre * tau[_K] * (dPk * W + P * dWk)
    return np.concatenate([m, v, cov]), J


def objective(x, target: FitTarget) -> float:
    """Unweighted ℓ₁ distance between model and target statistics.

    Raises:
        DomainError: if x violates positivity or |c| < 1.
    """
    pv = x if isinstance(x, ParamVector42) else ParamVector42.from_array(x)
    pv.check()
    return float(np.abs(model_stats(pv, target.T_w) - target.vector()).sum())


def _lhs_bounds():
    lo = np.r_[np.full(7, LHS_RANGES["a"][0]), np.full(7, LHS_RANGES["tau"][0]), np.full(7, LHS_RANGES["gamma"][0]),
               np.full(N_PAIRS, LHS_RANGES["c"][0])]
    hi = np.r_[np.full(7, LHS_RANGES["a"][1]), np.full(7, LHS_RANGES["tau"][1]), np.full(7, LHS_RANGES["gamma"][1]),
               np.full(N_PAIRS, LHS_RANGES["c"][1])]
    return lo, hi


def lhs_starts(n: int = 1000, seed: int = 0) -> np.ndarray:
    """Latin-hypercube design of n starting points, shape (n, 42)."""
    if n < 1:
        raise ValueError("need at least one start")
    u = qmc.LatinHypercube(d=N_PARAMS, seed=np.random.default_rng(seed)).random(n)
    lo, hi = _lhs_bounds()
    return lo + u * (hi - lo)


def _box():
    _, hi = _lhs_bounds()
    lb = np.r_[np.full(21, math.log(BOX_FLOOR)), np.full(N_PAIRS, -1 + C_MARGIN)]
    ub = np.r_[np.log(hi[:21]), np.full(N_PAIRS, 1 - C_MARGIN)]
    return lb, ub


def _to_x(z):
    return np.concatenate([np.exp(z[:21]), z[21:]])


def _to_z(x, lb, ub):
    z = np.concatenate([np.log(np.maximum(x[:21], BOX_FLOOR)), x[21:]])
    return np.clip(z, lb + 1e-12, ub - 1e-12)


def solver_weights(t: np.ndarray) -> np.ndarray:
    w = 1.0 / np.maximum(np.abs(t), 1e-300)
    w[: 2 * N_CAT] *= MOMENT_WEIGHT
    return w


@dataclass
class StartResult:
    index: int
    x: np.ndarray
    objective: float
    max_rel_error: float
    status: str
    converged: bool
    nfev: int

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "x": self.x.tolist(),
            "objective": self.objective,
            "max_rel_error": self.max_rel_error,
            "status": self.status,
            "converged": self.converged,
            "nfev": self.nfev,
        }


def _slp(z, t, w, lb, ub, T_w, max_iter, ftol):
    """Trust-region sequential LP on Σ w_i |s_i(z) - t_i|."""
    rad = 0.5
    s = model_stats(_to_x(z), T_w)
    fz = float(np.abs((s - t) * w).sum())
    f_raw = float(np.abs(s - t).sum())
    n, m = N_PARAMS, N_STATS
    cobj = np.r_[np.zeros(n), np.ones(m)]
    eye = np.eye(m)
    nfev = 1
    for _ in range(max_iter):
        s, J = model_stats_jac(_to_x(z), T_w)
        r = (s - t) * w
        Jw = J * w[:, None]
        A = np.block([[Jw, -eye], [-Jw, -eye]])
        b = np.r_[-r, r]
        lo = np.maximum(-rad, lb - z)
        hi = np.minimum(rad, ub - z)
        res = linprog(cobj, A_ub=A, b_ub=b, bounds=list(zip(lo, hi)) + [(0, None)] * m, method="highs")
        if res.status != 0:
            return z, nfev, "lp-failure"
        # the LP honours bounds only to its feasibility tolerance
        dz = np.clip(z + res.x[:n], lb, ub) - z
        pred = fz - res.fun
        if pred <= 1e-15:
            return z, nfev, "tolerance"
        s_new = model_stats(_to_x(z + dz), T_w)
        nfev += 1
        fn = float(np.abs((s_new - t) * w).sum())
        rho = (fz - fn) / pred
        if rho > 0.1:
            z = z + dz
            fz = fn
            f_new = float(np.abs(s_new - t).sum())
            improved = f_raw - f_new
            f_raw = f_new
            if 0 <= improved < ftol:
                return z, nfev, "tolerance"
        if rho > 0.75:
            rad = min(2 * rad, 5.0)
        elif rho < 0.25:
            rad *= 0.25
        if rad < 1e-10:
            return z, nfev, "tolerance"
    return z, nfev, "budget"


def fit_one(x0, target: FitTarget, index: int = 0, max_evals: int = 5000, slp_iters: int = 400, ftol: float = 1e-8) -> StartResult:
    """Local minimization from one start; never raises on non-convergence."""
    t = target.vector()
    w = solver_weights(t)
    lb, ub = _box()
    z0 = _to_z(np.asarray(x0, float), lb, ub)
    status = "budget"
    nfev = 0
    try:
        ls = least_squares(
            lambda z: (model_stats(_to_x(z), target.T_w) - t) * w,
            z0,
            jac=lambda z: model_stats_jac(_to_x(z), target.T_w)[1] * w[:, None],
            bounds=(lb, ub),
            max_nfev=max(1, max_evals - slp_iters),
            xtol=1e-12,
            ftol=1e-12,
            gtol=1e-12,
        )
        nfev += int(ls.nfev)
        z, n2, status = _slp(ls.x, t, w, lb, ub, target.T_w, min(slp_iters, max_evals - nfev), ftol)
        nfev += n2
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.warning("start %d failed: %s", index, exc)
        z, status = z0, "error"
    x = _to_x(z)
    s = model_stats(x, target.T_w)
    finite = bool(np.all(np.isfinite(s)))
    obj = float(np.abs(s - t).sum()) if finite else float("inf")
    rel = float(np.max(np.abs(s - t) / np.abs(t))) if finite else float("inf")
    # a solver can stop on tolerance at a degenerate local minimum; require a near-exact fit too
    ok = finite and status == "tolerance" and obj < CONVERGED_REL_OBJECTIVE * target.l1_norm
    return StartResult(index, x, obj, rel, status, ok, nfev)


@dataclass
class FitResult:
    target: FitTarget
    starts: list
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def converged(self) -> list:
        return [s for s in self.starts if s.converged]

    @property
    def n_converged(self) -> int:
        return len(self.converged)

    @property
    def best(self) -> StartResult:
        return min(self.starts, key=lambda s: s.objective)

    def _pool(self):
        pool = self.converged
        if not pool:
            raise ValueError("no start converged")
        return pool

    def mean_params(self) -> ParamVector42:
        """Average of the parameter vectors over converged starts."""
        return ParamVector42.from_array(np.mean([s.x for s in self._pool()], axis=0))

    def fitted_stats(self) -> np.ndarray:
        """Model statistics of each converged start, shape (n, 35)."""
        return np.array([model_stats(s.x, self.target.T_w) for s in self._pool()])

    def mean_stats(self) -> np.ndarray:
        return self.fitted_stats().mean(axis=0)

    def stat_cv(self) -> np.ndarray:
        """Coefficient of variation of each fitted statistic across converged starts."""
        fs = self.fitted_stats()
        if fs.shape[0] < 2:
            return np.zeros(fs.shape[1])
        return fs.std(axis=0, ddof=1) / np.abs(fs.mean(axis=0))

    def to_dict(self) -> dict:
        return {
            "target": self.target.to_dict(),
            "seed": self.seed,
            "n_starts": len(self.starts),
            "n_converged": self.n_converged,
            "objective_unweighted_l1": True,
            "starts": [s.to_dict() for s in self.starts],
            "mean_params": self.mean_params().to_dict(self.target.categories) if self.converged else None,
            "mean_stats": self.mean_stats().tolist() if self.converged else None,
            "meta": self.meta,
        }

    def mean_dict(self) -> dict:
        pv = self.mean_params()
        return {
            "categories": list(self.target.categories),
            "params": pv.to_dict(self.target.categories),
            "vector": pv.to_array().tolist(),
            "sev_means": self.target.sev_means.tolist(),
            "n_converged": self.n_converged,
            "n_starts": len(self.starts),
        }

    def write(self, out_dir) -> dict:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ens, mean = out / "fit_ensemble.json", out / "fit_mean.json"
        ens.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        mean.write_text(json.dumps(self.mean_dict(), indent=2) + "\n")
        return {"fit_ensemble": str(ens), "fit_mean": str(mean)}


def _fit_star(args):
    return fit_one(*args)


def fit(target: FitTarget, starts, n_workers: int = 1, max_evals: int = 5000, seed: Optional[int] = None) -> FitResult:
    """Run a local fit from every start; results are kept in start order."""
    starts = np.atleast_2d(np.asarray(starts, float))
    jobs = [(x0, target, i, max_evals) for i, x0 in enumerate(starts)]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            res = list(ex.map(_fit_star, jobs))
    else:
        res = [_fit_star(j) for j in jobs]
    n_ok = sum(r.converged for r in res)
    if n_ok < len(res):
        log.info("%d of %d starts did not converge", len(res) - n_ok, len(res))
    return FitResult(target=target, starts=res, seed=seed)


@dataclass
class CovSweep:
    categories: tuple
    pairs: tuple
    T_w: np.ndarray
    values: np.ndarray  # (pairs, grid)
    dt: float

    def curve(self, j: int, k: int) -> np.ndarray:
        return self.values[self.pairs.index((j, k))]

    def rows(self):
        for (j, k), row in zip(self.pairs, self.values):
            for T, v in zip(self.T_w, row):
                yield f"{self.categories[j]}-{self.categories[k]}", float(T), float(v)


def sweep_cov_Q(params: ParamVector42, sev_means, T_grid: Sequence[float], dt: float = 0.001, categories=CATEGORIES) -> CovSweep:
    """Cov(Q_j, Q_k) for all 21 pairs over a grid of window lengths.

    Only the mean severities enter the window covariance, so each category is
    given a point-mass severity at its mean.
    """
    T = np.asarray(T_grid, float)
    if T.ndim != 1 or T.size == 0 or np.any(T <= 0) or np.any(np.diff(T) <= 0):
        raise ValueError("T_w grid must be positive and strictly ascending")
    sev = [SeveritySpec.constant(m) for m in np.asarray(sev_means, float)]
    vals = np.empty((N_PAIRS, T.size))
    for i, (j, k) in enumerate(PAIRS):
        pm = PairLossModel(params.coupling(j, k), sev[j], sev[k], dt)
        vals[i] = [pair_cov_window(pm, t) for t in T]
    return CovSweep(tuple(categories), PAIRS, T, vals, dt)


def rank_pairs(sweep: CovSweep, T_w: float):
    """Pairs by descending |Cov(Q_j, Q_k)| at a grid window; ties keep index order."""
    hit = np.flatnonzero(np.isclose(sweep.T_w, T_w, rtol=1e-12, atol=0.0))
    if hit.size == 0:
        raise ValueError(f"T_w={T_w} is not on the sweep grid")
    col = sweep.values[:, hit[0]]
    order = sorted(range(len(sweep.pairs)), key=lambda i: (-abs(col[i]), sweep.pairs[i]))
    cats = sweep.categories
    return [((cats[sweep.pairs[i][0]], cats[sweep.pairs[i][1]]), float(col[i])) for i in order]
