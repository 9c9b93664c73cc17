"""Parametric severity families.

Five families are supported: Gamma, Lognormal, generalized Pareto (GPD),
Weibull and Burr. A degenerate ``constant`` family (every loss equals
``value``) is also provided for exact-arithmetic checks. Each spec is validated against the region where the mean
and variance are finite, and exposes closed-form moments, density, CDF and an
exact sampler.

Example:
    >>> spec = SeveritySpec.gamma(alpha=20, beta=3)
    >>> moments(spec).second_moment
    3780.0
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import special

__all__ = [
    "FAMILIES",
    "SeverityError",
    "SeveritySpec",
    "Moments",
    "validate",
    "moments",
    "pdf",
    "cdf",
    "ppf",
    "sample",
]

# canonical family name -> ordered parameter names
FAMILIES: dict[str, tuple[str, ...]] = {
    "gamma": ("alpha", "beta"),
    "lognormal": ("mu", "sigma"),
    "gpd": ("k", "sigma"),
    "weibull": ("a", "b"),
    "burr": ("alpha", "c", "k"),
    "constant": ("value",),
}

_DEFAULTS = {"lognormal": {"mu": 0.0}}

# below this shape the GPD formulas lose precision; the exponential limit is exact to O(k)
_GPD_K_EXP = 1e-12


class SeverityError(ValueError):
    """Raised when a severity spec lies outside its allowable region."""


@dataclass(frozen=True)
class SeveritySpec:
    """A severity family together with its parameters.

    Attributes:
        family: One of ``gamma``, ``lognormal``, ``gpd``, ``weibull``, ``burr``,
            ``constant``
            (case-insensitive on input).
        params: Mapping of parameter name to value.
    """

    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        fam = str(self.family).strip().lower()
        if fam not in FAMILIES:
            raise SeverityError(
                f"unknown severity family {self.family!r}; expected one of {sorted(FAMILIES)}"
            )
        merged = dict(_DEFAULTS.get(fam, {}))
        merged.update(self.params)
        unknown = set(merged) - set(FAMILIES[fam])
        if unknown:
            raise SeverityError(f"{fam}: unknown parameter(s) {sorted(unknown)}")
        missing = [n for n in FAMILIES[fam] if n not in merged]
        if missing:
            raise SeverityError(f"{fam}: missing parameter(s) {missing}")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", {n: float(merged[n]) for n in FAMILIES[fam]})

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    @classmethod
    def gamma(cls, alpha: float, beta: float) -> "SeveritySpec":
        return cls("gamma", {"alpha": alpha, "beta": beta})

    @classmethod
    def lognormal(cls, sigma: float, mu: float = 0.0) -> "SeveritySpec":
        return cls("lognormal", {"mu": mu, "sigma": sigma})

    @classmethod
    def gpd(cls, k: float, sigma: float) -> "SeveritySpec":
        return cls("gpd", {"k": k, "sigma": sigma})

    @classmethod
    def weibull(cls, a: float, b: float) -> "SeveritySpec":
        return cls("weibull", {"a": a, "b": b})

    @classmethod
    def burr(cls, alpha: float, c: float, k: float) -> "SeveritySpec":
        return cls("burr", {"alpha": alpha, "c": c, "k": k})

    @classmethod
    def constant(cls, value: float) -> "SeveritySpec":
        return cls("constant", {"value": value})

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SeveritySpec":
        if "family" not in d:
            raise SeverityError("severity object needs a 'family' field")
        return cls(d["family"], dict(d.get("params", {})))


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    second_moment: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "variance": self.variance, "second_moment": self.second_moment}


def _require(ok: bool, msg: str):
    if not ok:
        raise SeverityError(msg)


def validate(spec: SeveritySpec) -> None:
    """Check that a spec has finite mean and variance.

    Raises:
        SeverityError: naming the violated constraint.
    """
    p = spec.params
    for name, v in p.items():
        _require(math.isfinite(v), f"{spec.family}: {name} must be finite")
    fam = spec.family
    if fam == "gamma":
        _require(p["alpha"] > 0, "gamma: alpha must be > 0")
        _require(p["beta"] > 0, "gamma: beta must be > 0")
    elif fam == "lognormal":
        _require(p["sigma"] > 0, "lognormal: sigma must be > 0")
    elif fam == "gpd":
        _require(p["sigma"] > 0, "gpd: sigma must be > 0")
        _require(p["k"] >= 0, "gpd: k must be >= 0")
        _require(p["k"] < 0.5, "gpd: k must be < 1/2 for a finite variance")
    elif fam == "weibull":
        _require(p["a"] > 0, "weibull: a must be > 0")
        _require(p["b"] > 0, "weibull: b must be > 0")
    elif fam == "burr":
        _require(p["alpha"] > 0, "burr: alpha must be > 0")
        _require(p["c"] > 0, "burr: c must be > 0")
        _require(p["k"] > 0, "burr: k must be > 0")
        _require(p["k"] > 2.0 / p["c"], "burr: k must be > 2/c for a finite variance")
    elif fam == "constant":
        _require(p["value"] > 0, "constant: value must be > 0")


def _beta(x, y):
    return math.exp(special.betaln(x, y))


def moments(spec: SeveritySpec) -> Moments:
    """Closed-form mean, variance and second moment of a valid spec."""
    validate(spec)
    p = spec.params
    fam = spec.family
    if fam == "gamma":
        mean = p["alpha"] * p["beta"]
        var = p["alpha"] * p["beta"] ** 2
    elif fam == "lognormal":
        s2 = p["sigma"] ** 2
        mean = math.exp(p["mu"] + s2 / 2)
        var = math.expm1(s2) * math.exp(2 * p["mu"] + s2)
    elif fam == "gpd":
        k, s = p["k"], p["sigma"]
        mean = s / (1 - k)
        var = s * s / ((1 - k) ** 2 * (1 - 2 * k))
    elif fam == "weibull":
        a, b = p["a"], p["b"]
        g1 = math.gamma(1 + 1 / b)
        mean = a * g1
        var = a * a * math.gamma(1 + 2 / b) - mean * mean
    elif fam == "constant":
        mean, var = p["value"], 0.0
    else:
        al, c, k = p["alpha"], p["c"], p["k"]
        mean = k * al * _beta(k - 1 / c, 1 + 1 / c)
        var = k * al * al * _beta(k - 2 / c, 1 + 2 / c) - mean * mean
    return Moments(mean=mean, variance=var, second_moment=var + mean * mean)


def _check_positive(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("severity density is defined for x > 0 only")
    return x


def pdf(spec: SeveritySpec, x):
    """Density f_S(x) for x > 0 (scalar or array)."""
    validate(spec)
    x = _check_positive(x)
    p = spec.params
    fam = spec.family
    if fam == "constant":
        raise SeverityError("constant: a point mass has no density")
    if fam == "gamma":
        al, be = p["alpha"], p["beta"]
        out = np.exp((al - 1) * np.log(x) - x / be - special.gammaln(al) - al * math.log(be))
    elif fam == "lognormal":
        mu, s = p["mu"], p["sigma"]
        out = np.exp(-((np.log(x) - mu) ** 2) / (2 * s * s)) / (x * s * math.sqrt(2 * math.pi))
    elif fam == "gpd":
        k, s = p["k"], p["sigma"]
        if k < _GPD_K_EXP:
            out = np.exp(-x / s) / s
        else:
            out = np.exp((-1 - 1 / k) * np.log1p(k * x / s)) / s
    elif fam == "weibull":
        a, b = p["a"], p["b"]
        z = x / a
        out = (b / a) * z ** (b - 1) * np.exp(-(z**b))
    else:
        al, c, k = p["alpha"], p["c"], p["k"]
        z = x / al
        out = (k * c / al) * z ** (c - 1) / (1 + z**c) ** (k + 1)
    return out if out.ndim else float(out)


def cdf(spec: SeveritySpec, x):
    """Distribution function F_S(x); zero for x <= 0."""
    validate(spec)
    x = np.asarray(x, dtype=float)
    xp = np.maximum(x, 0.0)
    p = spec.params
    fam = spec.family
    if fam == "gamma":
        out = special.gammainc(p["alpha"], xp / p["beta"])
    elif fam == "lognormal":
        with np.errstate(divide="ignore"):
            out = special.ndtr((np.log(xp) - p["mu"]) / p["sigma"])
    elif fam == "gpd":
        k, s = p["k"], p["sigma"]
        out = -np.expm1(-xp / s) if k < _GPD_K_EXP else -np.expm1(-np.log1p(k * xp / s) / k)
    elif fam == "weibull":
        out = -np.expm1(-((xp / p["a"]) ** p["b"]))
    elif fam == "constant":
        out = (xp >= p["value"]).astype(float)
    else:
        al, c, k = p["alpha"], p["c"], p["k"]
        out = -np.expm1(-k * np.log1p((xp / al) ** c))
    out = np.where(x > 0, out, 0.0)
    return out if out.ndim else float(out)


def ppf(spec: SeveritySpec, u):
    """Quantile function for u in [0, 1)."""
    validate(spec)
    u = np.asarray(u, dtype=float)
    p = spec.params
    fam = spec.family
    if fam == "gamma":
        out = p["beta"] * special.gammaincinv(p["alpha"], u)
    elif fam == "lognormal":
        out = np.exp(p["mu"] + p["sigma"] * special.ndtri(u))
    elif fam == "gpd":
        k, s = p["k"], p["sigma"]
        tail = -np.log1p(-u)
        out = s * tail if k < _GPD_K_EXP else (s / k) * np.expm1(k * tail)
    elif fam == "weibull":
        out = p["a"] * (-np.log1p(-u)) ** (1 / p["b"])
    elif fam == "constant":
        out = np.full_like(u, p["value"])
    else:
        al, c, k = p["alpha"], p["c"], p["k"]
        out = al * np.expm1(-np.log1p(-u) / k) ** (1 / c)
    return out if out.ndim else float(out)


def sample(spec: SeveritySpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. severities using the caller's generator.

    GPD and Burr use their closed-form quantiles; the other families use
    numpy's native transforms.
    """
    validate(spec)
    n = int(n)
    if n < 0:
        raise ValueError("sample size must be >= 0")
    p = spec.params
    fam = spec.family
    if fam == "gamma":
        return rng.gamma(p["alpha"], p["beta"], size=n)
    if fam == "lognormal":
        return rng.lognormal(p["mu"], p["sigma"], size=n)
    if fam == "weibull":
        return p["a"] * rng.weibull(p["b"], size=n)
    if fam == "constant":
        return np.full(n, p["value"])
    return np.asarray(ppf(spec, rng.random(n)), dtype=float).reshape(n)
