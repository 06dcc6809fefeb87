"""Renewal-process generators and goodness-of-fit metrics."""
from __future__ import annotations

import math

import numpy as np

from .core import RngSeed

__all__ = [
    "gen_renewal",
    "renewal_reference",
    "qq_points",
    "ks_statistic",
    "w1_distance",
    "drift_relative_mse",
]

_RENEWALS = ("exponential", "gamma", "weibull", "lognormal")


def _gamma_mt(gen, alpha, n):
    """Marsaglia-Tsang squeeze/rejection sampler, valid for all alpha > 0."""
    boost = alpha < 1.0
    a = alpha + 1.0 if boost else alpha
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    got = 0
    while got < n:
        need = n - got
        x = gen.standard_normal(need)
        v = (1.0 + c * x) ** 3
        u = gen.random(need)
        ok = v > 0
        lx = np.log(np.where(ok, v, 1.0))
        accept = ok & (np.log(u) < 0.5 * x * x + d - d * v + d * lx)
        take = (d * v)[accept]
        k = min(take.size, need)
        out[got:got + k] = take[:k]
        got += k
    if boost:
        out *= gen.random(n) ** (1.0 / alpha)
    return out


def gen_renewal(family: str, params: dict, n: int, rng: RngSeed) -> np.ndarray:
    """n i.i.d. interarrival samples from a named renewal family.

    exponential {lam}; gamma {alpha, beta} (scale beta); weibull {lam, k};
    lognormal {mu, sigma}.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator()
    if family == "exponential":
        lam = params["lam"]
        if lam <= 0:
            raise ValueError("exponential rate must be positive")
        return -np.log1p(-gen.random(n)) / lam
    if family == "gamma":
        alpha, beta = params["alpha"], params["beta"]
        if alpha <= 0 or beta <= 0:
            raise ValueError("gamma parameters must be positive")
        return _gamma_mt(gen, alpha, n) * beta
    if family == "weibull":
        lam, k = params["lam"], params["k"]
        if lam <= 0 or k <= 0:
            raise ValueError("weibull parameters must be positive")
        return lam * (-np.log1p(-gen.random(n))) ** (1.0 / k)
    if family == "lognormal":
        mu, sigma = params["mu"], params["sigma"]
        if sigma <= 0:
            raise ValueError("lognormal sigma must be positive")
        return np.exp(mu + sigma * gen.standard_normal(n))
    raise ValueError(f"unknown renewal family {family!r}; choose from {_RENEWALS}")


def renewal_reference(family: str, params: dict):
    """(cdf, quantile) callables for a named renewal family."""
    from scipy import stats
    if family == "exponential":
        d = stats.expon(scale=1.0 / params["lam"])
    elif family == "gamma":
        d = stats.gamma(a=params["alpha"], scale=params["beta"])
    elif family == "weibull":
        d = stats.weibull_min(c=params["k"], scale=params["lam"])
    elif family == "lognormal":
        d = stats.lognorm(s=params["sigma"], scale=math.exp(params["mu"]))
    else:
        raise ValueError(f"unknown renewal family {family!r}")
    return d.cdf, d.ppf


def qq_points(samples, reference_quantile_fn, n_quantiles: int = 100):
    """(theoretical, empirical) quantile pairs at levels (i - 0.5)/n."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    levels = (np.arange(1, n_quantiles + 1) - 0.5) / n_quantiles
    emp = np.quantile(x, levels)
    theo = np.asarray([float(reference_quantile_fn(l)) for l in levels])
    return list(zip(theo, emp))


def ks_statistic(samples, reference_cdf) -> float:
    """sup over sample points of |empirical CDF - reference CDF|."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    n = x.size
    F = np.asarray(reference_cdf(x), dtype=np.float64)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return float(max(np.max(np.abs(hi - F)), np.max(np.abs(lo - F))))


def w1_distance(samples_a, samples_b) -> float:
    """Exact integral of |CDF_a - CDF_b| on the merged sorted support."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64))
    b = np.sort(np.asarray(samples_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    support = np.concatenate([a, b])
    support.sort()
    fa = np.searchsorted(a, support, side="right") / a.size
    fb = np.searchsorted(b, support, side="right") / b.size
    return float(np.sum(np.abs(fa - fb)[:-1] * np.diff(support)))


def drift_relative_mse(fitted_fn, true_fn, grid) -> float:
    """mean (mu_hat - mu)^2 over the grid divided by mean mu^2."""
    g = np.asarray(grid, dtype=np.float64)
    if g.size == 0:
        raise ValueError("grid must be nonempty")
    mu_hat = np.asarray(fitted_fn(g), dtype=np.float64)
    mu = np.asarray(true_fn(g), dtype=np.float64)
    denom = float(np.mean(mu * mu))
    if denom == 0.0:
        raise ValueError("true drift is identically zero on the grid")
    return float(np.mean((mu_hat - mu) ** 2) / denom)
