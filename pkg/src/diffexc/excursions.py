"""Brownian bridge and excursion sampling.

Excursions are produced by the Vervaat transform of a Brownian bridge
(cyclic shift at the argmin), scaled to a target length by the Brownian
scaling e_tau(t) = sqrt(tau) * e_1(t/tau), then filtered so that the
maximum height reaches at least delta. Signs are assigned after acceptance
with probability 1/2 each. Pinned bridges (no sign, no filter) back the
baseline estimator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Path, RngSeed, TimeGrid

__all__ = [
    "ExcursionBatch",
    "AcceptanceError",
    "sample_unit_bridge",
    "vervaat_excursion",
    "scale_to_length",
    "sample_signed_excursions",
    "sample_pinned_bridges",
    "unit_bridge_values",
    "unit_excursion_values",
]


class AcceptanceError(RuntimeError):
    """Rejection sampling exceeded its budget; reports the empirical acceptance rate."""

    def __init__(self, delta, tau, accepted, attempts, max_rejects):
        self.delta = delta
        self.tau = tau
        self.acceptance_rate = accepted / max(attempts, 1)
        super().__init__(
            f"delta-filter accepted {accepted}/{attempts} excursions "
            f"(rate {self.acceptance_rate:.2e}) for tau={tau}, delta={delta}; "
            f"reject budget {max_rejects} exhausted. delta is likely too large "
            f"for this excursion length.")


@dataclass(frozen=True)
class ExcursionBatch:
    """K discretized paths of common length tau on n_steps uniform steps.

    For signed excursions sign*values >= 0 elementwise and max |values| of
    every accepted path is at least delta. Pinned bridges store delta=0 and
    sign +1 throughout. t0 is the absolute start time used when weighting
    time-dependent drifts.
    """

    tau: float
    n_steps: int
    values: np.ndarray  # (K, n_steps + 1)
    signs: np.ndarray   # (K,), entries in {+1, -1}
    delta: float
    t0: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        s = np.asarray(self.signs, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != self.n_steps + 1:
            raise ValueError(f"values must be (K, {self.n_steps + 1}), got {v.shape}")
        if s.shape != (v.shape[0],):
            raise ValueError("signs must have one entry per path")
        v.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "signs", s)

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def dt(self):
        return self.tau / self.n_steps

    def with_t0(self, t0: float) -> "ExcursionBatch":
        return ExcursionBatch(self.tau, self.n_steps, self.values, self.signs,
                              self.delta, t0)


def unit_bridge_values(n_steps: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """(K, n_steps+1) Brownian bridges on [0,1] via B_t - t*B_1, endpoints exactly 0."""
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    z = rng.standard_normal((K, n_steps))
    w = np.cumsum(z, axis=1) * np.sqrt(1.0 / n_steps)
    v = np.empty((K, n_steps + 1))
    v[:, 0] = 0.0
    frac = np.arange(1, n_steps + 1) / n_steps
    v[:, 1:] = w - frac * w[:, -1:]
    v[:, -1] = 0.0
    return v


def unit_excursion_values(bridges: np.ndarray) -> np.ndarray:
    """Vervaat transform, vectorized over rows of pinned bridges."""
    b = bridges[:, :-1]  # B_n is identified with B_0
    K, n = b.shape
    imin = np.argmin(b, axis=1)
    cols = (imin[:, None] + np.arange(n)[None, :]) % n
    rolled = b[np.arange(K)[:, None], cols]
    exc = np.empty((K, n + 1))
    exc[:, :-1] = rolled - b[np.arange(K), imin][:, None]
    exc[:, -1] = 0.0
    exc[:, 0] = 0.0
    return exc


def sample_unit_bridge(n_steps: int, rng: RngSeed) -> Path:
    """One Brownian bridge on [0,1] with dt = 1/n_steps."""
    v = unit_bridge_values(n_steps, 1, rng.generator())[0]
    return Path(TimeGrid(0.0, 1.0 / n_steps, n_steps), v)


def vervaat_excursion(bridge: Path) -> Path:
    """Cyclic shift of a pinned bridge at its minimum; output is a nonnegative excursion."""
    v = bridge.flat
    if v[0] != 0.0 or v[-1] != 0.0:
        raise ValueError("bridge endpoints must be exactly 0")
    exc = unit_excursion_values(v[None, :])[0]
    return Path(bridge.grid, exc)


def scale_to_length(unit_excursion: Path, tau: float) -> Path:
    """Brownian scaling onto [0, tau]: values scale by sqrt(tau)."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    g = unit_excursion.grid
    return Path(TimeGrid(g.t0 * tau, g.dt * tau, g.n_steps),
                unit_excursion.values * np.sqrt(tau))


def _signs_for(K, rng, sign):
    if sign == 0:
        return rng.integers(0, 2, size=K) * 2 - 1
    return np.full(K, int(sign), dtype=np.int64)


def sample_signed_excursions(tau: float, K: int, delta: float, n_steps: int,
                             rng: RngSeed, max_rejects: int | None = None,
                             sign: int = 0, stats: dict | None = None) -> ExcursionBatch:
    """K excursions of length tau whose pre-sign maximum is at least delta.

    Acceptance is by rejection on max >= delta; signs are drawn after
    acceptance (Bernoulli 1/2 by default; sign=+1/-1 forces one side).
    stats, when given, accumulates 'attempts' and 'accepted' counts.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if max_rejects is None:
        max_rejects = 1000 * K
    gen = rng.generator()
    sqrt_tau = np.sqrt(tau)
    out = np.empty((K, n_steps + 1))
    got = 0
    attempts = 0
    while got < K:
        # first pass draws exactly K; later passes oversample
        block = K if attempts == 0 else max(K, 256)
        b = unit_bridge_values(n_steps, block, gen)
        e = unit_excursion_values(b) * sqrt_tau
        attempts += block
        acc = e.max(axis=1) >= delta
        take = e[acc]
        n_take = min(take.shape[0], K - got)
        out[got:got + n_take] = take[:n_take]
        got += n_take
        if attempts - got > max_rejects:
            raise AcceptanceError(delta, tau, got, attempts, max_rejects)
    if stats is not None:
        stats["attempts"] = stats.get("attempts", 0) + attempts
        stats["accepted"] = stats.get("accepted", 0) + got
    signs = _signs_for(K, gen, sign)
    return ExcursionBatch(tau, n_steps, out * signs[:, None], signs, delta)


def sample_pinned_bridges(tau: float, K: int, n_steps: int, rng: RngSeed) -> ExcursionBatch:
    """K bridges from 0 to 0 over [0, tau]; no sign constraint, no height filter."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    gen = rng.generator()
    v = unit_bridge_values(n_steps, K, gen) * np.sqrt(tau)
    return ExcursionBatch(tau, n_steps, v, np.ones(K, dtype=np.int64), 0.0)
