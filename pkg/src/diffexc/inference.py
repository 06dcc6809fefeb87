"""End-to-end fitting: per-datum excursion batches, ELBO plus recurrence
regularizer, adaptive-moment ascent over drift parameters and delta, and
checkpoint persistence.

Batches are refreshed every resample_every epochs at the current delta;
delta itself is optimized in log space with the closed-form gradient of the
base-density term (batch conditioning held fixed within an epoch). The
Brownian-bridge baseline runs the identical loop over pinned bridges.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import MarkedArrivals, RngSeed, split_by_mark
from .drift import (DriftSpec, ParamVector, delta_gradient, drift_value_and_vjp,
                    drift_vjp, eval_drift, init_params, param_count)
from .excursions import (sample_pinned_bridges, sample_signed_excursions,
                         unit_bridge_values)
from .likelihood import (UnitExcursionPopulation, levy_delta_mle,
                         levy_excursion_log_density, sample_unit_population,
                         build_joint_excursion)

__all__ = [
    "FitConfig",
    "FitReport",
    "FitDivergedError",
    "CheckpointError",
    "fit",
    "fit_baseline_bridge",
    "prepare_interarrival_data",
    "save_checkpoint",
    "load_checkpoint",
    "write_checkpoint",
]


class FitDivergedError(RuntimeError):
    """Objective became non-finite; carries the last finite state."""

    def __init__(self, epoch, params, delta):
        self.epoch = epoch
        self.last_params = params
        self.last_delta = delta
        super().__init__(f"objective became non-finite at epoch {epoch}")


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 200
    lr_drift: float = 1e-3
    lr_delta: float = 1e-2
    K: int = 128
    n_steps: int = 100
    delta_init: float | None = None
    train_delta: bool = True
    lambda_reg: float = 1.0
    resample_every: int = 1
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    penalty_points: int = 200
    penalty_K: int = 128
    interarrival_mode: str = "pooled"  # or "per_mark"
    objective: str = "exact"          # or "elbo"
    include_first: bool = True
    max_rejects_factor: int = 1000
    batch_delta_cap: float = 1.5
    block_points: int = 400_000

    def __post_init__(self):
        if self.epochs < 0 or self.K < 1:
            raise ValueError("epochs must be >= 0 and K >= 1")
        if self.lr_drift <= 0 or self.lr_delta <= 0:
            raise ValueError("learning rates must be positive")
        if self.interarrival_mode not in ("pooled", "per_mark"):
            raise ValueError("interarrival_mode must be pooled or per_mark")
        if self.objective not in ("exact", "elbo"):
            raise ValueError("objective must be exact or elbo")

    def digest(self):
        d = asdict(self)
        d["seed"] = [self.seed.seed, self.seed.stream_id, list(self.seed._path)]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class FitReport:
    loss_history: np.ndarray
    grad_norm_history: np.ndarray
    final_params: ParamVector
    final_delta: float
    diagnostics: dict

    def to_dict(self):
        return {
            "loss_history": [float(x) for x in self.loss_history],
            "grad_norm_history": [float(x) for x in self.grad_norm_history],
            "final_params": [repr(float(x)) for x in self.final_params.values],
            "final_delta": repr(float(self.final_delta)),
            "diagnostics": {k: float(v) for k, v in self.diagnostics.items()},
        }


def prepare_interarrival_data(sequences, mode: str = "pooled",
                              include_first: bool = True):
    """Turn arrival sequences into fitting data.

    pooled: consecutive gaps, each an excursion whose sign is the
    terminating arrival's mark (0 -> +, 1 -> -); the convention for
    delta = 0 collection where every crossing is an arrival.
    per_mark: gaps within each mark's own stream, for delta-filtered data.

    Returns a list of per-sequence dicts with keys taus, signs, t0s, events.
    signs are 0 when the sequence carries a single mark (batch signs are
    then drawn at random).
    """
    if isinstance(sequences, MarkedArrivals):
        sequences = [sequences]
    out = []
    for a in sequences:
        uniq = np.unique(a.marks)
        if mode == "pooled":
            prev = np.concatenate([[a.origin], a.times[:-1]])
            taus = a.times - prev
            t0s = prev
            if uniq.size > 2:
                raise ValueError("pooled 1-d mode supports at most two marks")
            signs = np.where(a.marks == 0, 1, -1) if uniq.size == 2 else np.zeros(len(a), dtype=int)
            if not include_first and len(a):
                taus, t0s, signs = taus[1:], t0s[1:], signs[1:]
        else:
            taus_l, t0s_l, signs_l = [], [], []
            for m, part in sorted(split_by_mark(a).items()):
                prev = np.concatenate([[part.origin], part.times[:-1]])
                tt = part.times - prev
                ss = np.full(len(part), 1 if m == 0 else -1) if uniq.size == 2 \
                    else np.zeros(len(part), dtype=int)
                if not include_first and len(part):
                    tt, prev, ss = tt[1:], prev[1:], ss[1:]
                taus_l.append(tt)
                t0s_l.append(prev)
                signs_l.append(ss)
            taus = np.concatenate(taus_l) if taus_l else np.empty(0)
            t0s = np.concatenate(t0s_l) if t0s_l else np.empty(0)
            signs = np.concatenate(signs_l).astype(int) if signs_l else np.empty(0, dtype=int)
        keep = taus > 0
        out.append({"taus": taus[keep], "signs": signs[keep], "t0s": t0s[keep],
                    "events": a.times.copy()})
    return out


def _penalty_grid(all_taus, n_points):
    tau_max = 10.0 * float(np.max(all_taus))
    tau_min = max(float(np.min(all_taus)) / 10.0, 1e-8 * tau_max)
    return np.geomspace(tau_min, tau_max, n_points)


def _sample_batches(seq_data, K, n_steps, delta, seed, rcount, max_rejects_factor,
                    bridges, stats, cap_mult):
    # The likelihood's delta-dependence lives entirely in the base density;
    # batch conditioning is an importance population. For data much shorter
    # than the delta scale, conditioning the scaled maximum on delta is
    # infeasible (and the weight is ~0 there anyway), so the per-datum
    # conditioning height is capped at cap_mult * sqrt(tau).
    batches = []
    for s, seq in enumerate(seq_data):
        vals = []
        for i, (tau, sign) in enumerate(zip(seq["taus"], seq["signs"])):
            child = seed.child(2, rcount, s, i)
            if bridges:
                b = sample_pinned_bridges(float(tau), K, n_steps, child)
            else:
                d_i = min(delta, cap_mult * math.sqrt(tau))
                b = sample_signed_excursions(float(tau), K, d_i, n_steps, child,
                                             max_rejects=max_rejects_factor * K,
                                             sign=int(sign), stats=stats)
            vals.append(b.values)
        batches.append(vals)
    stats["resamples"] = stats.get("resamples", 0) + 1
    return batches


def _bridge_population(K, n_steps, seed):
    gen = seed.generator()
    v = unit_bridge_values(n_steps, K, gen)
    return UnitExcursionPopulation(v, np.ones(K, dtype=np.int64),
                                   np.full(K, np.inf))


def _data_term(spec, params, seq_data, batches, delta, block_points, objective):
    """Monte Carlo data term (without log p_e) and its parameter gradient.

    objective='exact' uses log mean_k exp(M_k) per datum (self-normalized
    weights in the gradient); 'elbo' uses the Jensen bound mean_k M_k.
    """
    value = 0.0
    grad = np.zeros(param_count(spec))
    for seq, vals in zip(seq_data, batches):
        n = len(vals)
        if n == 0:
            continue
        K, mp1 = vals[0].shape
        m = mp1 - 1
        per = max(1, block_points // (K * m))
        events = seq["events"]
        for lo in range(0, n, per):
            hi = min(n, lo + per)
            V = np.stack(vals[lo:hi])                       # (nb, K, m+1)
            taus = seq["taus"][lo:hi]
            t0s = seq["t0s"][lo:hi]
            dte = taus / m
            X = V[:, :, :-1]
            T = np.broadcast_to(
                t0s[:, None, None] + np.arange(m)[None, None, :] * dte[:, None, None],
                X.shape)
            mu, vjp = drift_value_and_vjp(spec, params, X.reshape(-1),
                                          T.reshape(-1), events=events)
            mu = mu.reshape(X.shape)
            de = np.diff(V, axis=2)
            M = (mu * de).sum(axis=2) - 0.5 * (mu * mu).sum(axis=2) * dte[:, None]
            if objective == "exact":
                a = M.max(axis=1, keepdims=True)
                w = np.exp(M - a)
                sw = w.sum(axis=1, keepdims=True)
                value += float((a[:, 0] + np.log(sw[:, 0] / K)).sum())
                wk = w / sw                                  # softmax weights
            else:
                value += float(M.mean(axis=1).sum())
                wk = np.full(M.shape, 1.0 / K)
            cot = wk[:, :, None] * (de - mu * dte[:, None, None])
            if grad.size:
                grad += vjp(cot.reshape(-1))
    return value, grad


def _penalty_term(spec, params, delta, grid, pop):
    """(penalty, mass, gradient) using the shared scaled population."""
    taus = grid[:-1]
    widths = np.diff(grid)
    G = taus.size
    K = pop.K
    m = pop.n_steps
    scale = np.sqrt(taus)
    mask = pop.maxima[None, :] * scale[:, None] >= delta       # (G, K)
    V = pop.values[None, :, :] * (scale[:, None] * pop.signs[None, :])[:, :, None]
    X = V[:, :, :-1]
    dte = taus / m
    T = np.arange(m)[None, None, :] * dte[:, None, None]
    T = np.broadcast_to(T, X.shape)
    mu, vjp = drift_value_and_vjp(spec, params, X.reshape(-1), T.reshape(-1))
    mu = mu.reshape(X.shape)
    de = np.diff(V, axis=2)
    M = (mu * de).sum(axis=2) - 0.5 * (mu * mu).sum(axis=2) * dte[:, None]
    Mm = np.where(mask, M, -np.inf)
    cnt = mask.sum(axis=1)
    safe = cnt > 0
    a = np.where(safe, Mm.max(axis=1, initial=-np.inf), 0.0)
    w = np.exp(np.where(mask, Mm - a[:, None], -np.inf))
    sw = w.sum(axis=1)
    base = levy_excursion_log_density(taus, delta)
    logp = base + np.where(safe, a + np.log(np.maximum(sw, 1e-300)) - np.log(np.maximum(cnt, 1)), 0.0)
    p = np.exp(logp)
    mass = float(np.sum(p * widths))
    pen = max(0.0, 1.0 - mass) ** 2
    grad = np.zeros(param_count(spec))
    if pen > 0.0 and grad.size:
        smx = np.where(safe[:, None] & mask, w / np.maximum(sw, 1e-300)[:, None], 0.0)
        coeff = (-2.0 * (1.0 - mass)) * (widths * p)
        cot = coeff[:, None, None] * smx[:, :, None] * (de - mu * dte[:, None, None])
        grad = vjp(cot.reshape(-1))
    return pen, mass, grad


class _Adam:
    def __init__(self, n, lr, b1, b2, eps, wd=0.0):
        self.lr, self.b1, self.b2, self.eps, self.wd = lr, b1, b2, eps, wd
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def ascend(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return x + self.lr * mh / (np.sqrt(vh) + self.eps) - self.lr * self.wd * x


def _fit_impl(sequences, spec, config: FitConfig, bridges: bool, events=None):
    if spec.input_dim != 1:
        raise ValueError("1-d fitting requires a scalar drift; use fit_joint")
    seq_data = prepare_interarrival_data(sequences, config.interarrival_mode,
                                         config.include_first)
    if events is not None:
        for seq, ev in zip(seq_data, events):
            seq["events"] = np.asarray(ev, dtype=np.float64)
    all_taus = np.concatenate([s["taus"] for s in seq_data])
    if all_taus.size == 0:
        raise ValueError("no interarrival data")
    params = init_params(spec, config.seed.child(0)).values.copy()
    delta0 = config.delta_init if config.delta_init is not None \
        else levy_delta_mle(all_taus)
    log_delta = math.log(delta0)
    n_par = params.size
    adam_p = _Adam(n_par, config.lr_drift, config.beta1, config.beta2,
                   config.eps, config.weight_decay)
    adam_d = _Adam(1, config.lr_delta, config.beta1, config.beta2, config.eps)
    loss_hist = np.empty(config.epochs)
    gnorm_hist = np.empty(config.epochs)
    stats = {}
    grid = _penalty_grid(all_taus, config.penalty_points) if config.lambda_reg > 0 else None
    batches = None
    pop = None
    rcount = 0
    pen = mass = 0.0
    for epoch in range(config.epochs):
        delta = math.exp(log_delta)
        if batches is None or (config.resample_every > 0
                               and epoch % config.resample_every == 0):
            batches = _sample_batches(seq_data, config.K, config.n_steps, delta,
                                      config.seed, rcount,
                                      config.max_rejects_factor, bridges, stats,
                                      config.batch_delta_cap)
            if config.lambda_reg > 0:
                child = config.seed.child(3, rcount)
                pop = _bridge_population(config.penalty_K, config.n_steps, child) \
                    if bridges else sample_unit_population(config.penalty_K,
                                                           config.n_steps, child)
            rcount += 1
        base_val = float(np.sum(levy_excursion_log_density(all_taus, delta)))
        data_val, data_grad = _data_term(spec, params, seq_data, batches, delta,
                                         config.block_points, config.objective)
        if config.lambda_reg > 0:
            pen, mass, pen_grad = _penalty_term(spec, params, delta, grid, pop)
        else:
            pen, mass, pen_grad = 0.0, float("nan"), 0.0
        value = base_val + data_val - config.lambda_reg * pen
        grad = data_grad - config.lambda_reg * pen_grad if n_par else np.zeros(0)
        g_logd = (1.0 - 4.0 * delta * delta / all_taus).sum() if config.train_delta else 0.0
        if not (math.isfinite(value) and np.all(np.isfinite(grad))
                and math.isfinite(g_logd)):
            raise FitDivergedError(epoch, ParamVector(params.copy()), delta)
        loss_hist[epoch] = value
        gnorm_hist[epoch] = math.sqrt(float(np.dot(grad, grad)) + g_logd * g_logd)
        if n_par:
            params = adam_p.ascend(params, grad)
        if config.train_delta:
            log_delta = float(adam_d.ascend(np.array([log_delta]),
                                            np.array([g_logd]))[0])
    diagnostics = {
        "final_penalty": float(pen),
        "final_mass": float(mass) if math.isfinite(mass) else -1.0,
        "n_data": float(all_taus.size),
        "resamples": float(stats.get("resamples", 0)),
        "acceptance_rate": float(stats.get("accepted", 0))
        / max(stats.get("attempts", 1), 1),
    }
    return FitReport(loss_hist, gnorm_hist, ParamVector(params),
                     math.exp(log_delta), diagnostics)


def fit(data, spec: DriftSpec, config: FitConfig, events=None) -> FitReport:
    """Maximize the excursion ELBO with the recurrence regularizer.

    data is one MarkedArrivals or a list of them; events optionally
    overrides the per-sequence event times seen by event-kernel drifts
    (defaults to the sequence's own arrivals).
    """
    return _fit_impl(data, spec, config, bridges=False, events=events)


def fit_baseline_bridge(data, spec: DriftSpec, config: FitConfig, events=None) -> FitReport:
    """Identical loop with pinned-bridge populations (baseline estimator)."""
    return _fit_impl(data, spec, config, bridges=True, events=events)


def fit_joint(data: MarkedArrivals, spec: DriftSpec, config: FitConfig) -> FitReport:
    """Joint d-dimensional fit: marks are coordinates, one shared drift.

    The expectation uses joint excursion paths rebuilt every resample at
    the current delta; the objective is the ELBO analogue of the joint
    density (mean joint weight plus per-coordinate base terms).
    """
    d = spec.input_dim
    parts = split_by_mark(data)
    if set(parts) != set(range(d)):
        raise ValueError(f"marks {sorted(parts)} do not match coordinates 0..{d-1}")
    chains = []
    for k in range(d):
        t = parts[k].times
        prev = np.concatenate([[parts[k].origin], t[:-1]])
        chains.append(t - prev)
    all_taus = np.concatenate(chains)
    params = init_params(spec, config.seed.child(0)).values.copy()
    delta0 = config.delta_init if config.delta_init is not None \
        else levy_delta_mle(all_taus)
    log_delta = math.log(delta0)
    adam_p = _Adam(params.size, config.lr_drift, config.beta1, config.beta2,
                   config.eps, config.weight_decay)
    adam_d = _Adam(1, config.lr_delta, config.beta1, config.beta2, config.eps)
    loss_hist = np.empty(config.epochs)
    gnorm_hist = np.empty(config.epochs)
    batch = None
    rcount = 0
    for epoch in range(config.epochs):
        delta = math.exp(log_delta)
        if batch is None or (config.resample_every > 0
                             and epoch % config.resample_every == 0):
            batch = build_joint_excursion(chains, config.n_steps, delta,
                                          config.seed.child(2, rcount), K=config.K)
            rcount += 1
        t = batch.times
        V = batch.values
        X = V[:, :-1, :]
        Tq = np.broadcast_to(t[:-1], X.shape[:2])
        mu = eval_drift(spec, params, X.reshape(-1, d), Tq.reshape(-1)).reshape(X.shape)
        de = np.diff(V, axis=1)
        dt = np.diff(t)
        M = (mu * de).sum(axis=(1, 2)) - 0.5 * ((mu * mu).sum(axis=2) * dt).sum(axis=1)
        base = float(np.sum(levy_excursion_log_density(all_taus, delta)))
        value = base + float(np.mean(M))
        cot = (de - mu * dt[None, :, None]) / batch.K
        grad = drift_vjp(spec, params, X.reshape(-1, d), Tq.reshape(-1),
                         cot.reshape(-1, d)) if params.size else np.zeros(0)
        g_logd = (1.0 - 4.0 * delta * delta / all_taus).sum() if config.train_delta else 0.0
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise FitDivergedError(epoch, ParamVector(params.copy()), delta)
        loss_hist[epoch] = value
        gnorm_hist[epoch] = math.sqrt(float(np.dot(grad, grad)) + g_logd * g_logd)
        if params.size:
            params = adam_p.ascend(params, grad)
        if config.train_delta:
            log_delta = float(adam_d.ascend(np.array([log_delta]),
                                            np.array([g_logd]))[0])
    return FitReport(loss_hist, gnorm_hist, ParamVector(params),
                     math.exp(log_delta),
                     {"n_data": float(all_taus.size), "final_penalty": 0.0})


# ---------------------------------------------------------------------------
# checkpoints

_FORMAT_VERSION = 1


def write_checkpoint(path, spec: DriftSpec, params, delta: float,
                     config_digest: str = ""):
    values = params.values if isinstance(params, ParamVector) else np.asarray(params)
    doc = {
        "format_version": _FORMAT_VERSION,
        "spec": spec.to_dict(),
        "params": [repr(float(x)) for x in values],
        "delta": repr(float(delta)),
        "config_digest": config_digest,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def save_checkpoint(report: FitReport, spec: DriftSpec, path,
                    config: FitConfig | None = None):
    write_checkpoint(path, spec, report.final_params, report.final_delta,
                     config.digest() if config is not None else "")


def load_checkpoint(path, spec: DriftSpec | None = None):
    """Read (spec, params, delta); values round-trip bit-exactly.

    Passing an expected spec raises CheckpointError when the stored spec
    does not match it.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e
    if not isinstance(doc, dict) or doc.get("format_version") != _FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('format_version') if isinstance(doc, dict) else None}")
    try:
        stored = DriftSpec.from_dict(doc["spec"])
        params = ParamVector(np.array([float(s) for s in doc["params"]]))
        delta = float(doc["delta"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e
    if param_count(stored) != len(params):
        raise CheckpointError("parameter count does not match the stored spec")
    if spec is not None and stored != spec:
        raise CheckpointError(f"checkpoint spec {stored.family} does not match "
                              f"requested spec {spec.family}")
    return stored, params, delta
