"""Euler-Maruyama simulation, crossing detection, and arrival sampling.

Arrival sampling simulates a path, finds zero crossings, and keeps the
crossings whose preceding segment deviates by at least delta. For delta > 0
the sampler also applies Brownian-bridge sub-grid corrections (zero touches
and threshold touches missed between grid points), which removes the
systematic interarrival lengthening that discrete monitoring would
otherwise introduce; with delta = 0 detection is the raw grid scan.

Hot loops run on the numba lane when available (see _backend); a pure
numpy lane and a generic Python lane (arbitrary callables, self-exciting
families) cover the rest.
"""
from __future__ import annotations

import math

import numpy as np

from . import _backend, _kernels_numpy
from .core import MarkedArrivals, Path, RngSeed, TimeGrid
from .drift import DriftSpec, eval_drift, pack_for_kernels

__all__ = [
    "SimulationDivergedError",
    "CensoredSampleError",
    "euler_maruyama",
    "detect_crossings",
    "filter_min_height",
    "sample_arrivals",
    "sample_arrivals_multidim",
    "sample_arrivals_until",
    "first_hitting_time",
    "sample_fht",
]

CHUNK = 1 << 20
_EMPTY_F = np.empty(0, dtype=np.float64)


class SimulationDivergedError(RuntimeError):
    """Non-finite drift encountered; carries the offending state and time."""

    def __init__(self, state, time):
        self.state = state
        self.time = time
        super().__init__(f"drift became non-finite at state {state}, time {time}")


class CensoredSampleError(RuntimeError):
    """First hitting did not occur before t_max."""

    def __init__(self, t_max, n_censored=1):
        self.t_max = t_max
        self.n_censored = n_censored
        super().__init__(f"{n_censored} sample(s) did not hit the boundary by t_max={t_max}")


def _kernel_mod(backend):
    if backend == "numba":
        from . import _kernels_numba
        return _kernels_numba
    if backend == "numpy":
        return _kernels_numpy
    raise ValueError(f"unknown backend {backend!r}")


def _resolve(spec, params, backend):
    """Pick (kernel module or None, pack) for a drift; None means Python lane."""
    if callable(spec) and not isinstance(spec, DriftSpec):
        return None, None
    pack = pack_for_kernels(spec, params)
    if pack is None:
        return None, None
    if backend is None:
        backend = _backend.backend_name()
    return _kernel_mod(backend), pack


def _mu_fn(spec, params):
    if callable(spec) and not isinstance(spec, DriftSpec):
        return lambda x, t, events=None: np.asarray(spec(x, t), dtype=np.float64)
    return lambda x, t, events=None: np.atleast_2d(
        eval_drift(spec, params, x, t, events=events))


def _events_array(events):
    if events is None:
        return _EMPTY_F
    ev = np.asarray(events, dtype=np.float64).ravel()
    if ev.size and np.any(np.diff(ev) < 0):
        raise ValueError("event times must be sorted ascending")
    return ev


def _is_self_history(spec):
    return (isinstance(spec, DriftSpec)
            and ((spec.family == "kernel" and spec.source == "history")
                 or spec.family == "hawkes2"))


def euler_maruyama(spec, params, x0, grid: TimeGrid, sigma: float, rng: RngSeed,
                   events=None, backend=None) -> Path:
    """Simulate X_{i+1} = X_i + mu(X_i, t_i) dt + sigma sqrt(dt) xi_i on the grid.

    spec may be a DriftSpec (with params) or a callable mu(x, t). events is
    an optional sorted array of history/exogenous times exposed to
    event-kernel drifts; it is static here (arrivals do not feed back).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    d = x0.size
    gen = rng.generator()
    mod, pack = _resolve(spec, params, backend)
    ev = _events_array(events)
    out = np.empty((grid.n_steps + 1, d))
    out[0] = x0
    x = x0.copy()
    done = 0
    ev_ptr, s_has, s_val = 0, 0, 0.0
    if _is_self_history(spec):
        # static context: seed the kernel state from the supplied events
        if ev.size:
            s_has, s_val = 1, float(ev[-1])
        if isinstance(spec, DriftSpec) and spec.family == "hawkes2":
            mod, pack = None, None
    while done < grid.n_steps:
        n = min(CHUNK, grid.n_steps - done)
        z = gen.standard_normal((n, d))
        seg = out[done:done + n + 1]
        if mod is not None:
            status, bad, ev_ptr = mod.euler_values(
                x, grid.t0, done, grid.dt, sigma, z, *pack[:10], pack[10],
                ev, ev_ptr, s_has, s_val, seg)
        else:
            status, bad = _py_euler_values(
                _mu_fn(spec, params), x, grid.t0, done, grid.dt, sigma, z,
                ev, seg)
        if status != 0:
            raise SimulationDivergedError(seg[bad].copy(), grid.t0 + (done + bad) * grid.dt)
        done += n
    return Path(grid, out)


def _py_euler_values(mu_fn, x, t0, idx0, dt, sigma, z, events, out):
    sdt = sigma * math.sqrt(dt)
    out[0] = x
    for i in range(z.shape[0]):
        t = t0 + (idx0 + i) * dt
        mu = np.asarray(mu_fn(x, t, events)).ravel()
        if not np.all(np.isfinite(mu)):
            return 1, i
        x += mu * dt + sdt * z[i]
        out[i + 1] = x
    return 0, -1


def detect_crossings(path: Path, reference=None, component: int = 0):
    """Times where the path crosses the reference function (default 0).

    Sign changes are located by linear interpolation
    t_i + dt |g_i| / (|g_i| + |g_{i+1}|); exact zeros are reported at the
    grid point.
    """
    t = path.times()
    g = path.values[:, component] - (reference(t) if reference is not None else 0.0)
    absg = np.abs(g)
    prod = g[:-1] * g[1:]
    i_idx = np.nonzero(prod < 0.0)[0]
    t_interp = t[i_idx] + path.grid.dt * (absg[i_idx] / (absg[i_idx] + absg[i_idx + 1]))
    t_zero = t[np.nonzero(g == 0.0)[0]]
    out = np.concatenate([t_interp, t_zero])
    out.sort()
    return out


def filter_min_height(crossings, path: Path, delta: float, reference=None,
                      component: int = 0) -> MarkedArrivals:
    """Keep crossing pairs whose segment deviates from the reference by at
    least delta; the arrival is the right crossing, marked 0/1 by segment sign."""
    crossings = np.asarray(crossings, dtype=np.float64)
    t = path.times()
    g = path.values[:, component] - (reference(t) if reference is not None else 0.0)
    times, marks = [], []
    if crossings.size >= 2:
        first = np.searchsorted(t, crossings, side="right")
        last = np.searchsorted(t, crossings, side="left") - 1
        for k in range(crossings.size - 1):
            a, b = first[k], last[k + 1]
            if b >= a:
                seg = g[a:b + 1]
                j = int(np.argmax(np.abs(seg)))
                mx = abs(seg[j])
                sign = 1 if seg[j] > 0 else (-1 if seg[j] < 0 else 0)
            else:
                mx, sign = 0.0, 0
            if mx >= delta:
                times.append(crossings[k + 1])
                marks.append(0 if sign >= 0 else 1)
    return MarkedArrivals(np.asarray(times), np.asarray(marks, dtype=np.int64),
                          origin=path.grid.t0)


def _dedupe_sorted(times, marks):
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            times[i] = np.nextafter(times[i - 1], np.inf)
    return times, marks


def _collect_arrivals(spec, params, x0_vec, grid, sigma, delta, gens, events,
                      subgrid, backend):
    d = x0_vec.size
    mod, pack = _resolve(spec, params, backend)
    self_hist = _is_self_history(spec)
    if self_hist and d != 1:
        raise ValueError("history-dependent drifts are one-dimensional")
    if self_hist and isinstance(spec, DriftSpec) and spec.family == "hawkes2":
        mod, pack = None, None
    use_sub = 1 if subgrid else 0
    ev = _events_array(events)
    x = x0_vec.copy()
    have_cross = np.zeros(d, dtype=np.uint8)
    seg_max = np.zeros(d)
    seg_sign = np.zeros(d, dtype=np.int8)
    seg_fired = np.zeros(d, dtype=np.uint8)
    for k in range(d):
        if x[k] == 0.0:
            have_cross[k] = 1
        else:
            seg_max[k] = abs(x[k])
            seg_sign[k] = 1 if x[k] > 0 else -1
    times, marks = [], []
    ev_ptr, s_has, s_val = 0, 0, 0.0
    done = 0
    dummy = np.zeros((1, 1))
    while done < grid.n_steps:
        n = min(CHUNK, grid.n_steps - done)
        z = np.empty((n, d))
        ut = np.empty((n, d)) if use_sub else dummy
        um = np.empty((n, d)) if use_sub else dummy
        for k in range(d):
            z[:, k] = gens[k].standard_normal(n)
            if use_sub:
                ut[:, k] = gens[k].random(n)
                um[:, k] = gens[k].random(n)
        arr_t = np.empty(n + 2)
        arr_m = np.empty(n + 2, dtype=np.int64)
        if mod is not None:
            status, bad, count, ev_ptr, s_has, s_val = mod.arrivals_chunk(
                x, grid.t0, done, grid.dt, sigma, z, ut, um, use_sub, delta,
                *pack[:10], pack[10], ev, ev_ptr, s_has, s_val,
                1 if self_hist else 0,
                have_cross, seg_max, seg_sign, seg_fired, arr_t, arr_m)
        else:
            status, bad, count, s_has, s_val = _py_arrivals_chunk(
                spec, params, x, grid.t0, done, grid.dt, sigma, z, ut, um,
                use_sub, delta, ev, s_has, s_val, self_hist,
                have_cross, seg_max, seg_sign, seg_fired, arr_t, arr_m, times)
        if status != 0:
            raise SimulationDivergedError(x.copy(), grid.t0 + (done + bad) * grid.dt)
        times.extend(arr_t[:count])
        marks.extend(arr_m[:count])
        done += n
    times = np.asarray(times)
    marks = np.asarray(marks, dtype=np.int64)
    if d > 1 and times.size:
        order = np.argsort(times, kind="stable")
        times, marks = times[order], marks[order]
    times, marks = _dedupe_sorted(times, marks)
    return MarkedArrivals(times, marks, origin=grid.t0)


def _py_arrivals_chunk(spec, params, x, t0, idx0, dt, sigma, z, ut, um,
                       use_sub, delta, events, s_has, s_val, self_hist,
                       have_cross, seg_max, seg_sign, seg_fired, arr_t, arr_m,
                       prior_times):
    """Python lane for callables and self-exciting families without packs."""
    n, d = z.shape
    mu_fn = _mu_fn(spec, params)
    if self_hist:
        # events list grows with emitted arrivals
        ev_list = list(prior_times)
        sdt = sigma * math.sqrt(dt)
        var = sigma * sigma * dt
        count = 0
        for i in range(n):
            t = t0 + (idx0 + i) * dt
            mu = mu_fn(x, t, np.asarray(ev_list)).ravel()
            if not np.all(np.isfinite(mu)):
                return 1, i, count, s_has, s_val
            a = float(x[0])
            b = a + float(mu[0]) * dt + sdt * float(z[i, 0])
            x[0] = b
            is_event, tc = _step_event(a, b, t0, idx0, i, dt, var, use_sub,
                                       ut[i, 0] if use_sub else 0.0)
            if is_event:
                if have_cross[0] == 1 and (seg_max[0] >= delta or seg_fired[0] == 1):
                    arr_t[count] = tc
                    arr_m[count] = 0 if seg_sign[0] >= 0 else 1
                    count += 1
                    ev_list.append(tc)
                have_cross[0] = 1
                seg_max[0] = 0.0
                seg_sign[0] = 0
                seg_fired[0] = 0
            elif use_sub:
                aa, ab = abs(a), abs(b)
                if aa < delta and ab < delta:
                    if um[i, 0] < math.exp(-2.0 * (delta - aa) * (delta - ab) / var):
                        seg_fired[0] = 1
            ab = abs(b)
            if ab > seg_max[0]:
                seg_max[0] = ab
            if seg_sign[0] == 0 and b != 0.0:
                seg_sign[0] = 1 if b > 0.0 else -1
        return 0, -1, count, s_has, s_val
    vals = np.empty((n + 1, d))
    status, bad = _py_euler_values(mu_fn, x, t0, idx0, dt, sigma, z, events, vals)
    if status != 0:
        return 1, bad, 0, s_has, s_val
    all_t, all_m = [], []
    for k in range(d):
        tk, mk, carry = _kernels_numpy.scan_coordinate(
            vals[:, k], t0, idx0, dt, sigma, use_sub, delta,
            ut[:, k] if use_sub else np.zeros(n), um[:, k] if use_sub else np.zeros(n),
            int(have_cross[k]), float(seg_max[k]), int(seg_sign[k]),
            int(seg_fired[k]), k, d)
        have_cross[k], seg_max[k], seg_sign[k], seg_fired[k] = carry
        all_t.extend(tk)
        all_m.extend(mk)
    order = np.argsort(np.asarray(all_t), kind="stable") if all_t else []
    for j, o in enumerate(order):
        arr_t[j] = all_t[o]
        arr_m[j] = all_m[o]
    return 0, -1, len(all_t), s_has, s_val


def _step_event(a, b, t0, idx0, i, dt, var, use_sub, u):
    if b == 0.0:
        return True, t0 + (idx0 + i + 1) * dt
    if a * b < 0.0:
        return True, t0 + (idx0 + i) * dt + dt * (abs(a) / (abs(a) + abs(b)))
    if use_sub and a * b > 0.0 and u < math.exp(-2.0 * a * b / var):
        return True, t0 + (idx0 + i) * dt + dt * (abs(a) / (abs(a) + abs(b)))
    return False, 0.0


def sample_arrivals(spec, params, x0, grid: TimeGrid, sigma: float, delta: float,
                    rng: RngSeed, events=None, subgrid=None, backend=None) -> MarkedArrivals:
    """Simulate a scalar diffusion and return its delta-filtered zero-crossing
    arrivals, marked 0 for positive excursions and 1 for negative ones.

    subgrid=None enables the bridge corrections exactly when delta > 0.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if subgrid is None:
        subgrid = delta > 0
    x0_vec = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0_vec.size != 1:
        raise ValueError("sample_arrivals is one-dimensional; use sample_arrivals_multidim")
    return _collect_arrivals(spec, params, x0_vec.copy(), grid, sigma, delta,
                             [rng.generator()], events, subgrid, backend)


def sample_arrivals_multidim(spec, params, x0, grid: TimeGrid, sigma: float,
                             delta: float, rng: RngSeed, subgrid=None,
                             backend=None) -> MarkedArrivals:
    """Per-coordinate axis crossings of a d-dimensional diffusion; mark =
    coordinate index. Coordinate k draws noise from rng.child(k), so a
    decoupled drift reproduces the matching one-dimensional runs."""
    x0_vec = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    d = x0_vec.size
    if d == 1:
        return sample_arrivals(spec, params, x0_vec[0], grid, sigma, delta, rng,
                               subgrid=subgrid, backend=backend)
    if subgrid is None:
        subgrid = delta > 0
    gens = [rng.child(k).generator() for k in range(d)]
    return _collect_arrivals(spec, params, x0_vec, grid, sigma, delta, gens,
                             None, subgrid, backend)


def sample_arrivals_until(spec, params, dt: float, horizon: float, sigma: float,
                          delta: float, rng: RngSeed, n_target: int, x0=0.0,
                          max_paths: int = 256, events=None, subgrid=None,
                          backend=None):
    """Run independent paths (one per rng.child(p)) of the given horizon until
    at least n_target arrivals are pooled. Returns the list of MarkedArrivals."""
    grid = TimeGrid(0.0, dt, int(round(horizon / dt)))
    out = []
    total = 0
    for p in range(max_paths):
        a = sample_arrivals(spec, params, x0, grid, sigma, delta, rng.child(p),
                            events=events, subgrid=subgrid, backend=backend)
        out.append(a)
        total += len(a)
        if total >= n_target:
            break
    return out


def sample_fht(spec, params, x0: float, alpha: float, dt: float, rng: RngSeed,
               t_max: float, n: int = 1, sigma: float = 1.0,
               censored: str = "raise"):
    """First hitting times of the boundary alpha by n independent paths.

    Hitting is detected by sign change of x - alpha with linear
    interpolation. censored='raise' errors when a path survives past t_max,
    'drop' discards such paths.
    """
    if x0 == alpha:
        raise ValueError("x0 must differ from the boundary alpha")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    gen = rng.generator()
    mu_fn = _mu_fn(spec, params)
    x = np.full(n, float(x0))
    hit = np.full(n, np.nan)
    alive = np.arange(n)
    sdt = sigma * math.sqrt(dt)
    n_steps = int(math.ceil(t_max / dt))
    g_prev = x - alpha
    for i in range(n_steps):
        if alive.size == 0:
            break
        t = i * dt
        mu = mu_fn(x[alive], t).ravel()
        if not np.all(np.isfinite(mu)):
            raise SimulationDivergedError(x[alive][~np.isfinite(mu)][:1], t)
        x[alive] = x[alive] + mu * dt + sdt * gen.standard_normal(alive.size)
        g = x[alive] - alpha
        gp = g_prev[alive]
        crossed = (g == 0.0) | (gp * g < 0.0)
        if np.any(crossed):
            idx = alive[crossed]
            gc, gpc = g[crossed], gp[crossed]
            frac = np.where(gc == 0.0, 1.0, np.abs(gpc) / (np.abs(gpc) + np.abs(gc)))
            hit[idx] = i * dt + dt * frac
        g_prev[alive] = g
        alive = alive[~crossed]
    if alive.size:
        if censored == "raise":
            raise CensoredSampleError(t_max, alive.size)
        hit = hit[~np.isnan(hit)]
    return hit


def first_hitting_time(spec, params, x0: float, alpha: float, dt: float,
                       rng: RngSeed, t_max: float, sigma: float = 1.0) -> float:
    """First linear-interpolated time the path reaches alpha; errors if the
    boundary is not reached by t_max."""
    return float(sample_fht(spec, params, x0, alpha, dt, rng, t_max, n=1,
                            sigma=sigma)[0])
