"""Drift families: parametric test drifts, a small MLP, and event-kernel drifts.

Every family evaluates vectorized over query points and provides an exact
vector-Jacobian product with respect to its flat parameter vector, so the
discretized training objective differentiates exactly (checked against
central finite differences in the tests).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RngSeed

__all__ = [
    "DriftSpec",
    "ParamVector",
    "param_count",
    "init_params",
    "eval_drift",
    "drift_vjp",
    "delta_gradient",
    "last_event_before",
    "pack_for_kernels",
]

_FIXED = {"cubic", "tanh", "circle", "ou"}
_FAMS = {"linear", "mlp", "kernel", "hawkes2"} | _FIXED
_ACTS = {"softplus", "leaky-relu"}


@dataclass(frozen=True)
class DriftSpec:
    """Declarative drift architecture; the parameter count derives from it alone.

    Families:
      linear   theta * x, theta trainable
      cubic    -x^3 (fixed)
      tanh     -tanh(x) (fixed)
      circle   fixed 2-d map (-x1 - x2, -x2 + 5 x1)
      ou       -x (fixed)
      mlp      width/depth MLP, activation softplus or leaky-relu,
               optional positional-encoding frequencies on the inputs
      kernel   base(x, t) + w * exp(-(t - S_t)/eta), w trainable, S_t the
               last history or exogenous event at or before t
      hawkes2  mu0 * t + h(t - t1) + h(t - t2) with h(u) = e^u 1(u >= 0)
               over the last two events (optional variant, off by default)
    """

    family: str
    input_dim: int = 1
    time_input: bool = False
    width: int = 16
    depth: int = 6
    activation: str = "softplus"
    posenc: tuple = ()
    base: "DriftSpec | None" = None
    eta: float = 1.0
    source: str = "history"

    def __post_init__(self):
        if self.family not in _FAMS:
            raise ValueError(f"unknown drift family {self.family!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.family == "circle" and self.input_dim != 2:
            raise ValueError("circle family is 2-dimensional")
        if self.family == "mlp":
            if self.width < 1 or self.depth < 1:
                raise ValueError("mlp width and depth must be >= 1")
            if self.activation not in _ACTS:
                raise ValueError(f"activation must be one of {_ACTS}")
        if self.family == "kernel":
            if self.base is None:
                raise ValueError("kernel family needs a base spec")
            if self.base.family == "kernel":
                raise ValueError("kernel base cannot itself be a kernel")
            if self.base.input_dim != self.input_dim:
                raise ValueError("kernel base dimension mismatch")
            if not self.eta > 0:
                raise ValueError("eta must be positive")
            if self.source not in ("history", "exogenous"):
                raise ValueError("kernel source must be history or exogenous")
        object.__setattr__(self, "posenc", tuple(float(f) for f in self.posenc))

    def to_dict(self):
        d = {"family": self.family, "input_dim": self.input_dim,
             "time_input": self.time_input}
        if self.family == "mlp":
            d.update(width=self.width, depth=self.depth, activation=self.activation,
                     posenc=list(self.posenc))
        if self.family == "kernel":
            d.update(base=self.base.to_dict(), eta=self.eta, source=self.source)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "base" in d and d["base"] is not None:
            d["base"] = cls.from_dict(d["base"])
        if "posenc" in d:
            d["posenc"] = tuple(d["posenc"])
        return cls(**d)


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter values in the spec's canonical order (layer-major
    weights then biases per layer, scalar trainables last)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size and not np.all(np.isfinite(v)):
            raise ValueError("parameters must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _as_values(params):
    if isinstance(params, ParamVector):
        return params.values
    return np.asarray(params, dtype=np.float64).ravel()


def _mlp_sizes(spec):
    base_feats = spec.input_dim + (1 if spec.time_input else 0)
    n_in = base_feats * (1 + 2 * len(spec.posenc))
    return [n_in] + [spec.width] * spec.depth + [spec.input_dim]


def param_count(spec: DriftSpec) -> int:
    if spec.family == "linear":
        return 1
    if spec.family in _FIXED:
        return 0
    if spec.family == "mlp":
        sizes = _mlp_sizes(spec)
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))
    if spec.family == "kernel":
        return param_count(spec.base) + 1
    if spec.family == "hawkes2":
        return 1
    raise AssertionError(spec.family)


def init_params(spec: DriftSpec, rng: RngSeed) -> ParamVector:
    """Glorot-uniform MLP weights, zero biases, scalars from U(-0.1, 0.1)."""
    gen = rng.generator()
    return ParamVector(_init_values(spec, gen))


def _init_values(spec, gen):
    if spec.family == "linear":
        return gen.uniform(-0.1, 0.1, size=1)
    if spec.family in _FIXED:
        return np.empty(0)
    if spec.family == "mlp":
        sizes = _mlp_sizes(spec)
        chunks = []
        for nin, nout in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (nin + nout))
            chunks.append(gen.uniform(-lim, lim, size=nin * nout))
            chunks.append(np.zeros(nout))
        return np.concatenate(chunks)
    if spec.family == "kernel":
        return np.concatenate([_init_values(spec.base, gen),
                               gen.uniform(-0.1, 0.1, size=1)])
    if spec.family == "hawkes2":
        return gen.uniform(-0.1, 0.1, size=1)
    raise AssertionError(spec.family)


def last_event_before(events, t):
    """Value of the most recent event at or before each t; -inf when none.

    events must be sorted ascending. Vectorized over t.
    """
    t = np.asarray(t)
    if events is None or len(events) == 0:
        return np.full(t.shape, -np.inf)
    events = np.asarray(events, dtype=np.float64)
    idx = np.searchsorted(events, t, side="right")
    out = np.full(t.shape, -np.inf)
    got = idx > 0
    out[got] = events[np.clip(idx - 1, 0, events.size - 1)][got]
    return out


def _canon_xt(spec, x, t):
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    if scalar:
        x = x[None]
    if x.ndim == 1:
        if spec.input_dim == 1:
            X = x[:, None]
            shape = x.shape
        else:
            X = x[None, :]
            shape = (spec.input_dim,)
            if x.size != spec.input_dim:
                raise ValueError(f"state has dim {x.size}, spec wants {spec.input_dim}")
    else:
        X = x
        shape = x.shape
    if X.shape[-1] != spec.input_dim:
        raise ValueError(f"state has dim {X.shape[-1]}, spec wants {spec.input_dim}")
    T = np.broadcast_to(np.asarray(t, dtype=np.float64), X.shape[:-1]).reshape(-1)
    return X.reshape(-1, spec.input_dim), T, shape, scalar


def _softplus(z):
    return np.where(z > 0, z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _mlp_features(spec, X, T):
    cols = [X]
    if spec.time_input:
        cols.append(T[:, None])
    base = np.concatenate(cols, axis=1)
    feats = [base]
    for f in spec.posenc:
        block = np.empty((base.shape[0], 2 * base.shape[1]))
        block[:, 0::2] = np.sin(2.0 * np.pi * f * base)
        block[:, 1::2] = np.cos(2.0 * np.pi * f * base)
        feats.append(block)
    return np.concatenate(feats, axis=1) if len(feats) > 1 else base


def _mlp_unpack(spec, v):
    sizes = _mlp_sizes(spec)
    Ws, bs = [], []
    off = 0
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        Ws.append(v[off:off + nin * nout].reshape(nout, nin))
        off += nin * nout
        bs.append(v[off:off + nout])
        off += nout
    return Ws, bs


def _mlp_forward(spec, v, X, T, want_cache=False):
    Ws, bs = _mlp_unpack(spec, v)
    h = _mlp_features(spec, X, T)
    hs, gs = [h], []
    n_layers = len(Ws)
    for l, (W, b) in enumerate(zip(Ws, bs)):
        z = h @ W.T + b
        if l < n_layers - 1:
            # activation and its derivative share one exp evaluation
            if spec.activation == "softplus":
                e = np.exp(-np.abs(z))
                h = np.maximum(z, 0.0) + np.log1p(e)
                if want_cache:
                    gs.append(np.where(z > 0, 1.0 / (1.0 + e), e / (1.0 + e)))
            else:
                h = np.where(z > 0, z, 0.01 * z)
                if want_cache:
                    gs.append(np.where(z > 0, 1.0, 0.01))
        else:
            h = z
        hs.append(h)
    if want_cache:
        return h, (Ws, bs, hs, gs)
    return h


def _mlp_vjp(spec, cache, cot):
    Ws, bs, hs, gs = cache
    n_layers = len(Ws)
    grads = [None] * (2 * n_layers)
    delta = cot
    for l in range(n_layers - 1, -1, -1):
        grads[2 * l] = (delta.T @ hs[l]).ravel()
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ Ws[l]) * gs[l - 1]
    return np.concatenate(grads)


def _kernel_bump(spec, T, events):
    s = last_event_before(events, T)
    with np.errstate(under="ignore"):
        phi = np.where(np.isfinite(s), np.exp(-(T - s) / spec.eta), 0.0)
    return phi


def eval_drift(spec: DriftSpec, params, x, t=0.0, events=None):
    """Drift value at states x and times t.

    x may be a scalar, a (d,) state, or a batch (..., d); for 1-d specs a
    1-d array is a batch of scalar states. The result matches the input
    shape. events (sorted times) feed the kernel and hawkes2 families.
    """
    v = _as_values(params)
    if v.size != param_count(spec):
        raise ValueError(f"expected {param_count(spec)} parameters, got {v.size}")
    X, T, shape, scalar = _canon_xt(spec, x, t)
    out = _eval_core(spec, v, X, T, events)
    out = out.reshape(*shape) if spec.input_dim == 1 else out.reshape(*shape[:-1], spec.input_dim)
    return float(out) if scalar else out


def _eval_core(spec, v, X, T, events):
    fam = spec.family
    if fam == "linear":
        return v[0] * X
    if fam == "cubic":
        return -(X * X * X)
    if fam == "tanh":
        return -np.tanh(X)
    if fam == "circle":
        out = np.empty_like(X)
        out[:, 0] = -X[:, 0] - X[:, 1]
        out[:, 1] = -X[:, 1] + 5.0 * X[:, 0]
        return out
    if fam == "ou":
        return -X
    if fam == "mlp":
        return _mlp_forward(spec, v, X, T)
    if fam == "kernel":
        base = _eval_core(spec.base, v[:-1], X, T, events)
        return base + v[-1] * _kernel_bump(spec, T, events)[:, None]
    if fam == "hawkes2":
        out = np.full_like(X, 0.0)
        out[:, 0] = v[0] * T
        if events is not None and len(events):
            ev = np.asarray(events, dtype=np.float64)
            idx = np.searchsorted(ev, T, side="right")
            for back in (1, 2):
                ok = idx >= back
                u = T[ok] - ev[idx[ok] - back]
                out[ok, 0] += np.where(u >= 0, np.exp(u), 0.0)
        return out
    raise AssertionError(fam)


def drift_vjp(spec: DriftSpec, params, x, t, cot, events=None):
    """Sum over query points of cot . d mu / d params, as a flat gradient."""
    v = _as_values(params)
    X, T, _, _ = _canon_xt(spec, x, t)
    c = np.asarray(cot, dtype=np.float64).reshape(X.shape[0], spec.input_dim)
    return _vjp_core(spec, v, X, T, c, events)


def drift_value_and_vjp(spec: DriftSpec, params, x, t, events=None):
    """(mu, vjp_fn) sharing one forward pass; vjp_fn(cot) returns the flat
    gradient for a cotangent shaped like mu."""
    v = _as_values(params)
    X, T, shape, _ = _canon_xt(spec, x, t)
    mu, fn = _value_vjp_core(spec, v, X, T, events)
    out = mu.reshape(*shape) if spec.input_dim == 1 else mu
    return out, lambda cot: fn(
        np.asarray(cot, dtype=np.float64).reshape(X.shape[0], spec.input_dim))


def _value_vjp_core(spec, v, X, T, events):
    fam = spec.family
    if fam == "mlp":
        mu, cache = _mlp_forward(spec, v, X, T, want_cache=True)
        return mu, lambda c: _mlp_vjp(spec, cache, c)
    if fam == "kernel":
        base, base_fn = _value_vjp_core(spec.base, v[:-1], X, T, events)
        phi = _kernel_bump(spec, T, events)
        mu = base + v[-1] * phi[:, None]
        return mu, lambda c: np.concatenate(
            [base_fn(c), [float((c[:, 0] * phi).sum())]])
    mu = _eval_core(spec, v, X, T, events)
    return mu, lambda c: _vjp_core(spec, v, X, T, c, events)


def _vjp_core(spec, v, X, T, c, events):
    fam = spec.family
    if fam == "linear":
        return np.array([float((c * X).sum())])
    if fam in _FIXED:
        return np.empty(0)
    if fam == "mlp":
        _, cache = _mlp_forward(spec, v, X, T, want_cache=True)
        return _mlp_vjp(spec, cache, c)
    if fam == "kernel":
        gb = _vjp_core(spec.base, v[:-1], X, T, c, events)
        gw = float((c[:, 0] * _kernel_bump(spec, T, events)).sum())
        return np.concatenate([gb, [gw]])
    if fam == "hawkes2":
        return np.array([float((c[:, 0] * T).sum())])
    raise AssertionError(fam)


def delta_gradient(delta: float, taus) -> float:
    """d/d delta of sum_i log p_e(tau_i; delta) = sum_i (1/delta - 4 delta / tau_i)."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    taus = np.asarray(taus, dtype=np.float64)
    return float(np.sum(1.0 / delta - 4.0 * delta / taus))


# family codes shared with the compiled kernels
_CODES = {"linear": 0, "cubic": 1, "tanh": 2, "circle": 3, "ou": 4, "mlp": 5,
          "kernel": 6}
_ACT_CODES = {"softplus": 0, "leaky-relu": 1}


def pack_for_kernels(spec: DriftSpec, params):
    """Flatten a spec for the compiled simulation kernels.

    Returns (code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, w, eta,
    src) or None when the family has no fast-lane support (hawkes2,
    kernel over mlp).
    """
    v = _as_values(params)
    empty_i = np.empty(0, dtype=np.int64)
    empty_f = np.empty(0, dtype=np.float64)
    fam = spec.family
    if fam == "hawkes2":
        return None
    if fam == "kernel":
        if spec.base.family in ("mlp", "hawkes2"):
            return None
        bcode = _CODES[spec.base.family]
        return (np.int64(6), np.int64(0), np.int64(0), empty_i, empty_f, empty_f,
                np.int64(bcode), np.ascontiguousarray(v[:-1]), float(v[-1]),
                float(spec.eta), np.int64(0 if spec.source == "history" else 1))
    code = _CODES[fam]
    if fam == "mlp":
        sizes = np.array(_mlp_sizes(spec), dtype=np.int64)
        return (np.int64(5), np.int64(_ACT_CODES[spec.activation]),
                np.int64(1 if spec.time_input else 0), sizes,
                np.ascontiguousarray(v), np.asarray(spec.posenc, dtype=np.float64),
                np.int64(-1), empty_f, 0.0, 1.0, np.int64(-1))
    return (np.int64(code), np.int64(0), np.int64(0), empty_i,
            np.ascontiguousarray(v), empty_f, np.int64(-1), empty_f, 0.0, 1.0,
            np.int64(-1))
