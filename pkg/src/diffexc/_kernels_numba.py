"""Numba lane: fused Euler stepping, crossing/arrival scanning, path recording.

All kernels consume pre-drawn noise/uniform chunks so the random stream is
owned by the caller. The arrival scanner maintains per-coordinate segment
state (running max deviation, sign, sub-grid hit flag) across chunks, and
optionally applies Brownian-bridge corrections for zero touches and
threshold touches missed between grid points.
"""
import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NONFINITE = 1


@njit(cache=True)
def _mu_into(code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw, keta,
             x, t, s_has, s_val, feat, h1, h2, out):
    d = x.shape[0]
    c = bcode if code == 6 else code
    p = bfvec if code == 6 else fvec
    if c == 0:
        for k in range(d):
            out[k] = p[0] * x[k]
    elif c == 1:
        for k in range(d):
            out[k] = -(x[k] * x[k] * x[k])
    elif c == 2:
        for k in range(d):
            out[k] = -math.tanh(x[k])
    elif c == 3:
        out[0] = -x[0] - x[1]
        out[1] = -x[1] + 5.0 * x[0]
    elif c == 4:
        for k in range(d):
            out[k] = -x[k]
    elif c == 5:
        nb = d + (1 if tflag == 1 else 0)
        for k in range(d):
            feat[k] = x[k]
        if tflag == 1:
            feat[d] = t
        idx = nb
        for fi in range(freqs.shape[0]):
            f = 2.0 * np.pi * freqs[fi]
            for k in range(nb):
                feat[idx] = math.sin(f * feat[k])
                feat[idx + 1] = math.cos(f * feat[k])
                idx += 2
        n_layers = sizes.shape[0] - 1
        nin = sizes[0]
        for k in range(nin):
            h1[k] = feat[k]
        off = 0
        for l in range(n_layers):
            nin = sizes[l]
            nout = sizes[l + 1]
            for o in range(nout):
                acc = fvec[off + nout * nin + o]
                row = off + o * nin
                for i in range(nin):
                    acc += fvec[row + i] * h1[i]
                if l < n_layers - 1:
                    if acode == 0:
                        if acc > 0.0:
                            acc = acc + math.log1p(math.exp(-acc))
                        else:
                            acc = math.log1p(math.exp(acc))
                    else:
                        if acc <= 0.0:
                            acc = 0.01 * acc
                h2[o] = acc
            off += nout * nin + nout
            for o in range(nout):
                h1[o] = h2[o]
        for k in range(d):
            out[k] = h1[k]
    if code == 6 and s_has == 1:
        out[0] += kw * math.exp(-(t - s_val) / keta)


@njit(cache=True)
def euler_values(x, t0, idx0, dt, sigma, z,
                 code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw, keta,
                 ksrc, events, ev_ptr, s_has, s_val, out):
    """Record an Euler path into out (n+1, d). Returns (status, bad_step, ev_ptr)."""
    n = z.shape[0]
    d = x.shape[0]
    sdt = sigma * math.sqrt(dt)
    maxw = 1
    nf = 1
    if sizes.shape[0] > 0:
        nf = sizes[0]
        for i in range(sizes.shape[0]):
            if sizes[i] > maxw:
                maxw = sizes[i]
    feat = np.empty(nf)
    h1 = np.empty(maxw)
    h2 = np.empty(maxw)
    mu = np.empty(d)
    for k in range(d):
        out[0, k] = x[k]
    for i in range(n):
        t = t0 + (idx0 + i) * dt
        if ksrc == 1:
            while ev_ptr < events.shape[0] and events[ev_ptr] <= t:
                s_val = events[ev_ptr]
                s_has = 1
                ev_ptr += 1
        _mu_into(code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw, keta,
                 x, t, s_has, s_val, feat, h1, h2, mu)
        for k in range(d):
            if not math.isfinite(mu[k]):
                return STATUS_NONFINITE, i, ev_ptr
            x[k] = x[k] + mu[k] * dt + sdt * z[i, k]
            out[i + 1, k] = x[k]
    return STATUS_OK, -1, ev_ptr


@njit(cache=True)
def arrivals_chunk(x, t0, idx0, dt, sigma, z, ut, um, use_sub, delta,
                   code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw,
                   keta, ksrc, events, ev_ptr, s_has, s_val, self_hist,
                   have_cross, seg_max, seg_sign, seg_fired,
                   arr_t, arr_m):
    """Step one chunk and scan for delta-filtered arrivals in place.

    Segment bookkeeping matches the array scanner: a crossing (sign change,
    exact zero, or sampled sub-grid touch) closes the current segment with
    interior grid points strictly inside; the segment qualifies when its
    grid max reaches delta or a bridge threshold-touch fired inside it.
    Returns (status, bad_step, count, ev_ptr, s_has, s_val).
    """
    n = z.shape[0]
    d = x.shape[0]
    sdt = sigma * math.sqrt(dt)
    var = sigma * sigma * dt
    maxw = 1
    nf = 1
    if sizes.shape[0] > 0:
        nf = sizes[0]
        for i in range(sizes.shape[0]):
            if sizes[i] > maxw:
                maxw = sizes[i]
    feat = np.empty(nf)
    h1 = np.empty(maxw)
    h2 = np.empty(maxw)
    mu = np.empty(d)
    count = 0
    for i in range(n):
        t = t0 + (idx0 + i) * dt
        if ksrc == 1:
            while ev_ptr < events.shape[0] and events[ev_ptr] <= t:
                s_val = events[ev_ptr]
                s_has = 1
                ev_ptr += 1
        _mu_into(code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw, keta,
                 x, t, s_has, s_val, feat, h1, h2, mu)
        for k in range(d):
            if not math.isfinite(mu[k]):
                return STATUS_NONFINITE, i, count, ev_ptr, s_has, s_val
        for k in range(d):
            a = x[k]
            b = a + mu[k] * dt + sdt * z[i, k]
            x[k] = b
            is_event = False
            tc = 0.0
            if b == 0.0:
                is_event = True
                tc = t0 + (idx0 + i + 1) * dt
            elif a * b < 0.0:
                is_event = True
                tc = t0 + (idx0 + i) * dt + dt * (abs(a) / (abs(a) + abs(b)))
            elif use_sub == 1 and a * b > 0.0:
                if ut[i, k] < math.exp(-2.0 * a * b / var):
                    is_event = True
                    tc = t0 + (idx0 + i) * dt + dt * (abs(a) / (abs(a) + abs(b)))
            if is_event:
                if have_cross[k] == 1 and (seg_max[k] >= delta or seg_fired[k] == 1):
                    arr_t[count] = tc
                    if d > 1:
                        arr_m[count] = k
                    else:
                        arr_m[count] = 0 if seg_sign[k] >= 0 else 1
                    count += 1
                    if self_hist == 1:
                        s_val = tc
                        s_has = 1
                have_cross[k] = 1
                seg_max[k] = 0.0
                seg_sign[k] = 0
                seg_fired[k] = 0
            elif use_sub == 1:
                aa = abs(a)
                ab = abs(b)
                if aa < delta and ab < delta:
                    p = math.exp(-2.0 * (delta - aa) * (delta - ab) / var)
                    if um[i, k] < p:
                        seg_fired[k] = 1
            ab = abs(b)
            if ab > seg_max[k]:
                seg_max[k] = ab
            if seg_sign[k] == 0 and b != 0.0:
                seg_sign[k] = 1 if b > 0.0 else -1
    return STATUS_OK, -1, count, ev_ptr, s_has, s_val
