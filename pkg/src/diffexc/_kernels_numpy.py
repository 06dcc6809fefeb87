"""Pure-numpy lane: same kernel contracts as the numba module.

Driftless paths vectorize through cumulative sums; drifted paths step in a
Python loop (adequate for fallback use, the numba lane is the fast path).
The arrival scan works on materialized chunk values with the same segment
semantics as the fused kernel.
"""
import math

import numpy as np

STATUS_OK = 0
STATUS_NONFINITE = 1


def _mu_batch(code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw, keta,
              X, t, s_has, s_val):
    """Drift at one time for a batch of states X (R, d)."""
    c = bcode if code == 6 else code
    p = bfvec if code == 6 else fvec
    if c == 0:
        out = p[0] * X
    elif c == 1:
        out = -(X * X * X)
    elif c == 2:
        out = -np.tanh(X)
    elif c == 3:
        out = np.empty_like(X)
        out[:, 0] = -X[:, 0] - X[:, 1]
        out[:, 1] = -X[:, 1] + 5.0 * X[:, 0]
    elif c == 4:
        out = -X
    else:  # mlp
        d = X.shape[1]
        nb = d + (1 if tflag else 0)
        base = np.empty((X.shape[0], nb))
        base[:, :d] = X
        if tflag:
            base[:, d] = t
        feats = [base]
        for f in freqs:
            blk = np.empty((X.shape[0], 2 * nb))
            blk[:, 0::2] = np.sin(2.0 * np.pi * f * base)
            blk[:, 1::2] = np.cos(2.0 * np.pi * f * base)
            feats.append(blk)
        h = np.concatenate(feats, axis=1) if len(feats) > 1 else base
        n_layers = sizes.shape[0] - 1
        off = 0
        for l in range(n_layers):
            nin, nout = int(sizes[l]), int(sizes[l + 1])
            W = fvec[off:off + nout * nin].reshape(nout, nin)
            b = fvec[off + nout * nin: off + nout * nin + nout]
            z = h @ W.T + b
            if l < n_layers - 1:
                if acode == 0:
                    h = np.where(z > 0, z, 0.0) + np.log1p(np.exp(-np.abs(z)))
                else:
                    h = np.where(z > 0, z, 0.01 * z)
            else:
                h = z
            off += nout * nin + nout
        out = h
    if code == 6 and s_has:
        out[:, 0] += kw * math.exp(-(t - s_val) / keta)
    return out


def _is_driftless(code, fvec, bcode):
    return code == 0 and fvec.shape[0] == 1 and fvec[0] == 0.0


def euler_values(x, t0, idx0, dt, sigma, z,
                 code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw, keta,
                 ksrc, events, ev_ptr, s_has, s_val, out):
    n, d = z.shape
    sdt = sigma * math.sqrt(dt)
    out[0] = x
    if _is_driftless(code, fvec, bcode) and ksrc != 1:
        np.cumsum(z * sdt, axis=0, out=out[1:])
        out[1:] += x
        x[:] = out[-1]
        return STATUS_OK, -1, ev_ptr
    ne = events.shape[0]
    for i in range(n):
        t = t0 + (idx0 + i) * dt
        if ksrc == 1:
            while ev_ptr < ne and events[ev_ptr] <= t:
                s_val = events[ev_ptr]
                s_has = 1
                ev_ptr += 1
        mu = _mu_batch(code, acode, tflag, sizes, fvec, freqs, bcode, bfvec,
                       kw, keta, x[None, :], t, s_has, s_val)[0]
        if not np.all(np.isfinite(mu)):
            return STATUS_NONFINITE, i, ev_ptr
        x += mu * dt + sdt * z[i]
        out[i + 1] = x
    return STATUS_OK, -1, ev_ptr


def scan_coordinate(g, t0, idx0, dt, sigma, use_sub, delta, ut, um,
                    have_cross, seg_max, seg_sign, seg_fired, coord, d):
    """Scan one coordinate's chunk values g (n+1,) for arrivals.

    Returns (times, marks, carry) with carry = (have_cross, seg_max,
    seg_sign, seg_fired). Matches the fused kernel's segment semantics.
    """
    n = g.size - 1
    var = sigma * sigma * dt
    absg = np.abs(g)
    prod = g[:-1] * g[1:]
    ev_step = np.zeros(n, dtype=bool)
    ev_step |= g[1:] == 0.0
    ev_step |= prod < 0.0
    if use_sub:
        same = prod > 0.0
        with np.errstate(under="ignore", over="ignore"):
            pt = np.where(same, np.exp(-2.0 * np.where(same, prod, 1.0) / var), 0.0)
        ev_step |= same & (ut < pt)
        d0 = delta - absg[:-1]
        d1 = delta - absg[1:]
        inside = (d0 > 0) & (d1 > 0)
        with np.errstate(under="ignore"):
            pm = np.where(inside, np.exp(-2.0 * np.where(inside, d0 * d1, 1.0) / var), 2.0)
        fired_step = um < pm  # steps where a threshold touch fires (or p >= 1)
    else:
        fired_step = np.zeros(n, dtype=bool)
    idxs = np.nonzero(ev_step)[0]
    times, marks = [], []
    ptr = 0  # next grid index to absorb
    for i in idxs:
        # absorb grid points ptr..i into the running segment
        if i >= ptr:
            mseg = absg[ptr:i + 1].max()
            if mseg > seg_max:
                seg_max = mseg
            if seg_sign == 0:
                nz = g[ptr:i + 1]
                nz = nz[nz != 0.0]
                if nz.size:
                    seg_sign = 1 if nz[0] > 0 else -1
        # interior steps of this segment are ptr-1..i-1 when no event fired on
        # them; fired flags on event steps are ignored, matching the fused lane
        if use_sub and i > ptr - 1:
            lo = max(ptr - 1, 0)
            sl = fired_step[lo:i]
            ok = ~ev_step[lo:i]
            if np.any(sl & ok & (absg[lo:i] < delta) & (absg[lo + 1:i + 1] < delta)):
                seg_fired = 1
        if g[i + 1] == 0.0:
            tc = t0 + (idx0 + i + 1) * dt
        else:
            tc = t0 + (idx0 + i) * dt + dt * (absg[i] / (absg[i] + absg[i + 1]))
        if have_cross and (seg_max >= delta or seg_fired):
            times.append(tc)
            marks.append(coord if d > 1 else (0 if seg_sign >= 0 else 1))
        have_cross = 1
        seg_max = 0.0
        seg_sign = 0
        seg_fired = 0
        ptr = i + 1
    # absorb the tail
    if ptr <= n:
        mseg = absg[ptr:].max() if absg[ptr:].size else 0.0
        if mseg > seg_max:
            seg_max = mseg
        if seg_sign == 0:
            nz = g[ptr:]
            nz = nz[nz != 0.0]
            if nz.size:
                seg_sign = 1 if nz[0] > 0 else -1
        if use_sub:
            lo = max(ptr - 1, 0)
            sl = fired_step[lo:n]
            ok = ~ev_step[lo:n]
            if np.any(sl & ok & (absg[lo:n] < delta) & (absg[lo + 1:n + 1] < delta)):
                seg_fired = 1
    return times, marks, (have_cross, seg_max, seg_sign, seg_fired)


def arrivals_chunk(x, t0, idx0, dt, sigma, z, ut, um, use_sub, delta,
                   code, acode, tflag, sizes, fvec, freqs, bcode, bfvec, kw,
                   keta, ksrc, events, ev_ptr, s_has, s_val, self_hist,
                   have_cross, seg_max, seg_sign, seg_fired,
                   arr_t, arr_m):
    n, d = z.shape
    if self_hist == 1:
        return _arrivals_chunk_history(
            x, t0, idx0, dt, sigma, z, ut, um, use_sub, delta, code, acode,
            tflag, sizes, fvec, freqs, bcode, bfvec, kw, keta, ksrc, events,
            ev_ptr, s_has, s_val, have_cross, seg_max, seg_sign, seg_fired,
            arr_t, arr_m)
    vals = np.empty((n + 1, d))
    status, bad, ev_ptr = euler_values(
        x, t0, idx0, dt, sigma, z, code, acode, tflag, sizes, fvec, freqs,
        bcode, bfvec, kw, keta, ksrc, events, ev_ptr, s_has, s_val, vals)
    if status != STATUS_OK:
        return status, bad, 0, ev_ptr, s_has, s_val
    all_t, all_m = [], []
    for k in range(d):
        tk, mk, carry = scan_coordinate(
            vals[:, k], t0, idx0, dt, sigma, use_sub, delta,
            ut[:, k], um[:, k], int(have_cross[k]), float(seg_max[k]),
            int(seg_sign[k]), int(seg_fired[k]), k, d)
        have_cross[k], seg_max[k], seg_sign[k], seg_fired[k] = carry
        all_t.extend(tk)
        all_m.extend(mk)
    order = np.argsort(np.asarray(all_t), kind="stable") if all_t else []
    count = len(all_t)
    for j, o in enumerate(order):
        arr_t[j] = all_t[o]
        arr_m[j] = all_m[o]
    return STATUS_OK, -1, count, ev_ptr, s_has, s_val


def _arrivals_chunk_history(x, t0, idx0, dt, sigma, z, ut, um, use_sub, delta,
                            code, acode, tflag, sizes, fvec, freqs, bcode,
                            bfvec, kw, keta, ksrc, events, ev_ptr, s_has,
                            s_val, have_cross, seg_max, seg_sign, seg_fired,
                            arr_t, arr_m):
    """Self-history variant: arrivals feed back into the drift, so step one
    at a time. 1-d only."""
    n = z.shape[0]
    sdt = sigma * math.sqrt(dt)
    var = sigma * sigma * dt
    count = 0
    for i in range(n):
        t = t0 + (idx0 + i) * dt
        mu = _mu_batch(code, acode, tflag, sizes, fvec, freqs, bcode, bfvec,
                       kw, keta, x[None, :], t, s_has, s_val)[0]
        if not np.all(np.isfinite(mu)):
            return STATUS_NONFINITE, i, count, ev_ptr, s_has, s_val
        a = float(x[0])
        b = a + float(mu[0]) * dt + sdt * float(z[i, 0])
        x[0] = b
        is_event = False
        tc = 0.0
        if b == 0.0:
            is_event = True
            tc = t0 + (idx0 + i + 1) * dt
        elif a * b < 0.0:
            is_event = True
            tc = t0 + (idx0 + i) * dt + dt * (abs(a) / (abs(a) + abs(b)))
        elif use_sub == 1 and a * b > 0.0:
            if ut[i, 0] < math.exp(-2.0 * a * b / var):
                is_event = True
                tc = t0 + (idx0 + i) * dt + dt * (abs(a) / (abs(a) + abs(b)))
        if is_event:
            if have_cross[0] == 1 and (seg_max[0] >= delta or seg_fired[0] == 1):
                arr_t[count] = tc
                arr_m[count] = 0 if seg_sign[0] >= 0 else 1
                count += 1
                s_val = tc
                s_has = 1
            have_cross[0] = 1
            seg_max[0] = 0.0
            seg_sign[0] = 0
            seg_fired[0] = 0
        elif use_sub == 1:
            aa, ab = abs(a), abs(b)
            if aa < delta and ab < delta:
                if um[i, 0] < math.exp(-2.0 * (delta - aa) * (delta - ab) / var):
                    seg_fired[0] = 1
        ab = abs(b)
        if ab > seg_max[0]:
            seg_max[0] = ab
        if seg_sign[0] == 0 and b != 0.0:
            seg_sign[0] = 1 if b > 0.0 else -1
    return STATUS_OK, -1, count, ev_ptr, s_has, s_val
