"""Pure-numpy twins of the numba kernels.

Signatures match ``_numba``.  Loops run over events or time steps in
vectorized chunks; the same counter-based uniforms are used wherever the
computation consumes them in a fixed layout, so the two families agree up to
floating-point summation order.  Thinning samplers use the cluster
representation instead of sequential thinning (same law, different draws).
"""

import math

import numpy as np

from ..rng import generator, stream_key, uniforms

SLOTS = 4
_TWO_PI = 2.0 * math.pi
DEBYE_MIN_ORDER = 50.0
_CHUNK = 1 << 16


# --------------------------------------------------------------------------
# marks
# --------------------------------------------------------------------------

def _marks_block(key, start, count, cum_p, law_code, law_a, law_b):
    idx = np.arange(start, start + count, dtype=np.uint64) * np.uint64(SLOTS)
    u1 = uniforms(key, idx + np.uint64(1))
    j = np.searchsorted(cum_p[:5], u1, side="left").astype(np.int64)
    code = law_code[j]
    size = law_a[j].astype(np.float64)
    draw = code != 0
    if draw.any():
        u2 = uniforms(key, idx[draw] + np.uint64(2))
        c = code[draw]
        a = law_a[j[draw]]
        b = law_b[j[draw]]
        out = np.empty(u2.shape)
        m = c == 1
        out[m] = -a[m] * np.log(u2[m])
        m = c == 2
        if m.any():
            p = 1.0 / a[m]
            g = 1.0 + np.floor(np.log(u2[m]) / np.log1p(-np.minimum(p, 1.0 - 1e-300)))
            out[m] = np.where(p >= 1.0, 1.0, g)
        m = c == 3
        if m.any():
            u3 = uniforms(key, idx[draw][m] + np.uint64(3))
            out[m] = np.exp(a[m] + b[m] * np.sqrt(-2.0 * np.log(u2[m])) * np.cos(_TWO_PI * u3))
        size[draw] = out
    return j, size


def sample_marks(seed, stream, count, cum_p, law_code, law_a, law_b, out_type, out_size):
    key = stream_key(seed, stream)
    for start in range(0, count, _CHUNK):
        m = min(_CHUNK, count - start)
        j, v = _marks_block(key, start, m, cum_p, law_code, law_a, law_b)
        out_type[start:start + m] = j
        out_size[start:start + m] = v


# --------------------------------------------------------------------------
# queue dynamics
# --------------------------------------------------------------------------

def _cancel_share_array(ratio, uniform, knot_y):
    if uniform:
        return ratio
    grid = np.linspace(0.0, 1.0, knot_y.shape[0])
    return np.interp(np.clip(ratio, 0.0, 1.0), grid, knot_y)


def _affine_scan(start, factor, shift, block=256):
    """x_k = factor_k * x_{k-1} + shift_k.

    Each short block is solved with cumulative products; blocks are chained
    sequentially so the products never underflow.
    """
    out = np.empty_like(shift)
    x = start
    for lo in range(0, shift.shape[0], block):
        f = factor[lo:lo + block]
        g = shift[lo:lo + block]
        prod = np.cumprod(f)
        if np.all(np.abs(prod) > 1e-150):
            seg = prod * (x + np.cumsum(g / prod))
        else:
            seg = np.empty_like(g)
            for k in range(g.shape[0]):
                x = f[k] * x + g[k]
                seg[k] = x
        out[lo:lo + block] = seg
        x = seg[-1]
    return out


def _queue_states(types, sizes, n, qb0, qa0, z0):
    """Uniform-cancellation states after each event ignoring the stop rule."""
    d = sizes / n
    db = np.where(types == 0, d, np.where((types == 1) | (types == 2), -d, 0.0))
    da = np.where(types == 3, d, np.where(types >= 4, -d, 0.0))
    qb = np.cumsum(np.concatenate(([qb0], db)))
    qa = np.cumsum(np.concatenate(([qa0], da)))
    # gap G = Q^b - Z: type 1 adds d, type 3 scales by (1 - d/Q^b(t-)), type 2 leaves it
    d3 = np.where(types == 2, d, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = 1.0 - d3 / qb[:-1]
    add = np.where(types == 0, d, 0.0)
    gap = _affine_scan(qb0 - z0, shrink, add)
    z = qb[1:] - gap
    return qb[1:], qa[1:], z


def _first_stop(qb, qa, z):
    bad = (qb <= 0.0) | (qa <= 0.0) | (z <= 0.0)
    if not bad.any():
        return -1
    return int(np.argmax(bad))


def _python_loop(types, sizes, times, n, qb, qa, z, alive, cancel_uniform, knot_y, record):
    """Sequential fallback for non-uniform cancellation profiles."""
    m = types.shape[0]
    out = np.empty((m, 3))
    taus = [np.inf, np.inf, np.inf]
    viol = 0
    for i in range(m):
        if alive:
            d = sizes[i] / n
            j = types[i]
            if j == 0:
                qb += d
            elif j == 1:
                qb -= d
                z -= d
            elif j == 2:
                share = float(_cancel_share_array(np.array([z / qb]), cancel_uniform, knot_y)[0])
                qb -= d
                z -= d * share
            elif j == 3:
                qa += d
            else:
                qa -= d
            if qb <= 0.0 or qa <= 0.0 or z <= 0.0:
                alive = False
                if qb <= 0.0:
                    taus[0] = times[i]
                    viol += int(z > 0.0)
                if qa <= 0.0:
                    taus[1] = times[i]
                if z <= 0.0:
                    taus[2] = times[i]
            elif z > qb:
                viol += 1
        out[i] = (qb, qa, z)
        if not alive and not record:
            out = out[: i + 1]
            break
    return out, taus, viol, alive, qb, qa, z


def _poisson_times(key, rate, horizon):
    chunks = []
    t0 = 0.0
    start = 0
    while True:
        m = max(1024, int(1.2 * rate * max(horizon - t0, 0.0)) + 64)
        idx = np.arange(start, start + m, dtype=np.uint64) * np.uint64(SLOTS)
        gaps = -np.log(uniforms(key, idx)) / rate
        t = t0 + np.cumsum(gaps)
        keep = t <= horizon
        if not keep.all():
            chunks.append(t[keep])
            break
        chunks.append(t)
        t0 = t[-1]
        start += m
    return np.concatenate(chunks) if chunks else np.empty(0)


def lob_run(mode, times, seed, stream, n, lam, alpha_q, beta_q, horizon,
            cum_p, law_code, law_a, law_b, qb0, qa0, z0, cancel_uniform, knot_y,
            record, stop_early, out_t, out_type, out_size, out_qb, out_qa, out_z):
    key = stream_key(seed, stream)
    cap = out_t.shape[0]
    if mode == 1 and (alpha_q != 0.0 or beta_q != 0.0):
        return _lob_state_dependent(key, n, lam, alpha_q, beta_q, horizon, cum_p, law_code,
                                    law_a, law_b, qb0, qa0, z0, cancel_uniform, knot_y,
                                    record, stop_early, out_t, out_type, out_size,
                                    out_qb, out_qa, out_z)
    if mode == 2:
        ev_t = np.asarray(times, dtype=np.float64)
        ev_t = ev_t[ev_t <= horizon]
    else:
        ev_t = _poisson_times(key, n * lam, horizon)
    m = ev_t.shape[0]
    types, sizes = _marks_block(key, 0, m, cum_p, law_code, law_a, law_b)
    taus = [np.inf, np.inf, np.inf]
    alive0 = qb0 > 0.0 and qa0 > 0.0 and z0 > 0.0
    if not alive0:
        taus = [0.0 if qb0 <= 0.0 else np.inf, 0.0 if qa0 <= 0.0 else np.inf,
                0.0 if z0 <= 0.0 else np.inf]
    viol = 0
    if not alive0:
        states = np.tile([qb0, qa0, z0], (m, 1))
        final = (qb0, qa0, z0)
        if stop_early:
            m = 0
    elif cancel_uniform:
        qb, qa, z = _queue_states(types, sizes, n, qb0, qa0, z0)
        k = _first_stop(qb, qa, z)
        if k >= 0:
            qb[k + 1:] = qb[k]
            qa[k + 1:] = qa[k]
            z[k + 1:] = z[k]
            if qb[k] <= 0.0:
                taus[0] = ev_t[k]
                viol += int(z[k] > 0.0)
            if qa[k] <= 0.0:
                taus[1] = ev_t[k]
            if z[k] <= 0.0:
                taus[2] = ev_t[k]
            if stop_early:
                m = k + 1
        live = slice(0, k if k >= 0 else m)
        viol += int(np.count_nonzero(z[live] > qb[live]))
        states = np.column_stack((qb, qa, z))
        final = tuple(states[m - 1]) if m > 0 else (qb0, qa0, z0)
    else:
        states, taus, viol, _, *final = _python_loop(types, sizes, ev_t, n, qb0, qa0, z0, True,
                                                     cancel_uniform, knot_y, record or not stop_early)
        final = tuple(final)
        if stop_early:
            m = min(m, states.shape[0])
    overflow = False
    if record:
        if m > cap:
            return cap, True, taus[0], taus[1], taus[2], final[0], final[1], final[2], viol
        out_t[:m] = ev_t[:m]
        out_type[:m] = types[:m]
        out_size[:m] = sizes[:m]
        out_qb[:m] = states[:m, 0]
        out_qa[:m] = states[:m, 1]
        out_z[:m] = states[:m, 2]
    return m, overflow, taus[0], taus[1], taus[2], final[0], final[1], final[2], viol


def _lob_state_dependent(key, n, lam, alpha_q, beta_q, horizon, cum_p, law_code, law_a, law_b,
                         qb0, qa0, z0, cancel_uniform, knot_y, record, stop_early,
                         out_t, out_type, out_size, out_qb, out_qa, out_z):
    # the clock depends on the state, so events are generated one at a time
    cap = out_t.shape[0]
    qb, qa, z = qb0, qa0, z0
    taus = [np.inf, np.inf, np.inf]
    alive = qb > 0.0 and qa > 0.0 and z > 0.0
    if not alive:
        taus = [0.0 if qb <= 0.0 else np.inf, 0.0 if qa <= 0.0 else np.inf,
                0.0 if z <= 0.0 else np.inf]
    t = 0.0
    i = 0
    count = 0
    viol = 0
    block_j = block_v = None
    while True:
        if not alive and stop_early:
            break
        rate = n * (lam + alpha_q * qa + beta_q * qb)
        t += -math.log(float(uniforms(key, np.array([SLOTS * i]))[0])) / rate
        if t > horizon:
            break
        if i % 1024 == 0:
            block_j, block_v = _marks_block(key, i, 1024, cum_p, law_code, law_a, law_b)
        j = int(block_j[i % 1024])
        v = float(block_v[i % 1024])
        if alive:
            res, tt, vv, alive, qb, qa, z = _python_loop(
                np.array([j]), np.array([v]), np.array([t]), n, qb, qa, z, True,
                cancel_uniform, knot_y, True)
            viol += vv
            taus = [min(a, b) for a, b in zip(taus, tt)]
        if record:
            if count >= cap:
                return count, True, taus[0], taus[1], taus[2], qb, qa, z, viol
            out_t[count] = t
            out_type[count] = j
            out_size[count] = v
            out_qb[count] = qb
            out_qa[count] = qa
            out_z[count] = z
        count += 1
        i += 1
    return count, False, taus[0], taus[1], taus[2], qb, qa, z, viol


def chain_batch(seed, stream0, paths, cum_p, law_code, law_a, law_b, n,
                qb0, qa0, z0, max_events, checkpoints, out_counts, out_states, out_viol):
    checkpoints = np.asarray(checkpoints, dtype=np.int64)
    need = int(checkpoints.max()) if checkpoints.size else 0
    for p in range(paths):
        key = stream_key(seed, stream0 + p)
        qb, qa, z = qb0, qa0, z0
        counts = [0, 0, 0]
        viol = 0
        done = 0
        history = [np.array([[qb0, qa0, z0]])]
        alive = qb > 0.0 and qa > 0.0 and z > 0.0
        while done < max_events and (alive or done < need):
            m = min(_CHUNK, max_events - done)
            j, v = _marks_block(key, done, m, cum_p, law_code, law_a, law_b)
            if alive:
                sqb, sqa, sz = _queue_states(j, v, n, qb, qa, z)
                k = _first_stop(sqb, sqa, sz)
                live = slice(0, k if k >= 0 else m)
                viol += int(np.count_nonzero(sz[live] > sqb[live]))
                if k >= 0:
                    alive = False
                    sqb[k + 1:] = sqb[k]
                    sqa[k + 1:] = sqa[k]
                    sz[k + 1:] = sz[k]
                    if sqb[k] <= 0.0:
                        counts[0] = done + k + 1
                        viol += int(sz[k] > 0.0)
                    if sqa[k] <= 0.0:
                        counts[1] = done + k + 1
                    if sz[k] <= 0.0:
                        counts[2] = done + k + 1
                block = np.column_stack((sqb, sqa, sz))
                qb, qa, z = block[-1]
            else:
                block = np.tile([qb, qa, z], (m, 1))
            history.append(block)
            done += m
        hist = np.concatenate(history)
        for c, cp in enumerate(checkpoints):
            out_states[p, c] = hist[min(int(cp), hist.shape[0] - 1)]
        out_counts[p] = counts
        out_viol[p] = viol


# --------------------------------------------------------------------------
# arrival processes (cluster representation)
# --------------------------------------------------------------------------

def _cluster(rng, immigrants, mean_children, decay, horizon):
    events = [immigrants]
    gen = immigrants
    while gen.size:
        kids = rng.poisson(mean_children, size=gen.size)
        parents = np.repeat(gen, kids)
        gen = parents + rng.exponential(1.0 / decay, size=parents.size)
        gen = gen[gen <= horizon]
        events.append(gen)
    return np.concatenate(events)


def hawkes_times(seed, stream, nu, a_h, b_h, horizon, burn_in, out):
    rng = generator(seed, stream, salt=1)
    span = horizon + burn_in
    base = -burn_in + span * rng.random(rng.poisson(nu * span))
    ev = _cluster(rng, base, a_h / b_h, b_h, horizon)
    ev = np.sort(ev[ev >= 0.0])
    if ev.size > out.shape[0]:
        return out.shape[0], True
    out[: ev.size] = ev
    return ev.size, False


def cox_times(seed, stream, nu, rho_s, kappa, delta_s, horizon, burn_in, out):
    rng = generator(seed, stream, salt=2)
    span = horizon + burn_in
    base = horizon * rng.random(rng.poisson(nu * horizon))
    shots = -burn_in + span * rng.random(rng.poisson(rho_s * span))
    kids = rng.poisson(kappa / delta_s, size=shots.size)
    ev = np.repeat(shots, kids) + rng.exponential(1.0 / delta_s, size=int(kids.sum()))
    ev = np.concatenate((base, ev[(ev >= 0.0) & (ev <= horizon)]))
    ev.sort()
    if ev.size > out.shape[0]:
        return out.shape[0], True
    out[: ev.size] = ev
    return ev.size, False

# --------------------------------------------------------------------------
# diffusion exit and the correlated sign chain
# --------------------------------------------------------------------------

def exit_euler(seed, stream0, paths, x0, y0, kx, ky, alpha, dt, t_max, out_time, out_side):
    sa, ca = math.sin(alpha), math.cos(alpha)
    sq = math.sqrt(dt)
    n_steps = int(math.ceil(t_max / dt - 1e-9))
    keys = np.array([stream_key(seed, stream0 + p) for p in range(paths)], dtype=np.uint64)
    x = np.full(paths, float(x0))
    y = np.full(paths, float(y0))
    d0 = y.copy()
    d1 = x * sa - y * ca
    out_time[:paths] = np.inf
    out_side[:paths] = -1
    live = np.arange(paths)
    with np.errstate(over="ignore"):
        for s in range(n_steps):
            if live.size == 0:
                break
            k = keys[live]
            base = np.uint64(4 * s)
            u1 = _keyed_uniform(k, base)
            u2 = _keyed_uniform(k, base + np.uint64(1))
            rad = np.sqrt(-2.0 * np.log(u1))
            x[live] += kx * dt + sq * rad * np.cos(_TWO_PI * u2)
            y[live] += ky * dt + sq * rad * np.sin(_TWO_PI * u2)
            e0 = y[live]
            e1 = x[live] * sa - y[live] * ca
            side = np.full(live.size, -1)
            out = (e0 <= 0.0) | (e1 <= 0.0)
            side[out] = np.where(e0[out] <= e1[out], 0, 1)
            a0 = 2.0 * d0[live] * e0 / dt
            a1 = 2.0 * d1[live] * e1 / dt
            rest = ~out
            c0 = rest & (a0 < 40.0)
            if c0.any():
                hit = np.zeros(live.size, dtype=bool)
                hit[c0] = _keyed_uniform(k[c0], base + np.uint64(2)) < np.exp(-a0[c0])
                side[hit] = 0
                rest &= ~hit
            c1 = rest & (a1 < 40.0)
            if c1.any():
                hit = np.zeros(live.size, dtype=bool)
                hit[c1] = _keyed_uniform(k[c1], base + np.uint64(3)) < np.exp(-a1[c1])
                side[hit] = 1
            gone = side >= 0
            out_time[live[gone]] = (s + 1) * dt
            out_side[live[gone]] = side[gone]
            d0[live] = e0
            d1[live] = e1
            live = live[~gone]


def _keyed_uniform(keys, counter):
    from ..rng import GOLDEN, INV53, _mix64_array
    with np.errstate(over="ignore"):
        z = _mix64_array(keys + (np.uint64(counter) + np.uint64(1)) * GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * INV53


def sign_chain(seed, stream0, paths, n_steps, p_up0, flip_up, flip_down, out_up, out_last):
    # vectorized across paths, sequential in time
    for start in range(0, paths, _CHUNK):
        stop = min(paths, start + _CHUNK)
        keys = np.array([stream_key(seed, stream0 + p) for p in range(start, stop)], dtype=np.uint64)
        x = np.where(uniforms(keys, 0) < p_up0, 1, -1)
        up = (x > 0).astype(np.int64)
        for i in range(1, n_steps):
            flip = np.where(x > 0, flip_up, flip_down)
            x = np.where(uniforms(keys, i) < flip, -x, x)
            up += x > 0
        out_up[start:stop] = up
        out_last[start:stop] = x


# --------------------------------------------------------------------------
# exponentially scaled modified Bessel function of the first kind
# --------------------------------------------------------------------------

def _ive_series(nu, x):
    out = np.zeros_like(x)
    zero = x == 0.0
    out[zero & (nu == 0.0)] = 1.0
    idx = np.nonzero(~zero)[0]
    if idx.size == 0:
        return out
    nu_i, x_i = nu[idx], x[idx]
    q = 0.25 * x_i * x_i
    term = np.ones_like(x_i)
    total = np.ones_like(x_i)
    log_scale = np.zeros_like(x_i)
    active = np.ones(x_i.shape, dtype=bool)
    k = 0
    while active.any():
        k += 1
        a = active
        term[a] *= q[a] / (k * (nu_i[a] + k))
        total[a] += term[a]
        big = a & (total > 1e250)
        total[big] *= 1e-250
        term[big] *= 1e-250
        log_scale[big] += 575.6462732485114
        active = a & ~((term < 1e-17 * total) & (k > q / (nu_i + 1.0)))
    from scipy.special import gammaln
    log_pref = nu_i * np.log(0.5 * x_i) - gammaln(nu_i + 1.0) - x_i
    out[idx] = np.exp(log_pref + log_scale + np.log(total))
    return out


def _ive_hankel(nu, x):
    mu = 4.0 * nu * nu
    term = np.ones_like(x)
    total = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    k = 0
    while active.any():
        k += 1
        odd = 2.0 * k - 1.0
        nxt = -term * (mu - odd * odd) / (8.0 * k * x)
        stop = active & ((nxt == 0.0) | (np.abs(nxt) > np.abs(term)))
        go = active & ~stop
        total[go] += nxt[go]
        term[go] = nxt[go]
        active = go & ~(np.abs(term) < 1e-17 * np.abs(total))
    return total / np.sqrt(_TWO_PI * x)


def _ive_debye(nu, x, coeffs):
    out = np.zeros_like(x)
    pos = x > 0.0
    nu, x = nu[pos], x[pos]
    z = x / nu
    sq = np.sqrt(1.0 + z * z)
    p = 1.0 / sq
    expo = nu / (sq + z) + nu * (np.log(z) - np.log1p(sq))
    total = np.zeros_like(x)
    inv = np.ones_like(x)
    for k in range(coeffs.shape[0]):
        acc = np.zeros_like(x)
        for m in range(coeffs.shape[1] - 1, -1, -1):
            acc = acc * p + coeffs[k, m]
        total += acc * inv
        inv = inv / nu
    out[pos] = np.exp(expo) * total / np.sqrt(_TWO_PI * nu * sq)
    return out


def ive_many(nu, x, coeffs, out):
    small = x <= np.maximum(30.0, 0.25 * nu * nu)
    debye = (nu >= DEBYE_MIN_ORDER) | (~small & (nu >= 1.0))
    series = ~debye & small
    hankel = ~debye & ~small
    if debye.any():
        out[debye] = _ive_debye(nu[debye], x[debye], coeffs)
    if series.any():
        out[series] = _ive_series(nu[series], x[series])
    if hankel.any():
        out[hankel] = _ive_hankel(nu[hankel], x[hankel])
