"""numba kernels: event loops, thinning, exit simulation, Bessel evaluation.

Every kernel here has a vectorized twin in ``_numpy`` with the same signature.
Uniform draws follow the per-event slot layout documented in ``rng``.
"""

import math

import numba
import numpy as np

from ..rng import GOLDEN, INV53, _M1, _M2, _ONE, _S11, _S27, _S30, _S31, _STREAM_SALT


# compiled copies of the rng recipe so these kernels work under either backend
@numba.njit(cache=True, nogil=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True, nogil=True)
def key_of(seed, stream):
    return _mix64(seed ^ _mix64(stream + _STREAM_SALT))


@numba.njit(cache=True, nogil=True)
def uniform_at(key, counter):
    x = _mix64(key + (counter + _ONE) * GOLDEN)
    return (np.float64(x >> _S11) + 0.5) * INV53

SLOTS = 4
_INF = np.inf
_TWO_PI = 2.0 * math.pi


# --------------------------------------------------------------------------
# marks
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _draw_type(u, cum_p):
    j = 0
    while j < 5 and u > cum_p[j]:
        j += 1
    return j


@numba.njit(cache=True, nogil=True)
def _draw_size(code, pa, pb, u2, u3):
    if code == 0:
        return pa
    if code == 1:
        return -pa * math.log(u2)
    if code == 2:
        p = 1.0 / pa
        if p >= 1.0:
            return 1.0
        return 1.0 + math.floor(math.log(u2) / math.log1p(-p))
    return math.exp(pa + pb * math.sqrt(-2.0 * math.log(u2)) * math.cos(_TWO_PI * u3))


@numba.njit(cache=True, nogil=True)
def _mark(key, i, cum_p, law_code, law_a, law_b):
    base = np.uint64(SLOTS) * np.uint64(i)
    j = _draw_type(uniform_at(key, base + np.uint64(1)), cum_p)
    code = law_code[j]
    if code == 0:
        return j, law_a[j]
    u2 = uniform_at(key, base + np.uint64(2))
    u3 = 0.5
    if code == 3:
        u3 = uniform_at(key, base + np.uint64(3))
    return j, _draw_size(code, law_a[j], law_b[j], u2, u3)


@numba.njit(cache=True, nogil=True)
def sample_marks(seed, stream, count, cum_p, law_code, law_a, law_b, out_type, out_size):
    key = key_of(np.uint64(seed), np.uint64(stream))
    for i in range(count):
        j, v = _mark(key, i, cum_p, law_code, law_a, law_b)
        out_type[i] = j
        out_size[i] = v


# --------------------------------------------------------------------------
# queue dynamics
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _cancel_share(ratio, uniform, knot_y):
    if uniform:
        return ratio
    if ratio <= 0.0:
        return knot_y[0]
    m = knot_y.shape[0] - 1
    if ratio >= 1.0:
        return knot_y[m]
    s = ratio * m
    k = int(s)
    if k >= m:
        k = m - 1
    w = s - k
    return knot_y[k] + w * (knot_y[k + 1] - knot_y[k])


@numba.njit(cache=True, nogil=True)
def lob_run(mode, times, seed, stream, n, lam, alpha_q, beta_q, horizon,
            cum_p, law_code, law_a, law_b, qb0, qa0, z0, cancel_uniform, knot_y,
            record, stop_early, out_t, out_type, out_size, out_qb, out_qa, out_z):
    """Event-driven scaled queue simulation.

    mode 0: Poisson clock of rate ``n*lam``; mode 1: state-dependent rate
    ``n*(lam + alpha_q*Q^a + beta_q*Q^b)`` from left limits; mode 2: event
    times supplied in ``times``.  Returns
    ``(count, overflow, tau_b, tau_a, tau_z, qb, qa, z, violations)``.
    """
    key = key_of(np.uint64(seed), np.uint64(stream))
    cap = out_t.shape[0]
    qb = qb0
    qa = qa0
    z = z0
    tau_b = _INF
    tau_a = _INF
    tau_z = _INF
    alive = qb > 0.0 and qa > 0.0 and z > 0.0
    if not alive:
        if qb <= 0.0:
            tau_b = 0.0
        if qa <= 0.0:
            tau_a = 0.0
        if z <= 0.0:
            tau_z = 0.0
    violations = 0
    t = 0.0
    i = 0
    count = 0
    overflow = False
    n_times = times.shape[0]
    while True:
        if not alive and stop_early:
            break
        if mode == 2:
            if i >= n_times:
                break
            t = times[i]
        else:
            if mode == 0:
                rate = n * lam
            else:
                rate = n * (lam + alpha_q * qa + beta_q * qb)
            u0 = uniform_at(key, np.uint64(SLOTS) * np.uint64(i))
            t += -math.log(u0) / rate
        if t > horizon:
            break
        j, v = _mark(key, i, cum_p, law_code, law_a, law_b)
        if alive:
            d = v / n
            if j == 0:
                qb += d
            elif j == 1:
                qb -= d
                z -= d
            elif j == 2:
                share = _cancel_share(z / qb, cancel_uniform, knot_y)
                qb -= d
                z -= d * share
            elif j == 3:
                qa += d
            else:
                qa -= d
            if qb <= 0.0 or qa <= 0.0 or z <= 0.0:
                alive = False
                if qb <= 0.0:
                    tau_b = t
                    if z > 0.0:
                        violations += 1
                if qa <= 0.0:
                    tau_a = t
                if z <= 0.0:
                    tau_z = t
            elif z > qb:
                violations += 1
        if record:
            if count >= cap:
                overflow = True
                break
            out_t[count] = t
            out_type[count] = j
            out_size[count] = v
            out_qb[count] = qb
            out_qa[count] = qa
            out_z[count] = z
        count += 1
        i += 1
    return count, overflow, tau_b, tau_a, tau_z, qb, qa, z, violations


@numba.njit(cache=True, nogil=True)
def chain_batch(seed, stream0, paths, cum_p, law_code, law_a, law_b, n,
                qb0, qa0, z0, max_events, checkpoints, out_counts, out_states, out_viol):
    """Embedded jump chain of the Poisson-clock queue, many paths.

    For path ``p`` (stream ``stream0 + p``) records the 1-based event count at
    which Q^b, Q^a, Z first become nonpositive (0 if never within
    ``max_events``) and the state after each count in ``checkpoints``.
    """
    n_chk = checkpoints.shape[0]
    for p in range(paths):
        key = key_of(np.uint64(seed), np.uint64(stream0 + p))
        qb = qb0
        qa = qa0
        z = z0
        alive = qb > 0.0 and qa > 0.0 and z > 0.0
        kb = 0
        ka = 0
        kz = 0
        viol = 0
        c = 0
        while c < n_chk and checkpoints[c] == 0:
            out_states[p, c, 0] = qb
            out_states[p, c, 1] = qa
            out_states[p, c, 2] = z
            c += 1
        i = 0
        while i < max_events and (alive or c < n_chk):
            if alive:
                j, v = _mark(key, i, cum_p, law_code, law_a, law_b)
                d = v / n
                if j == 0:
                    qb += d
                elif j == 1:
                    qb -= d
                    z -= d
                elif j == 2:
                    r = z / qb
                    qb -= d
                    z -= d * r
                elif j == 3:
                    qa += d
                else:
                    qa -= d
                if qb <= 0.0 or qa <= 0.0 or z <= 0.0:
                    alive = False
                    if qb <= 0.0:
                        kb = i + 1
                        if z > 0.0:
                            viol += 1
                    if qa <= 0.0:
                        ka = i + 1
                    if z <= 0.0:
                        kz = i + 1
                elif z > qb:
                    viol += 1
            i += 1
            while c < n_chk and checkpoints[c] == i:
                out_states[p, c, 0] = qb
                out_states[p, c, 1] = qa
                out_states[p, c, 2] = z
                c += 1
        while c < n_chk:
            out_states[p, c, 0] = qb
            out_states[p, c, 1] = qa
            out_states[p, c, 2] = z
            c += 1
        out_counts[p, 0] = kb
        out_counts[p, 1] = ka
        out_counts[p, 2] = kz
        out_viol[p] = viol


# --------------------------------------------------------------------------
# arrival processes
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def hawkes_times(seed, stream, nu, a_h, b_h, horizon, burn_in, out):
    """Ogata thinning for intensity nu + sum a_h*exp(-b_h*(t - t_i))."""
    key = key_of(np.uint64(seed), np.uint64(stream))
    cap = out.shape[0]
    t = -burn_in
    excite = 0.0
    i = 0
    count = 0
    while True:
        bound = nu + excite
        w = -math.log(uniform_at(key, np.uint64(2 * i))) / bound
        u = uniform_at(key, np.uint64(2 * i + 1))
        i += 1
        t += w
        if t > horizon:
            break
        excite *= math.exp(-b_h * w)
        if u * bound <= nu + excite:
            excite += a_h
            if t >= 0.0:
                if count >= cap:
                    return count, True
                out[count] = t
                count += 1
    return count, False


@numba.njit(cache=True, nogil=True)
def cox_times(seed, stream, nu, rho_s, kappa, delta_s, horizon, burn_in, out):
    """Thinning for nu + shot noise with shots at rate rho_s, kernel kappa*exp(-delta_s*t)."""
    key = key_of(np.uint64(seed), np.uint64(stream))
    shot_key = key_of(np.uint64(seed) ^ np.uint64(0xA5A5A5A5A5A5A5A5), np.uint64(stream))
    cap = out.shape[0]
    t = -burn_in
    shot_i = 0
    next_shot = t - math.log(uniform_at(shot_key, np.uint64(shot_i))) / rho_s
    shot_i += 1
    excite = 0.0
    i = 0
    count = 0
    while True:
        bound = nu + excite
        w = -math.log(uniform_at(key, np.uint64(2 * i))) / bound
        u = uniform_at(key, np.uint64(2 * i + 1))
        i += 1
        cand = t + w
        if next_shot < cand and next_shot <= horizon:
            excite = excite * math.exp(-delta_s * (next_shot - t)) + kappa
            t = next_shot
            next_shot = t - math.log(uniform_at(shot_key, np.uint64(shot_i))) / rho_s
            shot_i += 1
            continue
        if cand > horizon:
            break
        excite *= math.exp(-delta_s * w)
        t = cand
        if u * bound <= nu + excite and t >= 0.0:
            if count >= cap:
                return count, True
            out[count] = t
            count += 1
    return count, False


# --------------------------------------------------------------------------
# diffusion exit and the correlated sign chain
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def exit_euler(seed, stream0, paths, x0, y0, kx, ky, alpha, dt, t_max, out_time, out_side):
    """Euler steps of planar BM with drift (kx, ky) in the wedge 0 < theta < alpha.

    Brownian-bridge crossing probabilities exp(-2 d d' / dt) correct each step
    for excursions between grid points.  Side 0 is theta = 0, side 1 is
    theta = alpha; -1 means still inside at ``t_max``.
    """
    sa = math.sin(alpha)
    ca = math.cos(alpha)
    sq = math.sqrt(dt)
    n_steps = int(math.ceil(t_max / dt - 1e-9))
    for p in range(paths):
        key = key_of(np.uint64(seed), np.uint64(stream0 + p))
        x = x0
        y = y0
        d0 = y
        d1 = x * sa - y * ca
        side = -1
        tt = _INF
        for s in range(n_steps):
            base = np.uint64(4) * np.uint64(s)
            u1 = uniform_at(key, base)
            u2 = uniform_at(key, base + np.uint64(1))
            rad = math.sqrt(-2.0 * math.log(u1))
            x += kx * dt + sq * rad * math.cos(_TWO_PI * u2)
            y += ky * dt + sq * rad * math.sin(_TWO_PI * u2)
            e0 = y
            e1 = x * sa - y * ca
            if e0 <= 0.0 or e1 <= 0.0:
                side = 0 if e0 <= e1 else 1
                tt = (s + 1) * dt
                break
            a0 = 2.0 * d0 * e0 / dt
            a1 = 2.0 * d1 * e1 / dt
            if a0 < 40.0 and uniform_at(key, base + np.uint64(2)) < math.exp(-a0):
                side = 0
                tt = (s + 1) * dt
                break
            if a1 < 40.0 and uniform_at(key, base + np.uint64(3)) < math.exp(-a1):
                side = 1
                tt = (s + 1) * dt
                break
            d0 = e0
            d1 = e1
        out_time[p] = tt
        out_side[p] = side


@numba.njit(cache=True, nogil=True)
def sign_chain(seed, stream0, paths, n_steps, p_up0, flip_up, flip_down, out_up, out_last):
    """+-1 Markov chain started at +1 w.p. ``p_up0``; flip probability depends on the state.

    Per path: number of +1 states among the ``n_steps`` and the last state.
    """
    for p in range(paths):
        key = key_of(np.uint64(seed), np.uint64(stream0 + p))
        x = 1 if uniform_at(key, np.uint64(0)) < p_up0 else -1
        up = 1 if x > 0 else 0
        for i in range(1, n_steps):
            flip = flip_up if x > 0 else flip_down
            if uniform_at(key, np.uint64(i)) < flip:
                x = -x
            if x > 0:
                up += 1
        out_up[p] = up
        out_last[p] = x


# --------------------------------------------------------------------------
# exponentially scaled modified Bessel function of the first kind
# --------------------------------------------------------------------------

DEBYE_MIN_ORDER = 50.0


@numba.njit(cache=True, nogil=True)
def _ive_series(nu, x):
    if x == 0.0:
        return 1.0 if nu == 0.0 else 0.0
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    log_scale = 0.0
    k = 0
    while True:
        k += 1
        term *= q / (k * (nu + k))
        total += term
        if total > 1e250:
            total *= 1e-250
            term *= 1e-250
            log_scale += 575.6462732485114
        if term < 1e-17 * total and k > q / (nu + 1.0):
            break
    log_pref = nu * math.log(0.5 * x) - math.lgamma(nu + 1.0) - x
    return math.exp(log_pref + log_scale + math.log(total))


@numba.njit(cache=True, nogil=True)
def _ive_hankel(nu, x):
    mu = 4.0 * nu * nu
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        odd = 2.0 * k - 1.0
        nxt = -term * (mu - odd * odd) / (8.0 * k * x)
        if nxt == 0.0 or abs(nxt) > abs(term):
            break
        total += nxt
        term = nxt
        if abs(term) < 1e-17 * abs(total):
            break
    return total / math.sqrt(_TWO_PI * x)


@numba.njit(cache=True, nogil=True)
def _ive_debye(nu, x, coeffs):
    if x == 0.0:
        return 0.0
    z = x / nu
    sq = math.sqrt(1.0 + z * z)
    p = 1.0 / sq
    expo = nu / (sq + z) + nu * (math.log(z) - math.log1p(sq))
    total = 0.0
    inv = 1.0
    for k in range(coeffs.shape[0]):
        acc = 0.0
        for m in range(coeffs.shape[1] - 1, -1, -1):
            acc = acc * p + coeffs[k, m]
        total += acc * inv
        inv /= nu
    return math.exp(expo) * total / math.sqrt(_TWO_PI * nu * sq)


@numba.njit(cache=True, nogil=True)
def ive_scalar(nu, x, coeffs):
    if nu >= DEBYE_MIN_ORDER:
        return _ive_debye(nu, x, coeffs)
    if x <= max(30.0, 0.25 * nu * nu):
        return _ive_series(nu, x)
    if nu >= 1.0:
        return _ive_debye(nu, x, coeffs)
    return _ive_hankel(nu, x)


@numba.njit(cache=True, nogil=True)
def ive_many(nu, x, coeffs, out):
    for i in range(nu.shape[0]):
        out[i] = ive_scalar(nu[i], x[i], coeffs)
