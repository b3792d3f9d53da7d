"""Compiled inner loops.

All hot per-step work lives here: the reduced (r, a, b, T) diffusion with
its exact noise factorization, the ambient angular rotation, the radial
regeneration diffusion, and the noiseless frame-geodesic integrator used
by the regression tests. Noise is consumed from pre-generated chunks so
that every trajectory is a pure function of its own counter-based stream.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# status codes returned by the run kernels
S_TIME = 0  # s reached s_end
S_LOW = 1  # r fell to stop_r_low
S_HIGH = 2  # r rose to stop_r_high
S_NOISE = 3  # noise chunk exhausted
S_BUDGET = 4  # step budget exhausted
S_CONSTRAINT = 5  # pseudo-norm discriminant went negative beyond tolerance
S_TSIGN = 6  # T changed sign inside the hole (step-size failure)

# state vector layout for reduced_run
IR, IA, IB, IT, IU, IS, ITH, IN_, ISW, IMINB, IMAXR = 0, 1, 2, 3, 4, 5, 6, 9, 12, 13, 14
STATE_LEN = 15

EF_NONE, EF_IN, EF_OUT = 0, 1, 2


@njit(cache=True)
def _rotate_pair(th, nn, w0, w1, w2):
    """Rodrigues-rotate the orthonormal pair (theta, n) by the vector angle w."""
    ang = math.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    if ang < 1e-300:
        return
    k0, k1, k2 = w0 / ang, w1 / ang, w2 / ang
    c, s = math.cos(ang), math.sin(ang)
    for v in (th, nn):
        d = k0 * v[0] + k1 * v[1] + k2 * v[2]
        cx0 = k1 * v[2] - k2 * v[1]
        cx1 = k2 * v[0] - k0 * v[2]
        cx2 = k0 * v[1] - k1 * v[0]
        v0 = v[0] * c + cx0 * s + k0 * d * (1.0 - c)
        v1 = v[1] * c + cx1 * s + k1 * d * (1.0 - c)
        v2 = v[2] * c + cx2 * s + k2 * d * (1.0 - c)
        v[0], v[1], v[2] = v0, v1, v2


@njit(cache=True)
def _drift(r, a, b, T, R, s2):
    """Deterministic drift of (r, a, b, T); s2 = sigma^2."""
    dr = T
    dT = 1.5 * s2 * T + (r - 1.5 * R) * b * b / (r**4) - 0.5 * R / (r * r)
    da = 1.5 * s2 * a
    db = 1.5 * s2 * b + 0.5 * s2 * r * r / b
    return dr, da, db, dT


@njit(cache=True)
def reduced_run(state, noise, pars, rec, nrec_cap, rec_stride):
    """Advance the reduced diffusion until an event fires.

    state: [r, a, b, T, u_ef, s, theta(3), n(3), swing, min_b, max_r]
    noise: (n, 4) standard normals, channels (w, beta, gamma/delta, beta_ang)
    pars: [R, sigma, h0, hmin, stop_r_low, stop_r_high, s_end, eps_T,
           ef_mode, r_floor, max_steps]
    rec: (nrec_cap, 7) rows [s, r, a, b, T, u_ef, swing]

    Returns (status, steps_used, n_recorded).
    """
    R = pars[0]
    sigma = pars[1]
    h0 = pars[2]
    hmin = pars[3]
    stop_lo = pars[4]
    stop_hi = pars[5]
    s_end = pars[6]
    eps_T = pars[7]
    ef_mode = int(pars[8])
    r_floor = pars[9]
    max_steps = int(pars[10])
    s2 = sigma * sigma

    r = state[IR]
    a = state[IA]
    b = state[IB]
    T = state[IT]
    u = state[IU]
    s = state[IS]
    th = state[ITH:ITH + 3]
    nn = state[IN_:IN_ + 3]
    swing = state[ISW]
    min_b = state[IMINB]
    max_r = state[IMAXR]
    s_comp = 0.0  # Kahan carry: dive-tail steps sink far below one ulp of s

    nmax = noise.shape[0]
    status = S_NOISE
    used = 0
    nrec = 0

    for i in range(nmax):
        if used >= max_steps:
            status = S_BUDGET
            break
        # adaptive step from the local rates
        rate = 1.0 + abs(T) / max(r, r_floor) + b / (r * r) + R / (r * r)
        h = h0 / rate
        if h < hmin:
            h = hmin
        if s + h > s_end:
            h = s_end - s
            if h <= 0.0:
                status = S_TIME
                break

        # midpoint stage for the drift
        d1r, d1a, d1b, d1T = _drift(r, a, b, T, R, s2)
        rm = r + 0.5 * h * d1r
        if rm <= 0.0:
            rm = 0.5 * r
        bm = b + 0.5 * h * d1b
        if bm <= 0.0:
            bm = 0.5 * b
        d2r, d2a, d2b, d2T = _drift(rm, a + 0.5 * h * d1a, bm, T + 0.5 * h * d1T, R, s2)
        r_n = r + h * d2r
        a_n = a + h * d2a
        b_n = b + h * d2b
        T_n = T + h * d2T

        if r_n <= 0.0:
            r_n = 1e-3 * r  # grazing the singularity; the stop check below fires

        if sigma > 0.0:
            sq = sigma * math.sqrt(h)
            xw = noise[i, 0]
            xb = noise[i, 1]
            xg = noise[i, 2]
            f = 1.0 - R / r
            # exact factorization of the covariation K' on the constraint
            # manifold; the branch switch keeps every coefficient real
            if f >= 0.0:
                q = f / a
                rt = math.sqrt(f)
                gT = q * T / rt if rt > 0.0 else 0.0
                dMa = sq * ((a - q) * xw + (q * b / r) * xb + gT * xg)
                dMT = sq * (T * xw + rt * xg)
            else:
                g1 = math.sqrt(-f)
                qp = -f / T
                dMa = sq * (a * xw + g1 * xg)
                dMT = sq * ((T - qp) * xw + (qp * b / r) * xb + (qp * a / g1) * xg)
            a_n += dMa
            T_n += dMT
            # b through b^2: positivity-safe, same drift and covariation
            y = b_n * b_n + 2.0 * sq * b_n * (b_n * xw + r * xb) \
                + sq * sq * (b_n * b_n + r * r)
            yf = 1e-4 * sq * sq * r * r
            if y < yf:
                y = yf
            b_n = math.sqrt(y)

        # restore the pseudo-norm constraint
        f_n = 1.0 - R / r_n
        disc = a_n * a_n - f_n * (1.0 + b_n * b_n / (r_n * r_n))
        if (abs(T_n) >= eps_T or f_n < 0.0) and disc >= 0.0:
            T_sign = 1.0 if T_n > 0.0 else -1.0
            T_corr = T_sign * math.sqrt(disc)
            if f_n < 0.0 and T_corr * T != 0.0 and (T_corr > 0.0) != (T > 0.0):
                status = S_TSIGN
                break
            T_n = T_corr
        elif disc < 0.0 and f_n < 0.0:
            # analytically impossible inside (disc = a^2 + positive)
            status = S_CONSTRAINT
            break
        elif disc < -0.5 * (a_n * a_n + abs(f_n) * (1.0 + b_n * b_n / (r_n * r_n)) + 1.0):
            # not a turning-point overshoot: something is badly wrong
            status = S_CONSTRAINT
            break
        else:
            # turning point: T is ill-conditioned, correct a instead
            a_sign = 1.0 if a_n >= 0.0 else -1.0
            a_n = a_sign * math.sqrt(max(0.0, T_n * T_n + f_n * (1.0 + b_n * b_n / (r_n * r_n))))

        # EF coordinate bookkeeping via the horizon-regular velocity forms
        if ef_mode == EF_IN:
            den0 = a - T
            den1 = a_n - T_n
            if den0 > 1e-14 and den1 > 1e-14:
                u += 0.5 * h * ((1.0 + b * b / (r * r)) / den0
                                + (1.0 + b_n * b_n / (r_n * r_n)) / den1)
        elif ef_mode == EF_OUT:
            den0 = a + T
            den1 = a_n + T_n
            if den0 > 1e-14 and den1 > 1e-14:
                u += 0.5 * h * ((1.0 + b * b / (r * r)) / den0
                                + (1.0 + b_n * b_n / (r_n * r_n)) / den1)

        # ambient angular pair: exact small rotation
        if sigma >= 0.0:
            ang_d = h * b / (r * r)
            ang_n = sigma * math.sqrt(h) * (r / b) * noise[i, 3]
            k0 = th[1] * nn[2] - th[2] * nn[1]
            k1 = th[2] * nn[0] - th[0] * nn[2]
            k2 = th[0] * nn[1] - th[1] * nn[0]
            _rotate_pair(th, nn,
                         ang_d * k0 + ang_n * th[0],
                         ang_d * k1 + ang_n * th[1],
                         ang_d * k2 + ang_n * th[2])
            swing += ang_d

        r, a, b, T = r_n, a_n, b_n, T_n
        yk = h - s_comp
        tk = s + yk
        s_comp = (tk - s) - yk
        s = tk
        used = i + 1
        if b < min_b:
            min_b = b
        if r > max_r:
            max_r = r

        if rec_stride > 0 and (used % rec_stride == 0) and nrec < nrec_cap:
            rec[nrec, 0] = s
            rec[nrec, 1] = r
            rec[nrec, 2] = a
            rec[nrec, 3] = b
            rec[nrec, 4] = T
            rec[nrec, 5] = u
            rec[nrec, 6] = swing
            nrec += 1

        if r <= stop_lo:
            status = S_LOW
            break
        if r >= stop_hi and T > 0.0:
            status = S_HIGH
            break
        if s >= s_end:
            status = S_TIME
            break

    state[IR] = r
    state[IA] = a
    state[IB] = b
    state[IT] = T
    state[IU] = u
    state[IS] = s
    state[ISW] = swing
    state[IMINB] = min_b
    state[IMAXR] = max_r
    return status, used, nrec


@njit(cache=True)
def regen_run(state, noise, pars, rec, nrec_cap, rec_stride):
    """Radial-time entrance diffusion from near r=0 up to r=R.

    state: [r, a, b, s, u_plus, theta(3), n(3), swing] (length 13)
    noise: (n, 3) channels (w, beta, beta_ang)
    pars: [R, sigma, dr0, a_floor_guard, max_steps]
    rec rows: [r, a, b, s, u_plus, T]

    T is the positive root of the pseudo-norm relation throughout.
    Returns (status, steps_used, n_recorded); status 2 on success (r=R),
    5 when the T=a=0 corner guard fires.
    """
    R = pars[0]
    sigma = pars[1]
    dr0 = pars[2]
    guard = pars[3]
    max_steps = int(pars[4])
    s2 = sigma * sigma

    r = state[0]
    a = state[1]
    b = state[2]
    s = state[3]
    up = state[4]
    th = state[5:8]
    nn = state[8:11]
    swing = state[11]

    nmax = noise.shape[0]
    status = S_NOISE
    used = 0
    nrec = 0

    for i in range(nmax):
        if used >= max_steps:
            status = S_BUDGET
            break
        hole = R / r - 1.0
        T = math.sqrt(a * a + hole * (b * b / (r * r) + 1.0))
        if r > 0.9 * R and T < guard:
            status = S_CONSTRAINT
            break
        # radial step: uniform in r, shrunk near the endpoints; near the
        # center the integrands vary on the scale of r itself
        dr = dr0
        if dr > r:
            dr = r
        if R - r < 4.0 * dr0:
            dr = max(0.25 * dr0, 0.25 * (R - r))
        if dr > R - r:
            dr = R - r
        ds = dr / T  # refined to a trapezoid after the (a, b) update

        # diffusion of (a, b) in the radial clock: 2x2 Cholesky of
        # (sigma^2/T) [[a^2-1+R/r, ab], [ab, b^2+r^2]]
        c = s2 / T
        A = a * a - 1.0 + R / r
        if A < 0.0:
            A = 0.0
        l11 = math.sqrt(c * A)
        l21 = c * a * b / l11 if l11 > 0.0 else 0.0
        l22s = c * (b * b + r * r) - l21 * l21
        l22 = math.sqrt(l22s) if l22s > 0.0 else 0.0
        sq = math.sqrt(dr)
        xw = noise[i, 0]
        xb = noise[i, 1]
        a_n = a + c * 1.5 * a * dr + sq * l11 * xw
        y = b + c * 0.5 * (3.0 * b + r * r / b) * dr + sq * (l21 * xw + l22 * xb)
        if y < 1e-12 * R:
            y = 1e-12 * R
        b_n = y

        # trapezoidal proper-time and null-coordinate increments
        r_n = r + dr
        T_n = math.sqrt(a_n * a_n
                        + (R / r_n - 1.0) * (b_n * b_n / (r_n * r_n) + 1.0))
        if T_n > 0.0:
            ds = 0.5 * dr * (1.0 / T + 1.0 / T_n)

        # angular transport along the regenerated leg (trapezoid in r:
        # the sweep rate b/(r^2 T) is steep near the center)
        if T_n > 0.0:
            ang_d = 0.5 * dr * (b / (r * r * T) + b_n / (r_n * r_n * T_n))
        else:
            ang_d = ds * b / (r * r)
        ang_n = sigma * math.sqrt(ds) * (r / b) * noise[i, 2]
        k0 = th[1] * nn[2] - th[2] * nn[1]
        k1 = th[2] * nn[0] - th[0] * nn[2]
        k2 = th[0] * nn[1] - th[1] * nn[0]
        _rotate_pair(th, nn,
                     ang_d * k0 + ang_n * th[0],
                     ang_d * k1 + ang_n * th[1],
                     ang_d * k2 + ang_n * th[2])
        swing += ang_d

        # outgoing null coordinate: du/dr = (1 + b^2/r^2)/((a + T) T)
        den0 = a + T
        den1 = a_n + T_n
        if den0 > 1e-14 and den1 > 1e-14 and T_n > 0.0:
            up += 0.5 * dr * ((1.0 + b * b / (r * r)) / (den0 * T)
                              + (1.0 + b_n * b_n / (r_n * r_n)) / (den1 * T_n))

        r += dr
        a, b = a_n, b_n
        s += ds
        used = i + 1

        if rec_stride > 0 and (used % rec_stride == 0) and nrec < nrec_cap:
            rec[nrec, 0] = r
            rec[nrec, 1] = a
            rec[nrec, 2] = b
            rec[nrec, 3] = s
            rec[nrec, 4] = up
            rec[nrec, 5] = T_n
            nrec += 1

        if r >= R:
            status = S_HIGH
            break

    state[0] = r
    state[1] = a
    state[2] = b
    state[3] = s
    state[4] = up
    state[11] = swing
    return status, used, nrec


# -- noiseless frame geodesics per chart (regression reference) ---------

CHART_SPH, CHART_EF_IN, CHART_EF_OUT = 0, 1, 2


@njit(cache=True)
def _gamma_vv(chart, R, x, v, out):
    """out_k = Gamma^k_ij v^i v^j for the four-coordinate charts."""
    r = x[1]
    phi = x[2]
    sphi = math.sin(phi)
    cphi = math.cos(phi)
    v0, v1, v2, v3 = v[0], v[1], v[2], v[3]
    if chart == CHART_SPH:
        out[0] = 2.0 * (R / (2.0 * r * (r - R))) * v1 * v0
        out[1] = (R * (r - R) / (2.0 * r**3)) * v0 * v0 \
            - (R / (2.0 * r * (r - R))) * v1 * v1 \
            + (R - r) * v2 * v2 + (R - r) * sphi * sphi * v3 * v3
    else:
        sgn = -1.0 if chart == CHART_EF_IN else 1.0
        out[0] = -sgn * (R / (2.0 * r * r)) * v0 * v0 \
            + sgn * r * v2 * v2 + sgn * r * sphi * sphi * v3 * v3
        out[1] = (R * (r - R) / (2.0 * r**3)) * v0 * v0 \
            + 2.0 * sgn * (R / (2.0 * r * r)) * v0 * v1 \
            + (R - r) * v2 * v2 + (R - r) * sphi * sphi * v3 * v3
    out[2] = 2.0 * v1 * v2 / r - sphi * cphi * v3 * v3
    out[3] = 2.0 * v1 * v3 / r + 2.0 * (cphi / sphi) * v2 * v3


@njit(cache=True)
def _pseudo_norm(chart, R, x, v):
    r = x[1]
    phi = x[2]
    f = 1.0 - R / r
    ang = r * r * (v[2] * v[2] + math.sin(phi) ** 2 * v[3] * v[3])
    if chart == CHART_SPH:
        return f * v[0] * v[0] - v[1] * v[1] / f - ang
    sgn = -1.0 if chart == CHART_EF_IN else 1.0
    return f * v[0] * v[0] + 2.0 * sgn * v[0] * v[1] - ang


@njit(cache=True)
def geodesic_run(chart, R, x, v, h, n_steps, rec_r, rec_s, rec_stride):
    """RK2 geodesic integration with unit pseudo-norm renormalization.

    Records r every rec_stride steps. Returns (n_recorded, status) where
    status 1 flags a chart-domain exit (r too small / too close to R for
    the spherical chart).
    """
    g1 = np.empty(4)
    g2 = np.empty(4)
    xm = np.empty(4)
    vm = np.empty(4)
    nrec = 0
    for i in range(n_steps):
        _gamma_vv(chart, R, x, v, g1)
        for k in range(4):
            xm[k] = x[k] + 0.5 * h * v[k]
            vm[k] = v[k] - 0.5 * h * g1[k]
        rm = xm[1]
        if rm <= 1e-12 or (chart == CHART_SPH and rm <= R * (1.0 + 1e-9)):
            return nrec, 1
        _gamma_vv(chart, R, xm, vm, g2)
        for k in range(4):
            x[k] = x[k] + h * vm[k]
            v[k] = v[k] - h * g2[k]
        if x[1] <= 1e-12 or (chart == CHART_SPH and x[1] <= R * (1.0 + 1e-9)):
            return nrec, 1
        q = _pseudo_norm(chart, R, x, v)
        if q <= 0.0:
            return nrec, 1
        fac = 1.0 / math.sqrt(q)
        for k in range(4):
            v[k] = v[k] * fac
        if rec_stride > 0 and ((i + 1) % rec_stride == 0) and nrec < rec_r.shape[0]:
            rec_r[nrec] = x[1]
            rec_s[nrec] = (i + 1) * h
            nrec += 1
    return nrec, 0
