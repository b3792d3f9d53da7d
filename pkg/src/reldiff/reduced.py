"""The reduced black-hole diffusion (r, a, b, T) with ambient angular pair.

The four scalar coordinates close into an autonomous degenerate diffusion;
the trajectory's angular position theta and normalized angular velocity n
ride on top of it through an exact small-rotation update. The pseudo-norm
relation T^2 = a^2 - (1 - R/r)(1 + b^2/r^2) is restored after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .rng import NoiseChunks

EPS_B_DEFAULT = 1e-8  # b = 0 initial data is started here (times R)


@dataclass
class ReducedState:
    r: float
    a: float
    b: float
    T: float
    theta: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    n: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    s: float = 0.0

    def copy(self):
        return ReducedState(self.r, self.a, self.b, self.T,
                            self.theta.copy(), self.n.copy(), self.s)


def pseudo_norm_residual(state: ReducedState, R: float) -> float:
    """T^2 - a^2 + (1 - R/r)(1 + b^2/r^2); zero on the constraint manifold."""
    f = 1.0 - R / state.r
    return state.T**2 - state.a**2 + f * (1.0 + state.b**2 / state.r**2)


def state_from_energy(r, a, b, R, T_sign=-1.0, s=0.0, theta=None, n=None):
    """Build a constraint-satisfying state from (r, a, b)."""
    f = 1.0 - R / r
    disc = a * a - f * (1.0 + b * b / (r * r))
    if disc < 0:
        # tolerate pure roundoff at a turning point (disc analytically 0)
        if disc > -1e-12 * (a * a + abs(f) * (1.0 + b * b / (r * r)) + 1.0):
            disc = 0.0
        else:
            raise ValueError(f"no real T at r={r}, a={a}, b={b}")
    st = ReducedState(r=r, a=a, b=b, T=T_sign * math.sqrt(disc), s=s)
    if theta is not None:
        st.theta = np.asarray(theta, dtype=float)
    if n is not None:
        st.n = np.asarray(n, dtype=float)
    return st


def state_from_velocity(r, T, b, R, a_sign=+1.0, s=0.0):
    """Build a constraint-satisfying state from (r, T, b)."""
    f = 1.0 - R / r
    disc = T * T + f * (1.0 + b * b / (r * r))
    if disc < 0:
        raise ValueError(f"no real a at r={r}, T={T}, b={b}")
    return ReducedState(r=r, a=a_sign * math.sqrt(disc), b=b, T=T, s=s)


def noise_factor(r, a, b, T, R, sigma):
    """Lower-triangular-style factor L of the covariation rate K'.

    Rows are ordered (a, b, T); K' = sigma^2 [[a^2-1+R/r, ab, aT],
    [ab, b^2+r^2, bT], [aT, bT, T^2+1-R/r]] = L L^T exactly on the
    constraint manifold. Outside the hole the columns are driven by
    (w, beta, gamma); inside, where sqrt(1-R/r) turns imaginary, the roles
    of a and T swap and the third driver is relabeled delta.
    """
    f = 1.0 - R / r
    if f >= 0.0:
        q = f / a
        rt = math.sqrt(f)
        L = np.array([
            [a - q, q * b / r, q * T / rt if rt > 0.0 else 0.0],
            [b, r, 0.0],
            [T, 0.0, rt],
        ])
    else:
        g1 = math.sqrt(-f)
        qp = -f / T
        L = np.array([
            [a, 0.0, g1],
            [b, r, 0.0],
            [T - qp, qp * b / r, qp * a / g1],
        ])
    return sigma * L


def covariation_rate(r, a, b, T, R, sigma):
    """K' per unit time, the displayed 3x3 matrix in (a, b, T) order."""
    f = 1.0 - R / r
    return sigma**2 * np.array([
        [a * a - 1.0 + R / r, a * b, a * T],
        [a * b, b * b + r * r, b * T],
        [a * T, b * T, T * T + 1.0 - R / r],
    ])


def drift(r, a, b, T, R, sigma):
    """Deterministic drift of (r, a, b, T)."""
    s2 = sigma * sigma
    return (T,
            1.5 * s2 * a,
            1.5 * s2 * b + 0.5 * s2 * r * r / b,
            1.5 * s2 * T + (r - 1.5 * R) * b * b / r**4 - 0.5 * R / (r * r))


def reduced_step(state: ReducedState, sigma: float, h: float,
                 noise: np.ndarray, R: float, eps_T: float = 1e-8,
                 project: bool = True) -> ReducedState:
    """One step at fixed h: midpoint drift, exact-factor noise, projection.

    noise carries 3 normals for (w, beta, gamma/delta) plus an optional
    4th for the angular rotation. project=False skips the constraint
    restoration, exposing the raw discretization residual.
    """
    r, a, b, T = state.r, state.a, state.b, state.T
    if b <= 0.0:
        raise ValueError("b must be positive (seed degenerate data at eps_b)")
    d1 = drift(r, a, b, T, R, sigma)
    rm = max(r + 0.5 * h * d1[0], 1e-12)
    bm = max(b + 0.5 * h * d1[2], 1e-12)
    d2 = drift(rm, a + 0.5 * h * d1[1], bm, T + 0.5 * h * d1[3], R, sigma)
    r_n = r + h * d2[0]
    a_n = a + h * d2[1]
    b_n = b + h * d2[2]
    T_n = T + h * d2[3]
    if r_n <= 0.0:
        raise ValueError("r crossed 0 within one step; reduce h")

    if sigma > 0.0:
        L = noise_factor(r, a, b, T, R, sigma)
        dM = math.sqrt(h) * (L @ noise[:3])
        a_n += dM[0]
        T_n += dM[2]
        sq = sigma * math.sqrt(h)
        y = b_n**2 + 2.0 * sq * b_n * (b_n * noise[0] + r * noise[1]) \
            + sq * sq * (b_n**2 + r * r)
        b_n = math.sqrt(max(y, 1e-4 * sq * sq * r * r))

    f_n = 1.0 - R / r_n
    disc = a_n * a_n - f_n * (1.0 + b_n * b_n / (r_n * r_n))
    if not project:
        pass
    elif (abs(T_n) >= eps_T or f_n < 0.0) and disc >= 0.0:
        T_n = math.copysign(math.sqrt(disc), T_n)
    elif disc < 0.0 and (
            f_n < 0.0 or
            disc < -0.5 * (a_n * a_n + abs(f_n) * (1.0 + b_n**2 / r_n**2) + 1.0)):
        # negative inside the hole is analytically impossible; a large
        # exterior deficit is not a turning-point overshoot
        raise RuntimeError("pseudo-norm discriminant went negative")
    else:
        a_n = math.copysign(
            math.sqrt(max(0.0, T_n * T_n + f_n * (1.0 + b_n**2 / r_n**2))), a_n)

    theta, n = state.theta.copy(), state.n.copy()
    xi_ang = noise[3] if len(noise) > 3 else 0.0
    theta, n = angular_step(theta, n, r, b, sigma, h, xi_ang)
    return ReducedState(r=r_n, a=a_n, b=b_n, T=T_n, theta=theta, n=n,
                        s=state.s + h)


def angular_step(theta, n, r, b, sigma, h, xi):
    """Exact small rotation of the orthonormal pair (theta, n).

    Deterministic sweep at rate b/r^2 in the (theta, n) plane plus noise
    rotation sigma (r/b) dbeta about theta; unit norms and orthogonality
    hold to machine precision by construction.
    """
    theta = np.asarray(theta, dtype=float).copy()
    n = np.asarray(n, dtype=float).copy()
    k = np.cross(theta, n)
    w = (h * b / (r * r)) * k + (sigma * math.sqrt(h) * (r / b) * xi) * theta
    ang = np.linalg.norm(w)
    if ang < 1e-300:
        return theta, n
    axis = w / ang
    c, s = math.cos(ang), math.sin(ang)
    for v in (theta, n):
        v[:] = v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1.0 - c)
    return theta, n


def generator_apply(f_derivs, r, b, T, R, sigma):
    """Apply the (r, b, T) generator to a function given its derivatives.

    f_derivs(r, b, T) must return a dict with keys among
    {'r', 'b', 'T', 'bb', 'TT', 'bT'} for the first and second partials.
    """
    d = f_derivs(r, b, T)
    s2 = sigma * sigma
    out = T * d.get("r", 0.0)
    out += 0.5 * s2 * (b * b + r * r) * d.get("bb", 0.0)
    out += 0.5 * s2 * (3.0 * b * b + r * r) / b * d.get("b", 0.0)
    out += s2 * b * T * d.get("bT", 0.0)
    out += 0.5 * s2 * (T * T + 1.0 - R / r) * d.get("TT", 0.0)
    out += (1.5 * s2 * T + (r - 1.5 * R) * b * b / r**4 - 0.5 * R / (r * r)) \
        * d.get("T", 0.0)
    return out


def generator_residual(f, f_derivs, state: ReducedState, R, sigma, h, n_samples,
                       rng):
    """|E[f(one step) - f(state)]/h - G'f(state)|, O(h) + O(N^{-1/2})."""
    base = f(state.r, state.b, state.T)
    acc = 0.0
    for _ in range(n_samples):
        nxt = reduced_step(state, sigma, h, rng.standard_normal(4), R)
        acc += f(nxt.r, nxt.b, nxt.T) - base
    emp = acc / (n_samples * h)
    return abs(emp - generator_apply(f_derivs, state.r, state.b, state.T, R, sigma))


def log_energy_decomposition(s_path, r_path, a_path, dMa_path, R, sigma):
    """Split log a into sigma^2 s + sigma w + eta along a sampled path.

    w is reconstructed from dM^a = sigma sqrt(a^2 - (1-R/r)) dw; eta is the
    remainder of log a. Returns (w, eta, tail_oscillation) where the
    oscillation is max-min of eta over the last half of the path.
    """
    a_path = np.asarray(a_path, dtype=float)
    if np.any(a_path <= 0.0):
        a_path = np.abs(a_path)  # a cannot change sign; work with |a|
    if sigma == 0.0:
        w = np.zeros(len(a_path))
    else:
        var = a_path[:-1] ** 2 - (1.0 - R / np.asarray(r_path[:-1]))
        if np.any(var <= 0.0):
            raise ValueError("a^2 - (1 - R/r) must stay positive")
        dw = np.asarray(dMa_path) / (sigma * np.sqrt(var))
        w = np.concatenate([[0.0], np.cumsum(dw)])
    eta = np.log(a_path) - sigma**2 * np.asarray(s_path) - sigma * w
    tail = eta[len(eta) // 2:]
    return w, eta, float(tail.max() - tail.min())


# -- kernel-backed trajectory segments ---------------------------------


def pack_state(state: ReducedState, u_ef=0.0, swing=0.0):
    v = np.zeros(kernels.STATE_LEN)
    v[kernels.ISW] = swing
    v[kernels.IR] = state.r
    v[kernels.IA] = state.a
    v[kernels.IB] = state.b
    v[kernels.IT] = state.T
    v[kernels.IU] = u_ef
    v[kernels.IS] = state.s
    v[kernels.ITH:kernels.ITH + 3] = state.theta
    v[kernels.IN_:kernels.IN_ + 3] = state.n
    v[kernels.IMINB] = state.b
    v[kernels.IMAXR] = state.r
    return v


def unpack_state(v):
    return ReducedState(
        r=v[kernels.IR], a=v[kernels.IA], b=v[kernels.IB], T=v[kernels.IT],
        theta=v[kernels.ITH:kernels.ITH + 3].copy(),
        n=v[kernels.IN_:kernels.IN_ + 3].copy(), s=v[kernels.IS])


def run_segment(state: ReducedState, R, sigma, h0, hmin, stop_r_low,
                stop_r_high, s_end, chunks: NoiseChunks, *, ef_mode=0,
                u_ef=0.0, eps_T=1e-8, r_floor=1e-12, max_steps=10**9,
                rec=None, rec_stride=0, swing0=0.0):
    """Drive the compiled kernel until an event, refilling noise as needed.

    Returns (status, state, u_ef, records) where records is the stacked
    recorded rows (possibly empty). swing0 seeds the cumulative sweep
    angle so it can be carried across segments.
    """
    sv = pack_state(state, u_ef, swing0)
    pars = np.array([R, sigma, h0, hmin, stop_r_low, stop_r_high, s_end,
                     eps_T, float(ef_mode), r_floor, float(max_steps)])
    out_rec = []
    steps_total = 0
    dummy = np.empty((0, 7)) if rec is None else rec
    while True:
        block = chunks.view()
        cap = dummy.shape[0]
        status, used, nrec = kernels.reduced_run(sv, block, pars, dummy, cap,
                                                 rec_stride)
        chunks.consume(used)
        steps_total += used
        if nrec:
            out_rec.append(dummy[:nrec].copy())
        if status != kernels.S_NOISE:
            break
        pars[10] = float(max_steps - steps_total)
        if pars[10] <= 0:
            status = kernels.S_BUDGET
            break
    recs = np.vstack(out_rec) if out_rec else np.empty((0, 7))
    st = unpack_state(sv)
    return status, st, float(sv[kernels.IU]), recs, {
        "steps": steps_total,
        "min_b": float(sv[kernels.IMINB]),
        "max_r": float(sv[kernels.IMAXR]),
        "swing": float(sv[kernels.ISW]),
    }
