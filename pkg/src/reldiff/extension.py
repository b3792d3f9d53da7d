"""Trajectory continuation through the horizon and the central singularity.

The exterior runs in the reduced (r, a, b, T) coordinates; the approach and
crossing legs keep horizon-regular null-coordinate bookkeeping; the dive is
integrated to a small cutoff radius and closed by the known power-law tail;
the re-emergence is a diffusion in the radial clock. Every horizon and
center passage is recorded in an append-only event log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .reduced import ReducedState, pack_state, run_segment, unpack_state
from .rng import NoiseChunks

HORIZON_FIRST = "horizon-first"
HORIZON_IN = "horizon-in"
SINGULARITY = "singularity"
HORIZON_OUT = "horizon-out"
ESCAPE = "escape-declared"

_ORDER_AFTER = {
    None: {HORIZON_FIRST, ESCAPE},
    HORIZON_FIRST: {SINGULARITY},
    HORIZON_IN: {SINGULARITY},
    SINGULARITY: {HORIZON_OUT},
    HORIZON_OUT: {HORIZON_IN, ESCAPE},
    ESCAPE: set(),
}


@dataclass
class Event:
    kind: str
    s: float
    state: dict


class EventLog:
    """Append-only record of horizon/center passages and escape calls."""

    def __init__(self):
        self.events: list[Event] = []

    def append(self, kind, s, **state):
        self.events.append(Event(kind, float(s), state))

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def validate(self, R):
        """Alternation and the quarter-period bounds; returns violations."""
        bad = []
        prev = None
        prev_s = -math.inf
        for ev in self.events:
            if ev.kind not in _ORDER_AFTER[prev]:
                bad.append(f"{ev.kind} after {prev}")
            if ev.s < prev_s - 1e-12:
                bad.append(f"time decreased at {ev.kind}: {ev.s} < {prev_s}")
            if ev.kind == SINGULARITY and prev in (HORIZON_FIRST, HORIZON_IN):
                if ev.s - prev_s > math.pi * R / 2 + 1e-12:
                    bad.append(f"in-leg duration {ev.s - prev_s} > piR/2")
            if ev.kind == HORIZON_OUT and prev == SINGULARITY:
                if ev.s - prev_s > math.pi * R / 2 + 1e-12:
                    bad.append(f"out-leg duration {ev.s - prev_s} > piR/2")
            prev, prev_s = ev.kind, ev.s
        return bad

    def to_records(self):
        return [{"kind": e.kind, "s": e.s, **{k: e.state.get(k)
                for k in ("r", "a", "b", "T")}} for e in self.events]


@dataclass
class BoundaryPoint:
    """Limit data of a center hit: the dive tail converges pointwise."""

    a: float
    b: float
    theta: np.ndarray
    plane: np.ndarray  # unit angular-momentum direction
    u_minus: float
    D_prime: float
    n: np.ndarray
    swing: float
    diagnostics: dict = field(default_factory=dict)


def tail_time_from_radius(r, b, R):
    """Remaining proper time to the center from radius r on a dive tail.

    Inverts r(tau) = (5/2 b sqrt(R) tau)^{2/5} (1 + (5 b tau / 2R^2)^{2/5})
    for tau (the second-order tail expansion; the correction matters at
    practical cutoff radii).
    """
    c = 2.5 * b * math.sqrt(R)
    tau = (r ** 2.5) / c  # leading-order seed
    for _ in range(60):
        base = (c * tau) ** 0.4
        corr = (2.5 * b * tau / (R * R)) ** 0.4
        g = base * (1.0 + corr) - r
        dg = 0.4 * base / tau * (1.0 + 2.0 * corr)
        step = g / dg
        tau_new = tau - step
        if tau_new <= 0.0:
            tau_new = 0.5 * tau
        if abs(tau_new - tau) <= 1e-15 * tau:
            tau = tau_new
            break
        tau = tau_new
    return tau


def singularity_uv(u_minus, R):
    """Both sign choices of the conformal coordinates of a center point.

    At r = 0 the point lies on v^2 - u^2 = 1; from 2R log|u + v| = u-
    (taking u + v > 0) one gets (u, v) = (sinh, cosh)(u-/2R). The chart
    does not fix the overall sign, so both are returned.
    """
    x = u_minus / (2.0 * R)
    if abs(x) > 700.0:  # sinh overflows; the point runs off the diagram
        u, v = math.copysign(math.inf, x), math.inf
    else:
        u, v = math.sinh(x), math.cosh(x)
    return (u, v), (-u, -v)


def detect_singularity(recs, end_state: ReducedState, u_minus_end, R,
                       r_stop) -> BoundaryPoint:
    """Close a dive leg: extrapolate the hit time and package the limits.

    recs rows are [s, r, a, b, T, u, swing] with s counted from the start
    of the dive leg; end_state/u_minus_end are the values at r <= r_stop.
    """
    if end_state.T >= 0.0 or end_state.r > 1.5 * r_stop:
        raise ValueError("dive leg did not reach the cutoff radius inbound")
    b_end = end_state.b
    tau = tail_time_from_radius(end_state.r, b_end, R)
    D_loc = end_state.s + tau

    diagnostics = {}
    # slope of log r vs log(remaining time) over the final recorded decade
    if recs.shape[0] > 10:
        sel = (recs[:, 1] >= r_stop) & (recs[:, 1] <= 10.0 * r_stop) \
            & (recs[:, 0] < D_loc)
        if sel.sum() > 10:
            x = np.log(D_loc - recs[sel, 0])
            y = np.log(recs[sel, 1])
            diagnostics["tail_slope"] = float(np.polyfit(x, y, 1)[0])
            diagnostics["tail_points"] = int(sel.sum())
    # T r^{3/2} approaches -b sqrt(R) at the center
    diagnostics["slope_product"] = float(
        end_state.T * end_state.r ** 1.5 / (-b_end * math.sqrt(R)))
    # semi-tangent: the regular null coordinate freezes, d(u-)/dr -> 0
    if recs.shape[0] > 2:
        du = recs[-1, 5] - recs[-2, 5]
        dr = recs[-1, 1] - recs[-2, 1]
        diagnostics["du_minus_dr"] = float(du / dr) if dr != 0.0 else 0.0

    k = np.cross(end_state.theta, end_state.n)
    k /= np.linalg.norm(k)
    return BoundaryPoint(
        a=end_state.a, b=b_end, theta=end_state.theta.copy(), plane=k,
        u_minus=u_minus_end, D_prime=D_loc, n=end_state.n.copy(),
        swing=0.0, diagnostics=diagnostics)


def regenerate(bp: BoundaryPoint, R, sigma, chunks: NoiseChunks, *,
               r_start, dr0=None, corner_guard=1e-9, max_steps=10**7,
               record=True, swing0=0.0):
    """Continue outward from a center hit up to the horizon.

    The outgoing leg is a diffusion of (a, b) in the radial clock, entered
    at r_start with the boundary-point data; proper time and the outgoing
    null coordinate are recovered along the way. Returns
    (status, state_at_R, recs, info); state.s counts from the center hit
    and the outgoing null coordinate starts at bp.u_minus (the two null
    coordinates coincide at the center).
    """
    if dr0 is None:
        dr0 = 2e-4 * R
    tau_in = tail_time_from_radius(r_start, bp.b, R)
    sv = np.zeros(13)
    sv[0] = r_start
    sv[1] = bp.a
    sv[2] = bp.b
    sv[3] = tau_in  # proper time since the center, leading tail
    sv[4] = bp.u_minus
    sv[5:8] = bp.theta
    sv[8:11] = bp.n
    sv[11] = swing0
    pars = np.array([R, sigma, dr0, corner_guard, float(max_steps)])
    cap = 1 << 14
    rec = np.empty((cap, 6)) if record else np.empty((0, 6))
    out_rec = []
    steps = 0
    while True:
        block = chunks.view()[:, :3]
        status, used, nrec = kernels.regen_run(sv, block, pars,
                                               rec, rec.shape[0], 1)
        chunks.consume(used)
        steps += used
        if nrec:
            out_rec.append(rec[:nrec].copy())
        if status != kernels.S_NOISE:
            break
        pars[4] = float(max_steps - steps)
        if pars[4] <= 0:
            status = kernels.S_BUDGET
            break
    recs = np.vstack(out_rec) if out_rec else np.empty((0, 6))
    st = ReducedState(r=sv[0], a=sv[1], b=sv[2],
                      T=math.sqrt(max(0.0, sv[1] ** 2
                                      + (R / sv[0] - 1.0)
                                      * (sv[2] ** 2 / sv[0] ** 2 + 1.0))),
                      theta=sv[5:8].copy(), n=sv[8:11].copy(), s=sv[3])
    info = {"steps": steps, "u_plus": float(sv[4]), "swing": float(sv[11]),
            "min_b": float(min(bp.b, recs[:, 2].min()) if recs.size else bp.b)}
    return status, st, recs, info


def angular_transport_solve(r_path, b_path, ds_path, noise, sigma, V_start):
    """Integrate the rotating orthonormal triad along a radial leg.

    V rows are (theta, n, theta x n); each step applies the exact rotation
    generated by the sweep term (b/r^2) ds about theta x n and the noise
    term sigma (r/b) dbeta about theta, so V stays in the rotation group
    to machine precision. Returns the (m+1, 3, 3) path of V.
    """
    V = np.array(V_start, dtype=float)
    if abs(np.linalg.det(V) - 1.0) > 1e-8 or \
            np.max(np.abs(V @ V.T - np.eye(3))) > 1e-8:
        raise ValueError("V_start must be a rotation matrix")
    m = len(ds_path)
    out = np.empty((m + 1, 3, 3))
    out[0] = V
    for i in range(m):
        ds = ds_path[i]
        w = (ds * b_path[i] / r_path[i] ** 2) * V[2] \
            + (sigma * math.sqrt(ds) * r_path[i] / b_path[i] * noise[i]) * V[0]
        V = _rotate_rows(V, w)
        out[i + 1] = V
    return out


def _rotate_rows(V, w):
    ang = np.linalg.norm(w)
    if ang < 1e-300:
        return V.copy()
    k = w / ang
    c, s = math.cos(ang), math.sin(ang)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    Rm = np.eye(3) * c + s * K + (1.0 - c) * np.outer(k, k)
    return V @ Rm.T


def transport_rotation_vectors(r_path, b_path, ds_path, noise, sigma, V_path):
    """Per-step rotation vectors in the moving triad's own axes."""
    m = len(ds_path)
    out = np.empty((m, 3))
    for i in range(m):
        V = V_path[i]
        w = (ds_path[i] * b_path[i] / r_path[i] ** 2) * V[2] \
            + (sigma * math.sqrt(ds_path[i]) * r_path[i] / b_path[i]
               * noise[i]) * V[0]
        out[i] = V @ w  # components along the current triad rows
    return out


def transport_series(rotvecs_body, K=8):
    """Truncated iterated-integral expansion of the triad propagator.

    Given per-step body-frame rotation vectors, accumulates the degree-k
    terms J_k of the product of step exponentials (Chen's relation, with
    each step's exponential expanded to full order within the truncation
    degree, so the sum carries the Stratonovich-type diagonal terms) and
    returns the list [J_1 ... J_K]; the propagator is approximately
    I + sum_k J_k up to terms of total degree K+1.
    """
    P = [np.eye(3)] + [np.zeros((3, 3)) for _ in range(K)]
    for w in rotvecs_body:
        A = np.array([[0.0, -w[2], w[1]],
                      [w[2], 0.0, -w[0]],
                      [-w[1], w[0], 0.0]])
        Apow = [np.eye(3)]
        for j in range(1, K + 1):
            Apow.append(Apow[-1] @ A / j)
        for k in range(K, 0, -1):
            for j in range(1, k + 1):
                P[k] = P[k] + P[k - j] @ Apow[j]
    return P[1:]


def transport_series_tail_bound(J_list, interval, K, extra_terms=40,
                                path_l1=None):
    """Tail estimate 2 sum_{k>K} (5C)^k / sqrt(k!) * interval^{k/5}.

    C is calibrated so that the envelope majorizes every computed J_k and,
    when path_l1 (the total rotation of the driving increments) is given,
    the pathwise bound ||J_k|| <= path_l1^k / k! as well; the result then
    bounds the truncation error of the K-term series on the interval.
    """
    C = 0.0
    if path_l1 is not None and interval > 0.0:
        C = path_l1 / (5.0 * interval ** 0.2)
    for k, J in enumerate(J_list, start=1):
        nrm = np.linalg.norm(J)
        if nrm <= 0.0 or interval <= 0.0:
            continue
        c_k = (nrm * math.sqrt(math.factorial(k))) ** (1.0 / k) \
            / (5.0 * interval ** 0.2)
        C = max(C, c_k)
    tail = 0.0
    for k in range(K + 1, K + 1 + extra_terms):
        tail += (5.0 * C) ** k / math.sqrt(math.factorial(k)) \
            * interval ** (k / 5.0)
    return 2.0 * tail, C


def tortoise_like(r, R):
    if r == R:
        return -math.inf
    return r + R * math.log(abs(r / R - 1.0))


@dataclass
class ExtendedResult:
    events: EventLog
    final: ReducedState
    status: str
    segments: list
    excursions: list
    apexes: list
    boundary_points: list
    total_steps: int
    escaped: bool = False


DEFAULT_POLICY = dict(
    r_switch_factor=1.5,   # spherical chart above, horizon-regular below
    switch_hysteresis=1.6,
    M_escape_factor=50.0,
    r_stop_factor=1e-6,
    h0=1e-3,
    hmin=1e-24,
    eps_T=1e-8,
    dr0_regen_factor=2e-4,
    max_excursions=60,
    max_steps=10**9,
    exterior_rec_stride=0,
    dive_rec_cap=1 << 15,
    escape_requires_energy=True,
)


def extend_trajectory(initial: ReducedState, R, sigma, horizon, *,
                      chunks=None, rng=None, policy=None,
                      events: EventLog | None = None) -> ExtendedResult:
    """Run one trajectory across charts until the time horizon or escape.

    The loop alternates exterior legs, horizon-regular approach/dive legs,
    center closure, and radial-clock regeneration, recording each passage.
    initial must be an exterior state (r > R). Segments are stored as
    (label, records, s_offset) with record times counted from s_offset
    (dive tails need the extra resolution).
    """
    pol = dict(DEFAULT_POLICY)
    if policy:
        pol.update(policy)
    if chunks is None:
        if rng is None:
            raise ValueError("need chunks or rng")
        chunks = NoiseChunks(rng, 4)
    if initial.r <= R:
        raise ValueError("extend_trajectory starts from an exterior state")

    r_sw = pol["r_switch_factor"] * R
    r_hys = pol["switch_hysteresis"] * R
    M_esc = pol["M_escape_factor"] * R
    r_stop = pol["r_stop_factor"] * R
    h0, hmin, eps_T = pol["h0"], pol["hmin"], pol["eps_T"]

    ev = events if events is not None else EventLog()
    segments = []
    excursions = []
    apexes = []
    bps = []
    total_steps = 0

    st = initial.copy()
    # absolute inward null coordinate: anchor at coordinate time 0
    u_val = tortoise_like(st.r, R)
    u_mode = kernels.EF_IN
    swing = 0.0
    n_horizon = 0
    escaped = False
    status_out = "time"
    cur_exc = None

    def _run(state, lo, hi, ef_mode, u0, label, rec=None, stride=0,
             s_end=None, rebase=False):
        nonlocal total_steps, swing
        s_abs = state.s
        if rebase:
            state = state.copy()
            state.s = 0.0
        send = (s_end if s_end is not None else
                (horizon - s_abs if rebase else horizon))
        stat, out, u1, recs, info = run_segment(
            state, R, sigma, h0, hmin, lo, hi, send, chunks,
            ef_mode=ef_mode, u_ef=u0, eps_T=eps_T, r_floor=1e-12,
            max_steps=pol["max_steps"] - total_steps,
            rec=rec, rec_stride=stride, swing0=swing)
        total_steps += info["steps"]
        swing = info["swing"]
        if rebase:
            out.s += s_abs
        segments.append((label, recs, s_abs if rebase else 0.0))
        return stat, out, u1, recs, info

    while True:
        if st.s >= horizon - 1e-15:
            status_out = "time"
            break
        if len(bps) >= pol["max_excursions"]:
            status_out = "excursion-budget"
            break
        if total_steps >= pol["max_steps"]:
            status_out = "step-budget"
            break

        if st.r > R or st.T > 0.0:  # regen hands back exactly at r = R
            # exterior leg; outbound bookkeeping right after an exit,
            # inbound bookkeeping otherwise
            lo = R if u_mode == kernels.EF_OUT else (r_sw if st.r > r_sw else R)
            hi = r_hys if (u_mode == kernels.EF_OUT and st.r < r_hys) else M_esc
            label = "exterior-out" if u_mode == kernels.EF_OUT else "exterior"
            stat, st, u_val, recs, info = _run(
                st, lo, hi, u_mode, u_val, label,
                stride=pol["exterior_rec_stride"],
                rec=(np.empty((1 << 12, 7))
                     if pol["exterior_rec_stride"] else None))
            apexes.append((st.s, info["max_r"]))
            if stat == kernels.S_TIME:
                status_out = "time"
                break
            if stat == kernels.S_HIGH:
                if st.r >= M_esc:
                    if st.a * st.a > 1.0 or not pol["escape_requires_energy"]:
                        ev.append(ESCAPE, st.s, r=st.r, a=st.a, b=st.b, T=st.T)
                        escaped = True
                        status_out = "escape"
                        break
                    M_esc *= 2.0  # marginal energy: push the gate outward
                    continue
                # left the horizon-regular band outward: hand back to the
                # spherical leg and rebase the bookkeeping on the inward
                # null branch (the two differ by twice the tortoise radius)
                u_val = u_val + 2.0 * tortoise_like(st.r, R)
                u_mode = kernels.EF_IN
                continue
            if stat == kernels.S_LOW:
                if st.r <= R:
                    if u_mode == kernels.EF_OUT:
                        u_val = u_val + 2.0 * tortoise_like(st.r, R)
                        u_mode = kernels.EF_IN
                    kind = HORIZON_FIRST if n_horizon == 0 else HORIZON_IN
                    ev.append(kind, st.s, r=st.r, a=st.a, b=st.b, T=st.T,
                              swing=swing)
                    n_horizon += 1
                    cur_exc = {"D_in": st.s, "a_in": st.a, "b_in": st.b}
                    continue
                # entered the approach band: next leg runs down to R
                continue
            _fail(stat)
        else:
            # inside the hole, inbound: dive to the cutoff and close.
            # Work in leg-local proper time; the tail steps are billions
            # of times smaller than the absolute clock's resolution.
            if cur_exc is None:
                cur_exc = {"D_in": st.s, "a_in": st.a, "b_in": st.b}
            s_in = st.s
            loc = st.copy()
            loc.s = 0.0
            swing_in = swing

            rec1 = np.empty((pol["dive_rec_cap"], 7))
            stat, loc, u_val, recs1, info1 = _run(
                loc, 10.0 * r_stop, 1e18, kernels.EF_IN, u_val,
                "dive", rec=rec1, stride=4, s_end=1e18)
            if stat != kernels.S_LOW:
                _fail(stat)
            rec2 = np.empty((1 << 13, 7))
            stat, loc, u_val, recs2, info2 = _run(
                loc, r_stop, 1e18, kernels.EF_IN, u_val,
                "dive-tail", rec=rec2, stride=1, s_end=1e18)
            if stat != kernels.S_LOW:
                _fail(stat)
            # fix the segment offsets (legs ran in local time)
            segments[-2] = ("dive", recs1, s_in)
            segments[-1] = ("dive-tail", recs2, s_in)
            tail = np.vstack([recs1, recs2]) if recs1.size else recs2

            bp = detect_singularity(tail, loc, u_val, R, r_stop)
            bp = BoundaryPoint(bp.a, bp.b, bp.theta, bp.plane, bp.u_minus,
                               bp.D_prime + s_in, bp.n, swing,
                               bp.diagnostics)
            bps.append(bp)
            uv_a, uv_b = singularity_uv(bp.u_minus, R)
            ev.append(SINGULARITY, bp.D_prime, r=0.0, a=bp.a, b=bp.b,
                      T=-math.inf, uv=uv_a, uv_mirror=uv_b,
                      u_minus=bp.u_minus, swing=swing)
            min_b_in = min(info1["min_b"], info2["min_b"])

            # outward continuation in the radial clock
            rstat, rst, rrecs, rinfo = regenerate(
                bp, R, sigma, chunks, r_start=max(loc.r, 0.5 * r_stop),
                dr0=pol["dr0_regen_factor"] * R, swing0=swing)
            total_steps += rinfo["steps"]
            segments.append(("regen", rrecs, bp.D_prime))
            if rstat != kernels.S_HIGH:
                status_out = "regeneration-failure"
                cur_exc.update(D_prime=bp.D_prime, failure={
                    "r": rst.r, "a": rst.a, "b": rst.b, "T": rst.T,
                    "kernel_status": int(rstat)})
                excursions.append(cur_exc)
                st = rst
                break
            rst.s += bp.D_prime
            swing = rinfo["swing"]
            u_val = rinfo["u_plus"]
            u_mode = kernels.EF_OUT
            ev.append(HORIZON_OUT, rst.s, r=rst.r, a=rst.a, b=rst.b,
                      T=rst.T, swing=swing)
            cur_exc.update(
                D_prime=bp.D_prime, D_out=rst.s,
                min_b=min(min_b_in, rinfo["min_b"]),
                swing_in=swing_in, swing_sing=bp.swing, swing_out=swing,
                a_out=rst.a, b_out=rst.b, bp=bp)
            excursions.append(cur_exc)
            cur_exc = None
            st = rst
            if st.s >= horizon:
                status_out = "time"
                break

    return ExtendedResult(events=ev, final=st, status=status_out,
                          segments=segments, excursions=excursions,
                          apexes=apexes, boundary_points=bps,
                          total_steps=total_steps, escaped=escaped)


def _fail(stat):
    names = {kernels.S_CONSTRAINT: "constraint violation",
             kernels.S_TSIGN: "radial-velocity sign loss inside the hole",
             kernels.S_BUDGET: "step budget exhausted"}
    raise RuntimeError(f"integration failure: "
                       f"{names.get(stat, f'kernel status {stat}')}")
