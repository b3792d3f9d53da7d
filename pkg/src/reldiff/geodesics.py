"""Exact noiseless references: radial-potential classification and quadrature.

With the noise off, the radial motion conserves (a, b) and reduces to
rdot^2 = a^2 - P(1/r) with P(u) = (1 - Ru)(1 + b^2 u^2); arc length, the
orbital angle, and coordinate time all follow from one-dimensional
integrals. Light rays keep only the ratio alpha = a/b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.optimize import brentq

SQRT3 = math.sqrt(3.0)


def effective_potential(u, b, R):
    """P(u) = (1 - R u)(1 + b^2 u^2) at inverse radius u."""
    return (1.0 - R * u) * (1.0 + b * b * u * u)


def critical_points(b, R):
    """Inner/outer critical inverse radii of P, with the P values there.

    None when b < R sqrt(3) (P is monotone); at the threshold the two
    merge at u = 1/(3R) with P = 8/9.
    """
    if b <= 0.0:
        raise ValueError("b must be positive")
    disc = 1.0 - 3.0 * R * R / (b * b)
    if disc < 0.0:
        if disc > -4e-16:  # roundoff at the merge threshold
            disc = 0.0
        else:
            return None
    s = math.sqrt(disc)
    u1 = (1.0 + s) / (3.0 * R)
    u2 = (1.0 - s) / (3.0 * R)
    P1 = 8.0 / 9.0 + (2.0 / (27.0 * R * R)) * (b * b - 3.0 * R * R) * (1.0 + s)
    P2 = 8.0 / 9.0 + (2.0 / (27.0 * R * R)) * (b * b - 3.0 * R * R) * (1.0 - s)
    return u1, u2, P1, P2


def _radial_poly(r, a, b, R):
    """G(r) = a^2 r^2 - (1 - R/r)(r^2 + b^2); rdot^2 = G/r^2."""
    return a * a * r * r - (1.0 - R / r) * (r * r + b * b)


def _find_root(a, b, R, lo, hi):
    """Bracketed root of G on [lo, hi], polished by one Newton step."""
    g = lambda r: _radial_poly(r, a, b, R)
    r0 = brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)
    dg = (g(r0 + 1e-7) - g(r0 - 1e-7)) / 2e-7
    if dg != 0.0:
        r1 = r0 - g(r0) / dg
        if lo <= r1 <= hi:
            r0 = r1
    return r0


@dataclass
class TimelikeCase:
    case: str
    feasible: bool
    roots: dict = field(default_factory=dict)
    note: str = ""


def classify_timelike(a, b, r0, R, tol=1e-12):
    """Decision tree on (a, b) with root values and r0 feasibility.

    Boundary ties (a^2 equal to a critical value within relative tol) take
    the degenerate branch. The returned roots dictionary may contain R0
    (inner turning), R1 (outer turning of the inner forbidden gap), R2
    (outer bound), and 'circle' for multiple-root circular radii.
    """
    if b < 0.0 or R <= 0.0:
        raise ValueError("need b >= 0 and R > 0")
    a2 = a * a
    eps = tol * (1.0 + a2)

    def done(case, roots, lo_hi_ok, note=""):
        return TimelikeCase(case=case, feasible=lo_hi_ok, roots=roots,
                            note=note)

    cp = critical_points(b, R) if b > 0.0 else None
    thr = R * SQRT3 * tol
    if b <= R * SQRT3 - thr:
        # P monotone
        if a2 >= 1.0 - eps:
            return done("1.1", {}, r0 >= R)
        R0 = _outer_root(a, b, R)
        return done("1.2", {"R0": R0}, R <= r0 <= R0 * (1.0 + tol))
    if abs(b - R * SQRT3) <= thr:
        if abs(a2 - 8.0 / 9.0) <= eps:
            return done("1.3", {"circle": 3.0 * R}, r0 <= 3.0 * R * (1 + tol),
                        note="triple root")
        if a2 >= 1.0 - eps:
            return done("1.1", {}, r0 >= R)
        R0 = _outer_root(a, b, R)
        return done("1.2", {"R0": R0}, R <= r0 <= R0 * (1.0 + tol))

    u1, u2, P1, P2 = cp
    r1, r2 = 1.0 / u1, 1.0 / u2
    if abs(a2 - P1) <= eps:
        if P1 >= 1.0 - eps:
            return done("2.3", {"circle": r1},
                        r0 >= R, note="double root, circle or asymptotic")
        R2 = _find_root(a, b, R, r2, _expand_hi(a, b, R, r2))
        return done("2.5.1", {"circle": r1, "R2": R2},
                    R <= r0 <= R2 * (1 + tol), note="double root at r1")
    if abs(a2 - P2) <= eps:
        R0 = _find_root(a, b, R, R * (1 + 1e-14), r1)
        ok = (R <= r0 <= R0 * (1 + tol)) or abs(r0 - r2) <= r2 * tol
        return done("2.5.2", {"circle": r2, "R0": R0}, ok,
                    note="double root at r2")
    if a2 > P1 and a2 >= 1.0 - eps:
        return done("2.1", {}, r0 >= R)
    if a2 < P2:
        R0 = _find_root(a, b, R, R * (1 + 1e-14), r1)
        return done("2.2.1", {"R0": R0}, R <= r0 <= R0 * (1 + tol))
    if a2 > P1:  # and a2 < 1
        R2 = _find_root(a, b, R, r2, _expand_hi(a, b, R, r2))
        return done("2.2.2", {"R2": R2}, R <= r0 <= R2 * (1 + tol))
    if a2 >= 1.0 - eps:  # 1 <= a2 < P1
        R0 = _find_root(a, b, R, R * (1 + 1e-14), r1)
        R1 = _find_root(a, b, R, r1, r2)
        ok = (r0 <= R0 * (1 + tol)) or (r0 >= R1 * (1 - tol))
        return done("2.4", {"R0": R0, "R1": R1}, ok and r0 >= R)
    # P2 < a2 < min(P1, 1)
    R0 = _find_root(a, b, R, R * (1 + 1e-14), r1)
    R1 = _find_root(a, b, R, r1, r2)
    R2 = _find_root(a, b, R, r2, _expand_hi(a, b, R, r2))
    ok = (R <= r0 <= R0 * (1 + tol)) or (R1 * (1 - tol) <= r0 <= R2 * (1 + tol))
    return done("2.6", {"R0": R0, "R1": R1, "R2": R2}, ok)


def _outer_root(a, b, R):
    hi = 2.0 * R
    while _radial_poly(hi, a, b, R) > 0.0:
        hi *= 2.0
        if hi > 1e18:
            raise RuntimeError("no outer turning radius found")
    return _find_root(a, b, R, R * (1 + 1e-14), hi)


def _expand_hi(a, b, R, lo):
    hi = 2.0 * lo
    while _radial_poly(hi, a, b, R) > 0.0:
        hi *= 2.0
        if hi > 1e18:
            raise RuntimeError("outer root bracket failed")
    return hi


# -- quadrature ----------------------------------------------------------


def _smooth_endpoints(f):
    """Replace non-finite endpoint values by cubic extrapolation.

    The substituted integrands are analytic up to the leg ends, so the
    extrapolation error is O(grid step cubed).
    """
    if not np.isfinite(f[0]):
        f[0] = 3.0 * f[1] - 3.0 * f[2] + f[3]
    if not np.isfinite(f[-1]):
        f[-1] = 3.0 * f[-2] - 3.0 * f[-3] + f[-4]
    return f


def _leg_path(a, b, R, rA, rB, root_start, root_end, n):
    """Path-ordered cumulative (r, s, psi, |t|) on a monotone leg rA -> rB.

    Square-root substitutions absorb the turning-point singularity of
    1/sqrt(G) at whichever ends are simple roots, leaving smooth
    integrands for Simpson on the substitution parameter.
    """
    asc = rB > rA
    lo, hi = (rA, rB) if asc else (rB, rA)
    root_lo = root_start if asc else root_end
    root_hi = root_end if asc else root_start
    xi = np.linspace(0.0, 1.0, n)
    w = hi - lo
    if root_lo and root_hi:
        r = lo + w * np.sin(0.5 * math.pi * xi) ** 2
        drdxi = 0.5 * math.pi * w * np.sin(math.pi * xi)
    elif root_lo:
        r = lo + w * xi * xi
        drdxi = 2.0 * w * xi
    elif root_hi:
        r = hi - w * (1.0 - xi) ** 2
        drdxi = 2.0 * w * (1.0 - xi)
    else:
        r = lo + w * xi
        drdxi = np.full_like(xi, w)
    r[0], r[-1] = lo, hi
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(_radial_poly(r, a, b, R), 0.0))
        # force 0/0 at turning-point ends (G roundoff there can leave a
        # spuriously finite 0 that would dodge the extrapolation)
        if root_lo:
            sq[0] = 0.0
        if root_hi:
            sq[-1] = 0.0
        fs = _smooth_endpoints(r * drdxi / sq)
        fpsi = _smooth_endpoints(b * drdxi / (r * sq))
        ft = _smooth_endpoints(np.abs(a) * r * drdxi / ((1.0 - R / r) * sq))
    s = cumulative_simpson(fs, x=xi, initial=0.0)
    psi = cumulative_simpson(fpsi, x=xi, initial=0.0)
    t = cumulative_simpson(ft, x=xi, initial=0.0)
    if not asc:
        r = r[::-1]
        s = s[-1] - s[::-1]
        psi = psi[-1] - psi[::-1]
        t = t[-1] - t[::-1]
    return r, s, psi, t


def _asymptotic_leg(a, b, R, r_cur, circle, gap, n):
    """Leg approaching a double root; logarithmic clustering in |r - circle|."""
    sign = 1.0 if r_cur > circle else -1.0
    d0 = abs(r_cur - circle)
    u = np.linspace(math.log(gap * circle), math.log(d0), n)
    delta = np.exp(u)
    r = circle + sign * delta
    # factored form of G: r G(r) = (a^2-1) r^3 + R r^2 - b^2 r + R b^2 with
    # a double root at the circle radius; direct evaluation underflows to
    # roundoff near it
    c3 = a * a - 1.0
    if abs(c3) > 1e-14:
        r3 = -R / c3 - 2.0 * circle
        H = c3 * (r - r3) / r
    else:
        H = R / r
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = delta * np.sqrt(np.maximum(H, 0.0))
        fs = _smooth_endpoints(r * delta / sq)
        fpsi = _smooth_endpoints(b * delta / (r * sq))
        ft = _smooth_endpoints(np.abs(a) * r * delta / ((1.0 - R / r) * sq))
    s = cumulative_simpson(fs, x=u, initial=0.0)
    psi = cumulative_simpson(fpsi, x=u, initial=0.0)
    t = cumulative_simpson(ft, x=u, initial=0.0)
    # path order runs from r_cur toward the double root
    return (r[::-1], (s[-1] - s)[::-1], (psi[-1] - psi)[::-1],
            (t[-1] - t)[::-1])


@dataclass
class GeodesicPath:
    s: np.ndarray
    r: np.ndarray
    psi: np.ndarray
    t: np.ndarray
    legs: list
    flags: list

    def r_of_s(self, s_query):
        return np.interp(s_query, self.s, self.r)

    def psi_of_s(self, s_query):
        return np.interp(s_query, self.s, self.psi)


def integrate_timelike(a, b, r0, R, s_max, direction=+1, n_grid=4001,
                       r_floor_factor=1.0 + 1e-9, asymptote_gap=1e-8):
    """Radial quadrature path r(s), psi(s), t(s) up to proper time s_max.

    Simple turning points reflect the direction; double/triple roots are
    approached asymptotically (flagged, truncated at a relative gap);
    reaching the horizon ends the path (flagged 'horizon'). Exterior
    domain only.
    """
    cls = classify_timelike(a, b, r0, R)
    if not cls.feasible:
        raise ValueError(f"r0={r0} infeasible for case {cls.case}")
    roots = sorted(v for k, v in cls.roots.items() if k != "circle")
    circle = cls.roots.get("circle")
    if circle is not None and abs(r0 - circle) <= 1e-12 * circle:
        s = np.linspace(0.0, s_max, n_grid)
        psi = (b / circle**2) * s
        return GeodesicPath(s=s, r=np.full_like(s, r0), psi=psi,
                            t=(a / (1.0 - R / circle)) * s,
                            legs=[], flags=["circular"])

    r_min_dom = R * r_floor_factor
    s_acc, flags, legs = 0.0, [], []
    S = [np.array([0.0])]
    Rr = [np.array([r0], dtype=float)]
    PS = [np.array([0.0])]
    TT = [np.array([0.0])]
    r_cur, d = float(r0), int(direction)
    guard = 0
    while s_acc < s_max and guard < 64:
        guard += 1
        # next boundary in the travel direction
        if d > 0:
            above = [x for x in roots if x > r_cur * (1 + 1e-13)]
            target = min(above) if above else None
            if circle is not None and r_cur < circle and \
                    (target is None or circle < target):
                target = circle
            if target is None:
                target = _r_at_time(a, b, R, r_cur, s_max - s_acc)
                is_root = False
            else:
                is_root = True
        else:
            below = [x for x in roots if x < r_cur * (1 - 1e-13)]
            target = max(below) if below else None
            if circle is not None and r_cur > circle and \
                    (target is None or circle > target):
                target = circle
            is_root = target is not None
            if target is None or target < r_min_dom:
                target = r_min_dom
                is_root = False
        multiple = circle is not None and target is not None and \
            abs(target - circle) <= 1e-12 * circle
        scale = a * a * r_cur * r_cur + (r_cur * r_cur + b * b)
        root_start = abs(_radial_poly(r_cur, a, b, R)) <= 1e-10 * scale
        if multiple:
            flags.append("asymptotic")
            grid, s_leg, psi_leg, t_leg = _asymptotic_leg(
                a, b, R, r_cur, circle, asymptote_gap, n_grid)
        else:
            grid, s_leg, psi_leg, t_leg = _leg_path(
                a, b, R, r_cur, target, root_start, is_root, n_grid)
        legs.append((r_cur, float(grid[-1]), d))
        S.append(s_acc + s_leg[1:])
        Rr.append(grid[1:])
        PS.append(PS[-1][-1] + psi_leg[1:])
        TT.append(TT[-1][-1] + t_leg[1:] * np.sign(a))
        s_acc += s_leg[-1]
        r_cur = float(grid[-1])
        if multiple:
            break
        if not is_root:
            if d < 0 and abs(r_cur - r_min_dom) < 1e-12 * R:
                flags.append("horizon")
            break
        d = -d  # bounce at a simple root
    s = np.concatenate(S)
    return GeodesicPath(s=s, r=np.concatenate(Rr), psi=np.concatenate(PS),
                        t=np.concatenate(TT), legs=legs, flags=flags)


def _r_at_time(a, b, R, r_cur, s_budget):
    """Radius bound reached outward within the proper-time budget."""
    # rdot <= |a| on an unbounded outward leg (G <= a^2 r^2)
    hi = r_cur + abs(a) * s_budget * 1.05 + 1.0
    return hi


def case_asymptote(case, a, b, R, s):
    """Closed-form large-s radius for the parabolic/hyperbolic branches."""
    s = np.asarray(s, dtype=float)
    if case in ("1.1", "2.4-parabolic") and abs(a * a - 1.0) < 1e-12:
        return (9.0 * R * s * s / 4.0) ** (1.0 / 3.0)
    if a * a > 1.0:
        return np.abs(s) * math.sqrt(a * a - 1.0)
    raise ValueError("no unbounded asymptote for these constants")


# -- null rays -----------------------------------------------------------


ALPHA_CRIT_NUM = 2.0 / (3.0 * SQRT3)


def classify_null(alpha, R, tol=1e-12):
    """Light-ray trichotomy in the impact parameter.

    Case 2 also returns the maximal confined radius rho in (R, 3R/2) and
    the minimal parabolic radius rho' > 3R/2, both solving
    alpha^2 r^3 - r + R = 0.
    """
    ac = ALPHA_CRIT_NUM / R
    aa = abs(alpha)
    if abs(aa - ac) <= tol * ac:
        return {"case": 0, "r_circle": 1.5 * R}
    if aa > ac:
        return {"case": 1}
    out = {"case": 2}
    if aa == 0.0:
        out["rho"] = R
        out["rho_prime"] = math.inf
        return out
    h = lambda r: alpha * alpha * r**3 - r + R
    out["rho"] = brentq(h, R, 1.5 * R, xtol=1e-15, rtol=1e-15)
    hi = 3.0 * R
    while h(hi) < 0.0:
        hi *= 2.0
    out["rho_prime"] = brentq(h, 1.5 * R, hi, xtol=1e-15, rtol=1e-15)
    return out


def deflection_integral(rho, R, scheme="angular"):
    """Per-arch angular sweep of a confined ray with top radius rho.

    Integral of dr / sqrt(r (R - r + l^2 r^3)) from 0 to rho, with
    l^2 = (1 - R/rho)/rho^2. Two independent quadratures: 'angular'
    substitutes r = rho sin^2(theta) (both endpoint singularities
    removed), 'split' uses square-root substitutions on each half.
    """
    if not (R <= rho):
        raise ValueError("rho must be >= R")
    if rho >= 1.5 * R:
        raise ValueError("divergent: rho must be < 3R/2")
    l2 = (1.0 - R / rho) / (rho * rho)

    def Q(r):
        # (R - r + l2 r^3)/(rho - r), removable at r = rho
        num = R - r + l2 * r**3
        den = rho - r
        if abs(den) > 1e-9 * rho:
            return num / den
        return 1.0 - 3.0 * l2 * rho * rho  # removable limit: -num'(rho)

    if scheme == "angular":
        f = lambda th: 2.0 / math.sqrt(Q(rho * math.sin(th) ** 2))
        val, _ = quad(f, 0.0, math.pi / 2.0, limit=400, epsabs=1e-13,
                      epsrel=1e-13)
        return val
    if scheme == "split":
        g = lambda r: 1.0 / math.sqrt(r * (R - r + l2 * r**3))
        mid = 0.5 * rho
        f1 = lambda x: 2.0 * g(x * x) * x  # r = x^2 near 0
        v1, _ = quad(f1, 0.0, math.sqrt(mid), limit=400, epsabs=1e-13,
                     epsrel=1e-13)
        f2 = lambda y: 2.0 * g(rho - y * y) * y  # r = rho - y^2 near rho
        v2, _ = quad(f2, 0.0, math.sqrt(rho - mid), limit=400, epsabs=1e-13,
                     epsrel=1e-13)
        return v1 + v2
    raise ValueError(f"unknown scheme {scheme!r}")


def null_arch(alpha, R, r_min=1e-10, n=20001):
    """One confined arch r: r_min -> rho, returning (r, psi) by quadrature."""
    info = classify_null(alpha, R)
    if info["case"] != 2:
        raise ValueError("confined arch needs case 2")
    rho = info["rho"]
    th = np.linspace(0.0, math.pi / 2, n)
    r = rho * np.sin(th) ** 2
    l2 = alpha * alpha
    # r (R - r + l2 r^3) = r (rho - r) Q(r) with r (rho - r) the square of
    # (rho/2) sin(2 theta); Q stays positive on the arch
    Q = np.where(np.abs(rho - r) > 1e-9 * rho,
                 (R - r + l2 * r**3) / np.where(r == rho, 1.0, rho - r),
                 1.0 - 3.0 * l2 * rho * rho)
    integ = 2.0 / np.sqrt(Q)
    psi = cumulative_simpson(integ, x=th, initial=0.0)
    return r, psi


def horizon_cylinder_geodesic(b, k, s, R, s0=0.0, sign=+1.0):
    """Closed-form polar angle of a geodesic lying on the horizon cylinder.

    Valid for 0 < |k| < b; the orbit oscillates with period 2 pi R^2 / b.
    """
    if not 0.0 < abs(k) < b:
        raise ValueError("need 0 < |k| < b")
    s = np.asarray(s, dtype=float)
    amp = math.sqrt(1.0 - k * k / (b * b))
    return np.arccos(amp * np.sin(sign * b * (s - s0) / (R * R)))


def circular_radii(b, R):
    """Radii of the centred circular orbits at angular momentum b (b > R sqrt 3)."""
    cp = critical_points(b, R)
    if cp is None:
        return ()
    u1, u2, _, _ = cp
    if u1 == u2:
        return (1.0 / u1,)
    return (1.0 / u1, 1.0 / u2)
