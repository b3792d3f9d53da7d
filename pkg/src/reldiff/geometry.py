"""Pseudo-Riemannian primitives shared by all simulators.

Charts, metrics, closed-form Christoffel symbols, frames, parallel transport.
Conventions: metric signature (+,-,...,-); index 0 of a chart point is its
time-oriented coordinate unless noted (Kruskal uses index 1 for v).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CHARTS = (
    "minkowski",
    "schwarzschild-spherical",
    "eddington-finkelstein-inward",
    "eddington-finkelstein-outward",
    "kruskal",
)

# spherical chart refuses r <= R*(1+SPHERICAL_R_TOL); EF/KS charts allow 0 < r
SPHERICAL_R_TOL = 1e-9
POLE_TOL = 1e-9


class ChartDomainError(ValueError):
    """Point lies outside the domain of the requested chart."""


class FrameDegenerateError(RuntimeError):
    """Frame lost pseudo-orthonormalizability (e0 no longer timelike)."""


def minkowski_inner(x, y):
    """Lorentzian inner product x0*y0 - sum_j xj*yj."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(x[0] * y[0] - x[1:] @ y[1:])


def radius_from_ks(w, R):
    """Invert (r/R - 1) e^(r/R) = w for r >= 0, by safeguarded Newton.

    w >= -1 is required; w = -1 maps to r = 0, w = 0 to r = R.
    """
    if w < -1.0:
        raise ChartDomainError(f"no radius for w={w} < -1")
    R = float(R)
    if w == -1.0:
        return 0.0
    # initial guess: r ~ R*(1+w) for small |w|, r ~ R*log(w) branch for large w
    if w > 3.0:
        x = math.log(w)
        x = x + math.log(max(x, 1.0))  # rough inverse of (x-1)e^x
    else:
        x = max(1e-12, 1.0 + 0.5 * w)
    lo, hi = 0.0, max(4.0 * x, 8.0)
    while (hi / 1.0 - 1.0) * math.exp(hi) < w:
        hi *= 2.0
    target = 1.0 + abs(w)
    for _ in range(200):
        f = (x - 1.0) * math.exp(x) - w
        if abs(f) <= 1e-15 * target:
            break
        if f > 0:
            hi = x
        else:
            lo = x
        fp = x * math.exp(x)
        step = f / fp if fp > 0 else 0.0
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        x = x_new
    return R * x


@dataclass(frozen=True)
class MetricProvider:
    """Metric, inverse metric and Christoffel symbols for one chart.

    R is the hole radius (unused for the flat chart); d the spatial dimension
    of the flat chart (curved charts are 3+1 always).
    """

    chart: str
    R: float = 1.0
    d: int = 3

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise ValueError(f"unknown chart {self.chart!r}")

    @property
    def dim(self):
        return 1 + self.d if self.chart == "minkowski" else 4

    # -- domain ---------------------------------------------------------

    def check_domain(self, point):
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise ChartDomainError(f"point shape {p.shape} != ({self.dim},)")
        c, R = self.chart, self.R
        if c == "minkowski":
            return
        if c == "schwarzschild-spherical":
            if p[1] <= R * (1.0 + SPHERICAL_R_TOL):
                raise ChartDomainError(f"r={p[1]} <= R in spherical chart")
            if abs(math.sin(p[2])) < POLE_TOL:
                raise ChartDomainError("polar axis sin(phi)=0")
        elif c.startswith("eddington"):
            if p[1] <= 0.0:
                raise ChartDomainError(f"r={p[1]} <= 0")
            if abs(math.sin(p[2])) < POLE_TOL:
                raise ChartDomainError("polar axis sin(phi)=0")
        elif c == "kruskal":
            u, v = p[0], p[1]
            if u * u - v * v <= -1.0:
                raise ChartDomainError("u^2 - v^2 <= -1 (past the singularity)")
            if abs(math.sin(p[2])) < POLE_TOL:
                raise ChartDomainError("polar axis sin(phi)=0")

    # -- metric ---------------------------------------------------------

    def metric(self, point):
        self.check_domain(point)
        p = np.asarray(point, dtype=float)
        c, R = self.chart, self.R
        if c == "minkowski":
            g = -np.eye(self.dim)
            g[0, 0] = 1.0
            return g
        g = np.zeros((4, 4))
        if c == "schwarzschild-spherical":
            t, r, phi = p[0], p[1], p[2]
            f = 1.0 - R / r
            g[0, 0] = f
            g[1, 1] = -1.0 / f
            g[2, 2] = -r * r
            g[3, 3] = -r * r * math.sin(phi) ** 2
        elif c.startswith("eddington"):
            r, phi = p[1], p[2]
            sgn = -1.0 if c.endswith("inward") else 1.0
            g[0, 0] = 1.0 - R / r
            g[0, 1] = g[1, 0] = sgn
            g[2, 2] = -r * r
            g[3, 3] = -r * r * math.sin(phi) ** 2
        else:  # kruskal
            u, v, phi = p[0], p[1], p[2]
            r = radius_from_ks(u * u - v * v, R)
            F = 4.0 * R**3 * math.exp(-r / R) / r
            g[0, 0] = -F
            g[1, 1] = F
            g[2, 2] = -r * r
            g[3, 3] = -r * r * math.sin(phi) ** 2
        return g

    def metric_inverse(self, point):
        g = self.metric(point)
        if self.chart.startswith("eddington"):
            # closed form: [[0, sgn],[sgn, -(1-R/r)]] block, diagonal angular
            gi = np.zeros_like(g)
            sgn = g[0, 1]
            gi[0, 1] = gi[1, 0] = sgn
            gi[1, 1] = -g[0, 0]
            gi[2, 2] = 1.0 / g[2, 2]
            gi[3, 3] = 1.0 / g[3, 3]
            return gi
        return np.linalg.inv(g)

    def time_axis(self):
        """Index of the chart coordinate carrying the future orientation."""
        return 1 if self.chart == "kruskal" else 0

    # -- Christoffel symbols -------------------------------------------

    def christoffel(self, point):
        """Gamma[k, i, j], symmetric in (i, j); closed forms per chart."""
        self.check_domain(point)
        p = np.asarray(point, dtype=float)
        c, R = self.chart, self.R
        n = self.dim
        G = np.zeros((n, n, n))
        if c == "minkowski":
            return G
        r, phi = p[1], p[2]
        sphi, cphi = math.sin(phi), math.cos(phi)
        if c == "schwarzschild-spherical":
            G[0, 1, 0] = G[0, 0, 1] = R / (2.0 * r * (r - R))
            G[1, 1, 1] = -R / (2.0 * r * (r - R))
            G[1, 0, 0] = R * (r - R) / (2.0 * r**3)
            G[1, 2, 2] = R - r
            G[1, 3, 3] = (R - r) * sphi * sphi
            G[2, 1, 2] = G[2, 2, 1] = 1.0 / r
            G[2, 3, 3] = -sphi * cphi
            G[3, 1, 3] = G[3, 3, 1] = 1.0 / r
            G[3, 2, 3] = G[3, 3, 2] = cphi / sphi
        elif c.startswith("eddington"):
            sgn = -1.0 if c.endswith("inward") else 1.0
            # derived symbolically once and frozen; regression-tested against
            # finite differences of the metric
            G[0, 0, 0] = -sgn * R / (2.0 * r * r)
            G[0, 2, 2] = sgn * r
            G[0, 3, 3] = sgn * r * sphi * sphi
            G[1, 0, 0] = R * (r - R) / (2.0 * r**3)
            G[1, 0, 1] = G[1, 1, 0] = sgn * R / (2.0 * r * r)
            G[1, 2, 2] = R - r
            G[1, 3, 3] = (R - r) * sphi * sphi
            G[2, 1, 2] = G[2, 2, 1] = 1.0 / r
            G[2, 3, 3] = -sphi * cphi
            G[3, 1, 3] = G[3, 3, 1] = 1.0 / r
            G[3, 2, 3] = G[3, 3, 2] = cphi / sphi
        else:  # kruskal: standard formula with analytic metric derivatives
            G = self._christoffel_generic(p)
        return G

    def metric_derivatives(self, point):
        """dg[i, j, k] = d g_jk / d x^i, analytic, for the Kruskal chart."""
        if self.chart != "kruskal":
            raise NotImplementedError("analytic dg coded for the kruskal chart only")
        p = np.asarray(point, dtype=float)
        u, v, phi = p[0], p[1], p[2]
        R = self.R
        r = radius_from_ks(u * u - v * v, R)
        if r <= 0.0:
            raise ChartDomainError("r = 0 on the singularity")
        sphi, cphi = math.sin(phi), math.cos(phi)
        e = math.exp(-r / R)
        F = 4.0 * R**3 * e / r
        dF = -4.0 * R**3 * e * (r + R) / (r * r * R)  # dF/dr
        # dr/du, dr/dv from f'(r) = (r/R^2) e^(r/R)
        dr_du = 2.0 * u * R * R * e / r
        dr_dv = -2.0 * v * R * R * e / r
        dg = np.zeros((4, 4, 4))
        for i, dr in ((0, dr_du), (1, dr_dv)):
            dg[i, 0, 0] = -dF * dr
            dg[i, 1, 1] = dF * dr
            dg[i, 2, 2] = -2.0 * r * dr
            dg[i, 3, 3] = -2.0 * r * dr * sphi * sphi
        dg[2, 3, 3] = -2.0 * r * r * sphi * cphi
        return dg

    def _christoffel_generic(self, p):
        gi = self.metric_inverse(p)
        dg = self.metric_derivatives(p)
        # Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)
        sym = np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - dg
        return 0.5 * np.einsum("kl,lij->kij", gi, sym)

    def ricci(self, point, h=1e-5):
        """Ricci tensor by central finite differences of the Christoffels."""
        p = np.asarray(point, dtype=float)
        n = self.dim
        G0 = self.christoffel(p)
        dG = np.zeros((n, n, n, n))  # dG[m, k, i, j] = d Gamma^k_ij / d x^m
        for m in range(n):
            dp = np.zeros(n)
            dp[m] = h
            dG[m] = (self.christoffel(p + dp) - self.christoffel(p - dp)) / (2.0 * h)
        # R_ij = d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik
        term1 = np.einsum("kkij->ij", dG)
        term2 = np.einsum("jkik->ij", dG)
        term3 = np.einsum("kkl,lij->ij", G0, G0)
        term4 = np.einsum("kjl,lik->ij", G0, G0)
        return term1 - term2 + term3 - term4


# -- frames -------------------------------------------------------------


@dataclass
class Frame:
    """Pseudo-orthonormal frame at a chart point; columns of e are e0..ed."""

    point: np.ndarray
    e: np.ndarray  # (dim, dim), column j is the frame leg e_j

    def copy(self):
        return Frame(self.point.copy(), self.e.copy())


def frame_gram(frame: Frame, provider: MetricProvider):
    g = provider.metric(frame.point)
    return frame.e.T @ g @ frame.e


def frame_residual(frame: Frame, provider: MetricProvider):
    """Max deviation of the Gram matrix from the flat form eta."""
    n = provider.dim
    eta = -np.eye(n)
    eta[0, 0] = 1.0
    return float(np.max(np.abs(frame_gram(frame, provider) - eta)))


def renormalize_frame(frame: Frame, provider: MetricProvider) -> Frame:
    """Pseudo-metric orthonormalization, e0 first; idempotent.

    e0 is rescaled to unit pseudo-norm, the remaining legs are projected
    off e0 and then symmetrically (Loewdin) orthonormalized. The symmetric
    choice commutes with the SO_d action on the spatial legs, so rotating
    legs and noise together leaves the (x, e0) path unchanged.
    """
    g = provider.metric(frame.point)
    e = frame.e.astype(float).copy()
    nrm0 = e[:, 0] @ g @ e[:, 0]
    if nrm0 <= 0.0 or not np.isfinite(nrm0):
        raise FrameDegenerateError(f"e0 pseudo-norm {nrm0} not positive")
    e[:, 0] /= math.sqrt(nrm0)
    V = e[:, 1:] - np.outer(e[:, 0], e[:, 0] @ g @ e[:, 1:])
    A = -(V.T @ g @ V)
    w, U = np.linalg.eigh(0.5 * (A + A.T))
    if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
        raise FrameDegenerateError("spatial legs lost spacelike character")
    e[:, 1:] = V @ (U / np.sqrt(w)) @ U.T
    ta = provider.time_axis()
    if e[ta, 0] < 0.0:
        raise FrameDegenerateError("e0 not future-directed")
    return Frame(frame.point.copy(), e)


def coordinate_frame(provider: MetricProvider, point) -> Frame:
    """A pseudo-orthonormal frame built from the coordinate basis at point."""
    n = provider.dim
    point = np.asarray(point, dtype=float)
    e = np.eye(n)
    ta = provider.time_axis()
    if ta != 0:
        e = e[:, [ta] + [i for i in range(n) if i != ta]]
    g = provider.metric(point)
    if e[:, 0] @ g @ e[:, 0] <= 0.0:
        # coordinate time axis not timelike here (e.g. inside the hole in EF
        # coordinates): seed e0 with a timelike combination instead
        gi = provider.metric_inverse(point)
        w, V = np.linalg.eigh(gi)
        cand = V[:, np.argmax(w)]
        if cand[ta] < 0:
            cand = -cand
        e[:, 0] = cand
    return renormalize_frame(Frame(point, e), provider)


def frame_from_velocity(provider: MetricProvider, point, velocity) -> Frame:
    """Complete a unit timelike velocity to a pseudo-orthonormal frame."""
    point = np.asarray(point, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    n = provider.dim
    e = np.eye(n)
    cols = [velocity]
    for j in range(n):
        cols.append(e[:, j])
    # pick n columns with the velocity first; Gram-Schmidt drops the
    # near-dependent one automatically via the degeneracy error, so try axes
    # in every order until one completes
    for skip in range(n):
        trial = [velocity] + [e[:, j] for j in range(n) if j != skip]
        try:
            return renormalize_frame(Frame(point, np.column_stack(trial)), provider)
        except FrameDegenerateError:
            continue
    raise FrameDegenerateError("could not complete velocity to a frame")


# -- parallel transport -------------------------------------------------


def transport_inverse_step(transport, provider: MetricProvider, point, velocity, h):
    """Advance the running inverse-parallel-transport matrix by one RK2 step.

    The matrix P maps vectors at the current point back to the initial
    tangent space; it obeys dP_li/ds = P_lq Gamma^q_im xdot^m.
    """
    P = np.asarray(transport, dtype=float)
    x = np.asarray(point, dtype=float)
    xd = np.asarray(velocity, dtype=float)
    G = provider.christoffel(x)
    A = np.einsum("qim,m->qi", G, xd)
    k1 = P @ A
    x_mid = x + 0.5 * h * xd
    G_mid = provider.christoffel(x_mid)
    A_mid = np.einsum("qim,m->qi", G_mid, xd)
    k2 = (P + 0.5 * h * k1) @ A_mid
    return P + h * k2


def transport_metric_correction(transport, provider, point0, point1):
    """Restore exact metric preservation: P^T g(x0) P = g(x1).

    Conjugates P into flat frames at both ends and Gram-Schmidts the
    resulting approximate Lorentz matrix.
    """
    L0 = coordinate_frame(provider, point0).e
    L1 = coordinate_frame(provider, point1).e
    Q = np.linalg.inv(L0) @ transport @ L1
    n = Q.shape[0]
    eta = -np.eye(n)
    eta[0, 0] = 1.0
    # Gram-Schmidt columns of Q in the eta metric (first column timelike)
    E = Q.copy()
    c0 = E[:, 0]
    nrm0 = c0 @ eta @ c0
    if nrm0 <= 0:
        raise FrameDegenerateError("transport correction lost timelike axis")
    E[:, 0] = c0 / math.sqrt(nrm0)
    for j in range(1, n):
        v = E[:, j]
        v = v - (E[:, 0] @ eta @ v) * E[:, 0]
        for i in range(1, j):
            v = v + (E[:, i] @ eta @ v) * E[:, i]
        nrm = -(v @ eta @ v)
        if nrm <= 0:
            raise FrameDegenerateError("transport correction degenerate")
        E[:, j] = v / math.sqrt(nrm)
    return L0 @ E @ np.linalg.inv(L1)


# -- chart transition maps ---------------------------------------------


def tortoise(r, R):
    return r + R * math.log(abs(r / R - 1.0))


def spherical_to_ef(point, velocity, R, inward=True):
    """(t,r,phi,psi) -> EF chart, exterior region r > R."""
    t, r = point[0], point[1]
    f = 1.0 - R / r
    if inward:
        u = t + tortoise(r, R)
        ud = velocity[0] + velocity[1] / f
    else:
        u = t - tortoise(r, R)
        ud = velocity[0] - velocity[1] / f
    p = np.array([u, r, point[2], point[3]])
    vel = np.array([ud, velocity[1], velocity[2], velocity[3]])
    return p, vel


def ef_to_spherical(point, velocity, R, inward=True):
    u, r = point[0], point[1]
    f = 1.0 - R / r
    if inward:
        t = u - tortoise(r, R)
        td = velocity[0] - velocity[1] / f
    else:
        t = u + tortoise(r, R)
        td = velocity[0] + velocity[1] / f
    p = np.array([t, r, point[2], point[3]])
    vel = np.array([td, velocity[1], velocity[2], velocity[3]])
    return p, vel


def ks_from_schwarzschild(t, r, R):
    """Exterior map to Kruskal coordinates (u, v), with u > |v|."""
    if r <= R:
        raise ChartDomainError(f"r={r} <= R in the exterior map")
    A = math.sqrt(r / R - 1.0) * math.exp(r / (2.0 * R))
    return A * math.cosh(t / (2.0 * R)), A * math.sinh(t / (2.0 * R))


def spherical_to_ks(point, velocity, R):
    t, r = point[0], point[1]
    u, v = ks_from_schwarzschild(t, r, R)
    f = 1.0 - R / r
    du_dr = u / (2.0 * R * f)
    dv_dr = v / (2.0 * R * f)
    ud = v / (2.0 * R) * velocity[0] + du_dr * velocity[1]
    vd = u / (2.0 * R) * velocity[0] + dv_dr * velocity[1]
    p = np.array([u, v, point[2], point[3]])
    vel = np.array([ud, vd, velocity[2], velocity[3]])
    return p, vel


def ef_coordinates_from_ks(u, v, R):
    """(u_minus, u_plus) from Kruskal (u, v); NaN where undefined."""
    um = 2.0 * R * math.log(abs(u + v)) if u + v != 0.0 else math.nan
    up = -2.0 * R * math.log(abs(u - v)) if u - v != 0.0 else math.nan
    return um, up


def ks_from_ef_inward(u_minus, r, R, branch=+1.0):
    """Kruskal (u, v) from the inward EF chart; branch = sign of (u+v)."""
    s = branch * math.exp(u_minus / (2.0 * R))  # u + v
    d = (r / R - 1.0) * math.exp(r / R) / s  # u - v = f(r)/(u+v)
    return 0.5 * (s + d), 0.5 * (s - d)
