"""Flat-space relativistic diffusion: hyperbolic Brownian velocity.

The velocity p lives on the unit pseudo-sphere {p0 > 0, <p,p> = 1}; it is
driven by isotropic noise in the orthogonal complement of p plus the
radial drift (d sigma^2/2) p, and the position integrates p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import minkowski_inner


@dataclass
class MinkowskiState:
    xi: np.ndarray  # position, (1+d,)
    p: np.ndarray  # velocity, (1+d,), <p,p> = 1, p0 >= 1
    s: float = 0.0
    legs: np.ndarray | None = None  # spatial frame legs carrying the noise

    @property
    def d(self):
        return self.p.shape[0] - 1

    def rapidity(self):
        return math.acosh(max(1.0, float(self.p[0])))

    def direction(self):
        """Unit vector p_vec / sqrt(p0^2 - 1); undefined at rest."""
        nrm = math.sqrt(max(0.0, float(self.p[0]) ** 2 - 1.0))
        if nrm == 0.0:
            raise ValueError("direction undefined for p at rest")
        return self.p[1:] / nrm


def boost_generators(d):
    """Matrices E_j = e0 (x) ej* + ej (x) e0*, j = 1..d.

    Antisymmetric for the Minkowski form: E^T eta + eta E = 0.
    """
    out = []
    for j in range(1, d + 1):
        E = np.zeros((1 + d, 1 + d))
        E[0, j] = E[j, 0] = 1.0
        out.append(E)
    return out


def boost_matrix(zeta, axis, d):
    """Pure boost exp(zeta * E_axis)."""
    M = np.eye(1 + d)
    M[0, 0] = M[axis, axis] = math.cosh(zeta)
    M[0, axis] = M[axis, 0] = math.sinh(zeta)
    return M


def boost_noise(p, xi_vec):
    """sum_i e_i * xi_i for the boosted frame completing p.

    Closed form for the pure-boost legs: e_i^0 = p_i,
    e_i^j = delta_ij + p_i p_j / (1 + p0).
    """
    p = np.asarray(p, dtype=float)
    dot = p[1:] @ xi_vec
    out = np.empty_like(p)
    out[0] = dot
    out[1:] = xi_vec + p[1:] * (dot / (1.0 + p[0]))
    return out


def renormalize_velocity(p):
    # vertical projection p0 := sqrt(1 + |p_vec|^2): unlike rescaling by the
    # pseudo-norm it stays well conditioned when p0 is astronomically large
    out = np.array(p, dtype=float)
    out[0] = math.sqrt(1.0 + out[1:] @ out[1:])
    return out


_FLAT_PROVIDERS: dict = {}


def _flat_provider(d):
    from .geometry import MetricProvider

    if d not in _FLAT_PROVIDERS:
        _FLAT_PROVIDERS[d] = MetricProvider(chart="minkowski", R=0.0, d=d)
    return _FLAT_PROVIDERS[d]


def step_minkowski(state: MinkowskiState, sigma: float, h: float,
                   noise: np.ndarray) -> MinkowskiState:
    """One Ito step of the velocity SDE plus midpoint position update.

    Runs the general frame flow on the flat chart so that a single-path
    comparison against the curved-space stepper is exact; the vectorized
    ensemble below uses the closed-form boost legs instead (same law).
    """
    from .frames import FrameState, ito_frame_step
    from .geometry import Frame, frame_from_velocity

    provider = _flat_provider(state.d)
    xi = np.asarray(state.xi, dtype=float)
    if state.legs is None:
        frame = frame_from_velocity(provider, xi, np.asarray(state.p, dtype=float))
    else:
        frame = Frame(xi, np.column_stack([state.p, state.legs]))
    fs = ito_frame_step(FrameState(frame=frame), provider, sigma, h, noise)
    p_new = fs.frame.e[:, 0]
    xi_new = xi + 0.5 * h * (state.p + p_new)
    return MinkowskiState(xi=xi_new, p=p_new, s=state.s + h,
                          legs=fs.frame.e[:, 1:].copy())


def simulate_velocity_ensemble(p0, sigma, h, n_steps, rng, n_paths,
                               stop_p0=None, record_positions=False):
    """Vectorized ensemble of velocity paths from a common start.

    Returns final (p, xi, t_steps). One shared generator: the caller is
    responsible for stream keying when strict per-trajectory streams are
    required (see rng.trajectory_rng).
    """
    d = len(p0) - 1
    p = np.tile(np.asarray(p0, dtype=float), (n_paths, 1))
    xi = np.zeros_like(p)
    active = np.ones(n_paths, dtype=bool)
    drift = d * sigma * sigma / 2.0
    sqh = math.sqrt(h)
    for _ in range(n_steps):
        if stop_p0 is not None and not active.any():
            break
        idx = np.nonzero(active)[0] if stop_p0 is not None else slice(None)
        pa = p[idx]
        z = rng.standard_normal((pa.shape[0], d))
        dot = np.einsum("ij,ij->i", pa[:, 1:], z)
        noise = np.empty_like(pa)
        noise[:, 0] = dot
        noise[:, 1:] = z + pa[:, 1:] * (dot / (1.0 + pa[:, 0]))[:, None]
        pn = pa + drift * pa * h + sigma * sqh * noise
        pn[:, 0] = np.sqrt(1.0 + np.einsum("ij,ij->i", pn[:, 1:], pn[:, 1:]))
        xi[idx] = xi[idx] + 0.5 * h * (pa + pn)
        p[idx] = pn
        if stop_p0 is not None:
            active[idx] = pn[:, 0] < stop_p0
    return p, xi


def asymptotic_direction(path, p0_threshold=1e3):
    """Terminal direction estimate of a sampled trajectory.

    Returns (theta, mean_velocity, decided): theta from the last sample,
    Z(t)/t at the last absolute time, and a flag saying whether the
    velocity grew enough for the estimate to be trusted.
    """
    last = path[-1]
    decided = float(last.p[0]) >= p0_threshold
    t = float(last.xi[0])
    zt = last.xi[1:] / t if t > 0 else np.zeros(last.d)
    nrm = math.sqrt(max(0.0, float(last.p[0]) ** 2 - 1.0))
    theta = last.p[1:] / nrm if nrm > 0 else np.zeros(last.d)
    return theta, zt, decided


def ball_point(p):
    """Map a unit timelike velocity into the open unit ball: x = p_vec/(1+p0)."""
    p = np.asarray(p, dtype=float)
    return p[1:] / (1.0 + p[0])


def poisson_kernel(x, theta):
    """Classical Poisson kernel of the unit ball, (1-|x|^2)/|x-theta|^d."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = x.shape[-1]
    num = 1.0 - np.sum(x * x, axis=-1)
    den = np.sum((x - theta) ** 2, axis=-1) ** (d / 2.0)
    return num / den


def scattering_density(p0, theta):
    """Density of the asymptotic direction on the unit sphere.

    Proportional to the Poisson kernel at x = ball_point(p0) raised to the
    power d-1, normalized over the sphere. theta may be a single unit
    vector or an array of them.
    """
    x = ball_point(p0)
    d = x.shape[0]
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    vals = poisson_kernel(x[None, :], theta) ** (d - 1)
    norm = _scattering_norm(x, d)
    out = vals / norm
    return out[0] if out.shape[0] == 1 else out


def _scattering_norm(x, d):
    """Integral of P(x,.)^(d-1) over the sphere, by polar quadrature."""
    from scipy.integrate import quad

    r = float(np.linalg.norm(x))
    if d == 2:
        f = lambda a: poisson_kernel(np.array([r, 0.0]),
                                     np.array([math.cos(a), math.sin(a)]))
        val, _ = quad(f, 0.0, 2.0 * math.pi, limit=200)
        return val
    if d == 3:
        # azimuthal symmetry about x: integrate over the polar angle
        f = lambda a: poisson_kernel(
            np.array([r, 0.0, 0.0]),
            np.array([math.cos(a), math.sin(a), 0.0])) ** 2 * 2.0 * math.pi * math.sin(a)
        val, _ = quad(f, 0.0, math.pi, limit=200)
        return val
    raise NotImplementedError("scattering density coded for d in {2, 3}")
