"""Frame-bundle diffusion in local coordinates.

State: a pseudo-orthonormal frame (e0..ed) over a chart point, the running
inverse parallel transport, and the developed velocity zeta living in the
initial tangent space. e0 is the 4-velocity; the spatial legs carry the
noise and are internal (the law of (x, e0) does not depend on them).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    ChartDomainError,
    Frame,
    MetricProvider,
    frame_from_velocity,
    renormalize_frame,
    transport_inverse_step,
)


class ChartSwitchNeeded(RuntimeError):
    """Step rejected: the point would leave the chart domain mid-step."""


@dataclass
class FrameState:
    frame: Frame
    s: float = 0.0
    transport_inv: np.ndarray | None = None
    zeta: np.ndarray | None = None

    def __post_init__(self):
        n = self.frame.e.shape[0]
        if self.transport_inv is None:
            self.transport_inv = np.eye(n)
        if self.zeta is None:
            self.zeta = self.transport_inv @ self.frame.e[:, 0]


def initial_frame_state(provider: MetricProvider, point, velocity) -> FrameState:
    return FrameState(frame=frame_from_velocity(provider, point, velocity))


def _geodesic_field(provider, x, E):
    """Deterministic part: dx = e0, dE_j = -Gamma(e_j, e0)."""
    G = provider.christoffel(x)
    e0 = E[:, 0]
    dE = -np.einsum("kil,lj,i->kj", G, E, e0)
    return e0, dE


def ito_frame_step(state: FrameState, provider: MetricProvider, sigma: float,
                   h: float, noise: np.ndarray) -> FrameState:
    """One step: midpoint drift stage, Euler noise, frame renormalization.

    Raises ChartSwitchNeeded when the step would exit the chart domain.
    """
    x = state.frame.point
    E = state.frame.e
    n = E.shape[0]
    d = n - 1
    try:
        k1x, k1E = _geodesic_field(provider, x, E)
        k2x, k2E = _geodesic_field(provider, x + 0.5 * h * k1x, E + 0.5 * h * k1E)
    except ChartDomainError as exc:
        raise ChartSwitchNeeded(str(exc)) from exc
    x_new = x + h * k2x
    E_new = E + h * k2E
    if sigma > 0.0:
        sqh = math.sqrt(h)
        s2 = sigma * sigma
        # vertical noise: e0 shuffles into the spatial legs and back
        E_new[:, 0] += sigma * sqh * (E[:, 1:] @ noise[:d]) + 0.5 * d * s2 * h * E[:, 0]
        E_new[:, 1:] += sigma * sqh * np.outer(E[:, 0], noise[:d]) + 0.5 * s2 * h * E[:, 1:]
    try:
        frame = renormalize_frame(Frame(x_new, E_new), provider)
    except ChartDomainError as exc:
        raise ChartSwitchNeeded(str(exc)) from exc
    P = transport_inverse_step(state.transport_inv, provider, x, E[:, 0], h)
    return FrameState(frame=frame, s=state.s + h, transport_inv=P,
                      zeta=P @ frame.e[:, 0])


def vertical_covariation(frame: Frame, provider: MetricProvider, sigma: float):
    """K = sigma^2 (e0 e0^T - g^{-1}); the one-step noise covariance rate."""
    e0 = frame.e[:, 0]
    return sigma**2 * (np.outer(e0, e0) - provider.metric_inverse(frame.point))


def development_check(path, provider: MetricProvider):
    """Diagnostics for the developed velocity along a sampled path.

    zeta must stay on the unit pseudo-sphere of the initial tangent space;
    returns its max pseudo-norm drift and the total quadratic variation of
    zeta (which the flat picture predicts to be that of a hyperbolic BM).
    """
    g0 = provider.metric(path[0].frame.point)
    norms = np.array([z @ g0 @ z for z in (st.zeta for st in path)])
    zetas = np.array([st.zeta for st in path])
    dz = np.diff(zetas, axis=0)
    qv = float(np.einsum("ij,ij->", dz, dz))
    return {
        "max_pseudo_norm_drift": float(np.max(np.abs(norms - norms[0]))),
        "quadratic_variation": qv,
        "final_zeta": zetas[-1],
    }


def schwarzschild_constants(provider: MetricProvider, point, velocity):
    """(a, b) from a spherical-chart state: a = (1-R/r) tdot, b = r^2 |thetadot|."""
    r, phi = point[1], point[2]
    a = (1.0 - provider.R / r) * velocity[0]
    u2 = velocity[2] ** 2 + math.sin(phi) ** 2 * velocity[3] ** 2
    return a, r * r * math.sqrt(u2)
