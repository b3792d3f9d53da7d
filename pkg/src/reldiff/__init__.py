"""Relativistic diffusion laboratory.

Simulates geodesic flow with vertical Brownian noise in flat and
black-hole spacetimes, continues trajectories through the central
singularity, classifies asymptotic fates by Monte Carlo, and ships an
exact geodesic classifier/integrator as the noiseless reference.
"""

from .geometry import MetricProvider, Frame, renormalize_frame

__all__ = ["MetricProvider", "Frame", "renormalize_frame"]
__version__ = "0.1.0"
