"""Frame-bundle stepper: invariants, covariation law, development."""

import math

import numpy as np
import pytest

from reldiff.frames import (
    ChartSwitchNeeded,
    FrameState,
    development_check,
    initial_frame_state,
    ito_frame_step,
    schwarzschild_constants,
    vertical_covariation,
)
from reldiff.geometry import MetricProvider, frame_residual
from reldiff.kernels import CHART_SPH, geodesic_run
from reldiff.minkowski import MinkowskiState, step_minkowski
from reldiff.rng import trajectory_rng

R = 1.0
SPH = MetricProvider(chart="schwarzschild-spherical", R=R)
FLAT = MetricProvider(chart="minkowski", R=0.0, d=3)


def spherical_start(r0=3.0, a=1.2, b=2.0, T_sign=-1.0):
    f = 1.0 - R / r0
    T = T_sign * math.sqrt(a * a - f * (1.0 + b * b / (r0 * r0)))
    v = np.array([a / f, T, 0.0, b / (r0 * r0)])
    return initial_frame_state(SPH, np.array([0.0, r0, math.pi / 2, 0.0]), v)


def test_initial_frame_is_orthonormal():
    st = spherical_start()
    assert frame_residual(st.frame, SPH) < 1e-12
    assert abs(st.zeta @ SPH.metric(st.frame.point) @ st.zeta - 1.0) < 1e-12


def test_geodesic_conserves_energy_and_momentum():
    st = spherical_start()
    a0, b0 = schwarzschild_constants(SPH, st.frame.point, st.frame.e[:, 0])
    h = 1e-3
    for _ in range(500):
        st = ito_frame_step(st, SPH, 0.0, h, np.zeros(3))
    a1, b1 = schwarzschild_constants(SPH, st.frame.point, st.frame.e[:, 0])
    # midpoint drift stage: O(h^2) global drift of the constants
    assert abs(a1 - a0) < 5e-6
    assert abs(b1 - b0) < 5e-6


def test_geodesic_kernel_matches_python_stepper():
    st = spherical_start()
    x = st.frame.point.copy()
    v = st.frame.e[:, 0].copy()
    rec_r = np.empty(10)
    rec_s = np.empty(10)
    n, status = geodesic_run(CHART_SPH, R, x, v, 1e-3, 500, rec_r, rec_s, 100)
    assert status == 0 and n == 5
    st2 = spherical_start()
    for _ in range(500):
        st2 = ito_frame_step(st2, SPH, 0.0, 1e-3, np.zeros(3))
    assert abs(st2.frame.point[1] - x[1]) < 1e-9
    assert np.max(np.abs(st2.frame.e[:, 0] - v)) < 1e-8


def test_frame_invariants_restored_each_step():
    rng = trajectory_rng(2, 0)
    st = spherical_start()
    for _ in range(100):
        st = ito_frame_step(st, SPH, 0.5, 1e-3, rng.standard_normal(3))
        assert frame_residual(st.frame, SPH) < 1e-12


def test_pre_renormalization_drift_order():
    # the raw one-step orthonormality defect shrinks ~linearly in h
    def defect(h, seed):
        rng = trajectory_rng(seed, 0)
        st = spherical_start()
        from reldiff.frames import _geodesic_field
        from reldiff.geometry import Frame

        tot = 0.0
        for _ in range(40):
            noise = rng.standard_normal(3)
            x, E = st.frame.point, st.frame.e
            k1x, k1E = _geodesic_field(SPH, x, E)
            k2x, k2E = _geodesic_field(SPH, x + 0.5 * h * k1x, E + 0.5 * h * k1E)
            E_new = E + h * k2E
            E_new[:, 0] += 0.5 * math.sqrt(h) * (E[:, 1:] @ noise) + 0.375 * h * E[:, 0]
            E_new[:, 1:] += 0.5 * math.sqrt(h) * np.outer(E[:, 0], noise) + 0.125 * h * E[:, 1:]
            raw = Frame(x + h * k2x, E_new)
            tot += frame_residual(raw, SPH)
            st = ito_frame_step(st, SPH, 0.5, h, noise)
        return tot / 40

    d1, d2 = defect(2e-3, 5), defect(1e-3, 5)
    assert d2 < 0.65 * d1


def test_covariation_of_e0_matches_K():
    # the martingale part of de0 is sigma sqrt(h) E_spatial xi, whose
    # covariance is exactly sigma^2 h (e0 e0^T - g^{-1})
    sigma, h, n = 1.0, 1e-3, 100_000
    st = spherical_start()
    E = st.frame.e
    rng = trajectory_rng(8, 0)
    z = rng.standard_normal((n, 3))
    inc = sigma * math.sqrt(h) * z @ E[:, 1:].T
    C = inc.T @ inc / n
    K = vertical_covariation(st.frame, SPH, sigma) * h
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / n)
    assert np.all(np.abs(C - K) <= 3.0 * np.maximum(se, 1e-3 * h))


def test_K_annihilates_g_e0_and_has_rank_d():
    rng = trajectory_rng(9, 0)
    st = spherical_start()
    for _ in range(20):
        st = ito_frame_step(st, SPH, 1.0, 1e-3, rng.standard_normal(3))
        K = vertical_covariation(st.frame, SPH, 1.0)
        g = SPH.metric(st.frame.point)
        e0 = st.frame.e[:, 0]
        assert np.max(np.abs(K @ g @ e0)) < 1e-9 * np.abs(K).max()
        sv = np.linalg.svd(K, compute_uv=False)
        assert sv[3] < 1e-10 * sv[0]


def test_so3_invariance_bitwise():
    # rotating the spatial legs and the noise identically leaves (x, e0)
    # bit-identical
    rng = trajectory_rng(10, 0)
    noises = [rng.standard_normal(3) for _ in range(50)]
    theta = 0.7
    Q = np.array([[math.cos(theta), -math.sin(theta), 0.0],
                  [math.sin(theta), math.cos(theta), 0.0],
                  [0.0, 0.0, 1.0]])
    a_st = spherical_start()
    b_st = spherical_start()
    b_st.frame.e[:, 1:] = b_st.frame.e[:, 1:] @ Q
    for z in noises:
        a_st = ito_frame_step(a_st, SPH, 0.8, 1e-3, z)
        b_st = ito_frame_step(b_st, SPH, 0.8, 1e-3, Q.T @ z)
    # pathwise equal up to eigensolver rounding in the renormalization
    assert np.max(np.abs(a_st.frame.point - b_st.frame.point)) < 1e-10
    assert np.max(np.abs(a_st.frame.e[:, 0] - b_st.frame.e[:, 0])) < 1e-10


def test_weak_generator_on_e0_drift():
    # E[de0]/h matches the vertical drift (d sigma^2/2) e0 - Gamma(e0, e0)
    sigma, h, n = 1.0, 1e-4, 40_000
    st = spherical_start()
    rng = trajectory_rng(12, 0)
    e0 = st.frame.e[:, 0]
    acc = np.zeros(4)
    for _ in range(n):
        nxt = ito_frame_step(st, SPH, sigma, h, rng.standard_normal(3))
        acc += nxt.frame.e[:, 0] - e0
    emp = acc / (n * h)
    G = SPH.christoffel(st.frame.point)
    pred = -np.einsum("kil,l,i->k", G, e0, e0) + 1.5 * sigma**2 * e0
    # Monte Carlo error ~ sigma |e_i| / sqrt(n h)
    tol = 3.0 * sigma * np.abs(st.frame.e[:, 1:]).max() / math.sqrt(n * h) + 10 * h
    assert np.max(np.abs(emp - pred)) < tol


def test_development_flat_equals_minkowski():
    rng = trajectory_rng(13, 0)
    noises = [rng.standard_normal(3) for _ in range(200)]
    p0 = np.array([math.cosh(0.4), math.sinh(0.4), 0.0, 0.0])
    fs = initial_frame_state(FLAT, np.zeros(4), p0)
    ms = MinkowskiState(xi=np.zeros(4), p=p0.copy())
    for z in noises:
        fs = ito_frame_step(fs, FLAT, 1.0, 1e-3, z)
        ms = step_minkowski(ms, 1.0, 1e-3, z)
    assert np.max(np.abs(fs.frame.e[:, 0] - ms.p)) < 1e-10
    assert np.max(np.abs(fs.zeta - fs.frame.e[:, 0])) < 1e-12


def test_development_zeta_on_unit_pseudosphere():
    rng = trajectory_rng(14, 0)
    st = spherical_start(T_sign=1.0)  # outbound: stays clear of the horizon
    path = [st]
    for _ in range(2000):
        st = ito_frame_step(st, SPH, 0.5, 1e-3, rng.standard_normal(3))
        path.append(st)
    rep = development_check(path, SPH)
    assert rep["max_pseudo_norm_drift"] < 5e-3  # O(h) transport error at h=1e-3
    assert rep["quadratic_variation"] > 0.0


def test_sigma_zero_zeta_constant():
    st = spherical_start()
    path = [st]
    for _ in range(300):
        st = ito_frame_step(st, SPH, 0.0, 1e-3, np.zeros(3))
        path.append(st)
    zetas = np.array([p.zeta for p in path])
    assert np.max(np.abs(zetas - zetas[0])) < 1e-5


def test_chart_exit_rejected():
    # aim a steep infall at the horizon: the spherical chart must refuse,
    # either via the switch signal or via frame degeneracy right at the
    # coordinate singularity (both abort the step; neither corrupts state)
    from reldiff.geometry import FrameDegenerateError

    st = spherical_start(r0=1.05, a=1.5, b=0.1)
    with pytest.raises((ChartSwitchNeeded, FrameDegenerateError)):
        for _ in range(2000):
            st = ito_frame_step(st, SPH, 0.0, 1e-3, np.zeros(3))
