"""Ensemble orchestration: fate classification, statistics, export.

A trajectory either escapes (radius and energy grow, direction settles)
or ends up confined (repeated center crossings with apex radii inside
the photon-sphere band); everything else is reported as undecided.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .extension import (
    ESCAPE,
    HORIZON_FIRST,
    SINGULARITY,
    extend_trajectory,
    tortoise_like,
)
from .geodesics import deflection_integral
from .reduced import ReducedState, state_from_velocity
from .rng import trajectory_rng

PATH_SCHEMA = "path-v1"
SUMMARY_SCHEMA = "summary-v1"
EVENTS_SCHEMA = "events-v1"


@dataclass
class EnsembleConfig:
    space: str = "schwarzschild"
    sigma: float = 1.0
    R: float = 1.0
    r0: float = 3.0
    T0: float = 0.0
    b0: float = 2.0
    a_sign: float = 1.0
    N: int = 1
    horizon: float = 100.0
    h0: float = 1e-3
    h_min: float = 1e-24
    M_escape: float = 50.0
    r_stop: float = 1e-6
    eps_b: float = 1e-8
    eps_T: float = 1e-8
    master_seed: int = 0
    output_dir: str | None = None
    tail_fraction: float = 0.5
    n_min_crossings: int = 5
    rho_band_tol: float = 0.02
    theta_tol: float = 0.05
    max_excursions: int = 60
    policy: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.space not in ("minkowski", "schwarzschild"):
            raise ValueError(f"unknown space {self.space!r}")
        for name in ("sigma", "R", "horizon", "h0", "h_min", "M_escape",
                     "r_stop", "tail_fraction"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.N < 1:
            raise ValueError("N must be at least 1")

    def trajectory_policy(self):
        pol = dict(
            h0=self.h0, hmin=self.h_min,
            M_escape_factor=self.M_escape / self.R,
            r_stop_factor=self.r_stop / self.R,
            eps_T=self.eps_T,
            max_excursions=self.max_excursions,
        )
        pol.update(self.policy)
        return pol

    def initial_state(self):
        return state_from_velocity(self.r0, self.T0, self.b0, self.R,
                                   a_sign=self.a_sign)


@dataclass
class Fate:
    tag: str                      # escape | confined | undecided
    theta_inf: np.ndarray | None = None
    a_final: float = math.nan
    rho_hat: float = math.nan
    ell_hat: float = math.nan
    plane: np.ndarray | None = None
    crossings: int = 0
    diagnostics: dict = field(default_factory=dict)


def classify_fate(result, config: EnsembleConfig) -> Fate:
    """Escape / confined / undecided from a finished extended trajectory.

    Confinement is declared from finite data: enough center crossings in
    the tail window plus apex radii inside the [R, 3R/2] band.
    """
    if result.escaped:
        return Fate(tag="escape", theta_inf=result.final.theta.copy(),
                    a_final=result.final.a,
                    diagnostics={"r_final": result.final.r})
    s_end = result.final.s
    tail_start = s_end * (1.0 - config.tail_fraction)
    crossings = [e for e in result.events
                 if e.kind == SINGULARITY and e.s >= tail_start]
    n_cross = len(crossings)
    tail_apex = [r for (s, r) in result.apexes if s >= tail_start]
    rho_hat = max(tail_apex) if tail_apex else math.nan
    band_lo = config.R * (1.0 - config.rho_band_tol)
    band_hi = 1.5 * config.R * (1.0 + config.rho_band_tol)
    diag = {"n_crossings_tail": n_cross, "rho_hat": rho_hat,
            "status": result.status}
    if n_cross >= config.n_min_crossings and band_lo <= rho_hat <= band_hi:
        bp = result.boundary_points[-1]
        return Fate(tag="confined", rho_hat=rho_hat,
                    ell_hat=bp.a / bp.b, plane=bp.plane.copy(),
                    crossings=n_cross, diagnostics=diag)
    return Fate(tag="undecided", crossings=n_cross, diagnostics=diag)


def wilson_interval(k, n, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _upcrossing_swings(excursions):
    """Half the sweep-angle difference between consecutive center hits.

    One full excursion (center -> apex -> center) sweeps twice the
    single-climb deflection, so halving the inter-crossing difference
    estimates the per-climb swing.
    """
    sw = [e["swing_sing"] for e in excursions if "swing_sing" in e]
    return [0.5 * (sw[i + 1] - sw[i]) for i in range(len(sw) - 1)]


def _plane_drift(bps):
    """Largest angle between the reference plane and later planes (radians)."""
    if len(bps) < 2:
        return 0.0
    ref = bps[0].plane
    worst = 0.0
    for bp in bps[1:]:
        c = min(1.0, abs(float(np.dot(ref, bp.plane))))
        worst = max(worst, math.acos(c))
    return worst


@dataclass
class EnsembleSummary:
    config: EnsembleConfig
    n_run: int
    n_escape: int
    n_confined: int
    n_undecided: int
    n_captured: int
    n_failed: int
    escape_ci: tuple
    capture_ci: tuple
    confinement: dict
    failures: list
    fates: list
    results: list | None = None

    def to_dict(self):
        c = self.config
        return {
            "schema": SUMMARY_SCHEMA,
            "config": {
                "space": c.space, "sigma": c.sigma, "R": c.R, "r0": c.r0,
                "T0": c.T0, "b0": c.b0, "N": c.N, "horizon": c.horizon,
                "h0": c.h0, "master_seed": c.master_seed,
            },
            "counts": {
                "run": self.n_run, "escape": self.n_escape,
                "confined": self.n_confined, "undecided": self.n_undecided,
                "captured": self.n_captured, "failed": self.n_failed,
            },
            "escape_fraction": self.n_escape / max(self.n_run, 1),
            "escape_ci": list(self.escape_ci),
            "capture_fraction": self.n_captured / max(self.n_run, 1),
            "capture_ci": list(self.capture_ci),
            "confinement": self.confinement,
        }


def run_ensemble(config: EnsembleConfig, keep_results=False):
    """N independent trajectories, aggregated; deterministic in the seed.

    Per-trajectory failures are isolated and counted, never fatal to the
    ensemble.
    """
    pol = config.trajectory_policy()
    fates, failures, results = [], [], []
    n_escape = n_confined = n_undecided = n_captured = 0
    rho_list, ell_res, drifts, swings, slopes = [], [], [], [], []
    for i in range(config.N):
        rng = trajectory_rng(config.master_seed, i)
        try:
            res = extend_trajectory(config.initial_state(), config.R,
                                    config.sigma, config.horizon,
                                    rng=rng, policy=pol)
        except Exception as exc:  # noqa: BLE001 - isolate bad trajectories
            failures.append({"index": i, "error": str(exc)})
            continue
        fate = classify_fate(res, config)
        fates.append(fate)
        if keep_results:
            results.append(res)
        if any(e.kind == HORIZON_FIRST for e in res.events):
            n_captured += 1
        if fate.tag == "escape":
            n_escape += 1
        elif fate.tag == "confined":
            n_confined += 1
            rho_list.append(fate.rho_hat)
            pred = (1.0 - config.R / fate.rho_hat) / fate.rho_hat**2
            ell2 = fate.ell_hat**2
            if ell2 > 0:
                ell_res.append(abs(ell2 - pred) / ell2)
            s_end = res.final.s
            tail_start = s_end * (1.0 - config.tail_fraction)
            tail_bps = [bp for bp in res.boundary_points
                        if bp.D_prime >= tail_start]
            drifts.append(_plane_drift(tail_bps))
            tail_exc = [e for e in res.excursions
                        if e.get("D_prime", -1.0) >= tail_start]
            swings.extend(_upcrossing_swings(tail_exc))
            slopes.extend(bp.diagnostics.get("tail_slope", math.nan)
                          for bp in tail_bps)
        else:
            n_undecided += 1
    n_run = len(fates)
    conf = {
        "rho_hat": rho_list,
        "rho_hat_median": float(np.median(rho_list)) if rho_list else None,
        "ell_residuals": ell_res,
        "plane_drifts": drifts,
        "upcrossing_swings": swings,
        "tail_slopes": slopes,
    }
    if rho_list:
        rho_med = float(np.median(rho_list))
        if rho_med < 1.5 * config.R:
            conf["psi_at_rho_median"] = deflection_integral(rho_med, config.R)
    return EnsembleSummary(
        config=config, n_run=n_run, n_escape=n_escape,
        n_confined=n_confined, n_undecided=n_undecided,
        n_captured=n_captured, n_failed=len(failures),
        escape_ci=wilson_interval(n_escape, n_run),
        capture_ci=wilson_interval(n_captured, n_run),
        confinement=conf, failures=failures, fates=fates,
        results=results if keep_results else None)


def angular_barrier(r, R):
    """f(r) = sqrt(1 - R/r)/r, the exterior barrier that |a/b| must clear."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = r >= R
    out[m] = np.sqrt(1.0 - R / r[m]) / r[m]
    return out


def confinement_target_test(r0, b0_values, N, *, R=1.0, sigma=1.0,
                            horizon=60.0, eps=0.35, master_seed=1000,
                            max_excursions=40):
    """Targeting check: started at rest at r0 with large b0, the apex
    radius concentrates near r0, the more so the larger b0.

    Returns per-b0 hit fractions (with CIs), plus a barrier-mechanism
    check: the fraction of recorded exterior samples where |a/b| dips
    below f(r) = sqrt(1 - R/r)/r.
    """
    report = {"r0": r0, "eps": eps, "levels": []}
    for j, b0 in enumerate(b0_values):
        cfg = EnsembleConfig(
            r0=r0, T0=0.0, b0=b0, sigma=sigma, R=R, N=N, horizon=horizon,
            master_seed=master_seed + j, max_excursions=max_excursions,
            policy={"exterior_rec_stride": 64})
        summ = run_ensemble(cfg, keep_results=True)
        hits = 0
        viol = tot = 0
        for fate, res in zip(summ.fates, summ.results):
            if fate.tag == "confined":
                if abs(fate.rho_hat - r0) < eps:
                    hits += 1
            for label, recs, _off in res.segments:
                if label.startswith("exterior") and len(recs):
                    r, a, b = recs[:, 1], recs[:, 2], recs[:, 3]
                    f = angular_barrier(r, R)
                    viol += int(np.sum(np.abs(a / b) < f))
                    tot += len(r)
        n_conf = summ.n_confined
        report["levels"].append({
            "b0": b0,
            "n_confined": n_conf,
            "hit_fraction": hits / n_conf if n_conf else None,
            "hit_ci": wilson_interval(hits, n_conf) if n_conf else None,
            "barrier_violation_fraction": viol / tot if tot else 0.0,
            "n_samples": tot,
        })
    return report


# -- export --------------------------------------------------------------


def _fmt(x):
    if isinstance(x, float) and math.isnan(x):
        return ""
    return f"{x:.17g}"


def kruskal_point(u_minus, u_plus, r, R):
    """Map the two null coordinates to the global chart (u, v)."""
    s_reg = 1.0 if r < R else -1.0
    A = math.exp(u_minus / (2.0 * R))
    B = s_reg * math.exp(-u_plus / (2.0 * R))
    return (A - B) / 2.0, (A + B) / 2.0


PATH_COLUMNS = ["s", "r", "a", "b", "T", "swing", "u_minus", "u_plus",
                "u", "v", "event"]


def path_rows(result, R):
    """Flatten an extended trajectory into export rows.

    Each sample row carries both null coordinates (they differ by twice
    the tortoise radius) and the global-chart point; event rows carry the
    marker kind.
    """
    rows = []
    for label, recs, s_off in result.segments:
        if not len(recs):
            continue
        if label == "regen":
            r, a, b = recs[:, 0], recs[:, 1], recs[:, 2]
            s, up, T = recs[:, 3] + s_off, recs[:, 4], recs[:, 5]
            um = up + 2.0 * np.array([tortoise_like(x, R) for x in r])
            sw = np.full_like(s, math.nan)
        else:
            s, r, a, b = recs[:, 0] + s_off, recs[:, 1], recs[:, 2], recs[:, 3]
            T, um, sw = recs[:, 4], recs[:, 5], recs[:, 6]
            up = um - 2.0 * np.array([tortoise_like(x, R) for x in r])
        for i in range(len(s)):
            u, v = kruskal_point(um[i], up[i], r[i], R)
            rows.append((s[i], r[i], a[i], b[i], T[i], sw[i], um[i], up[i],
                         u, v, ""))
    for e in result.events:
        rows.append((e.s, e.state.get("r", math.nan),
                     e.state.get("a", math.nan), e.state.get("b", math.nan),
                     e.state.get("T", math.nan), e.state.get("swing",
                                                             math.nan),
                     math.nan, math.nan, math.nan, math.nan, e.kind))
    rows.sort(key=lambda t: (t[0], t[10]))
    return rows


def export_path(result, path, R):
    """Byte-stable CSV of an extended trajectory with event markers."""
    with open(path, "w") as fh:
        fh.write(f"# schema: {PATH_SCHEMA}\n")
        fh.write(",".join(PATH_COLUMNS) + "\n")
        for row in path_rows(result, R):
            cells = [_fmt(x) for x in row[:10]] + [row[10]]
            fh.write(",".join(cells) + "\n")
    return path


def import_path(path):
    """Read back an exported trajectory CSV; inverse of export_path."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            raise ValueError("missing schema line")
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            rows.append(tuple(
                (cells[i] if header[i] == "event"
                 else (float(cells[i]) if cells[i] else math.nan))
                for i in range(len(header))))
    return header, rows


def export_events(events, path):
    recs = [{"kind": e.kind, "s": e.s,
             "r": e.state.get("r"), "a": e.state.get("a"),
             "b": e.state.get("b"), "T": e.state.get("T")}
            for e in events]
    blob = {"schema": EVENTS_SCHEMA, "events": recs}
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def export_summary(summary: EnsembleSummary, path):
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


SUMMARY_REQUIRED = {
    "schema": str,
    "config": dict,
    "counts": dict,
    "escape_fraction": (int, float),
    "escape_ci": list,
    "capture_fraction": (int, float),
    "capture_ci": list,
    "confinement": dict,
}


def validate_summary(blob):
    """Check an exported summary against the shipped schema; returns blob."""
    if not isinstance(blob, dict):
        raise ValueError("summary must be an object")
    for key, typ in SUMMARY_REQUIRED.items():
        if key not in blob:
            raise ValueError(f"summary missing key {key!r}")
        if not isinstance(blob[key], typ):
            raise ValueError(f"summary key {key!r} has wrong type")
    if blob["schema"] != SUMMARY_SCHEMA:
        raise ValueError(f"unknown summary schema {blob['schema']!r}")
    for key in ("run", "escape", "confined", "undecided", "captured",
                "failed"):
        if key not in blob["counts"]:
            raise ValueError(f"counts missing {key!r}")
    return blob


def default_output_dir():
    return os.environ.get("RELDIFF_OUTPUT", ".")
