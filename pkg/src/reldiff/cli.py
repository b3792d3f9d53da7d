"""Command-line front end: single runs, ensembles, reference orbits.

Options may come from a config file (JSON or key=value lines); explicit
flags always win. The only environment variable honoured is
RELDIFF_OUTPUT (default output directory).
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import sys

import click
import numpy as np

from . import harness, minkowski
from .geodesics import (
    classify_null,
    classify_timelike,
    deflection_integral,
    integrate_timelike,
)
from .rng import trajectory_rng


def load_config(path):
    """JSON object, or line-oriented key=value (values parsed as JSON
    scalars when possible)."""
    if path is None:
        return {}
    with open(path) as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.ClickException(f"bad config line: {line!r}")
        key, _, val = line.partition("=")
        val = val.strip()
        try:
            out[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            out[key.strip()] = val
    return out


def merge(cfg_file, **flags):
    """File values first, explicit flags override (None flags are unset)."""
    out = dict(cfg_file)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def out_path(name, output_dir=None):
    base = output_dir or harness.default_output_dir()
    os.makedirs(base, exist_ok=True)
    return os.path.join(base, name)


@click.group()
def main():
    """Relativistic diffusion simulator."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--space", type=click.Choice(["schwarzschild", "minkowski"]))
@click.option("--r0", type=float)
@click.option("--t0", "T0", type=float)
@click.option("--b0", type=float)
@click.option("--sigma", type=float)
@click.option("--radius", "R", type=float, help="horizon radius")
@click.option("--horizon", type=float, help="proper-time horizon")
@click.option("--seed", type=int)
@click.option("--dim", type=int, help="spatial dimension (minkowski)")
@click.option("--steps", type=int, help="step count (minkowski)")
@click.option("--out", "output_dir", type=click.Path())
def simulate(config_path, **flags):
    """Run one trajectory and export its path and event log."""
    cfg = merge(load_config(config_path), **flags)
    space = cfg.get("space", "schwarzschild")
    odir = cfg.get("output_dir")
    if space == "minkowski":
        d = int(cfg.get("dim", 2))
        sigma = float(cfg.get("sigma", 1.0))
        h = float(cfg.get("h0", 1e-3))
        n = int(cfg.get("steps", 10000))
        rng = trajectory_rng(int(cfg.get("seed", 0)), 0)
        p0 = np.zeros(d + 1)
        p0[0] = 1.0
        st = minkowski.MinkowskiState(xi=np.zeros(d + 1), p=p0)
        path = [st]
        for _ in range(n):
            path.append(minkowski.step_minkowski(path[-1], sigma, h, rng))
        fn = out_path("minkowski_path.csv", odir)
        with open(fn, "w") as fh:
            cols = (["s"] + [f"xi{i}" for i in range(d + 1)]
                    + [f"p{i}" for i in range(d + 1)])
            fh.write(",".join(cols) + "\n")
            for i, stp in enumerate(path):
                vals = [i * h, *stp.xi, *stp.p]
                fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")
        click.echo(fn)
        return
    ecfg = harness.EnsembleConfig(
        sigma=float(cfg.get("sigma", 1.0)), R=float(cfg.get("R", 1.0)),
        r0=float(cfg.get("r0", 3.0)), T0=float(cfg.get("T0", 0.0)),
        b0=float(cfg.get("b0", 2.0)), N=1,
        horizon=float(cfg.get("horizon", 50.0)),
        master_seed=int(cfg.get("seed", 0)))
    summ = harness.run_ensemble(ecfg, keep_results=True)
    if summ.n_failed:
        raise click.ClickException(f"trajectory failed: {summ.failures}")
    res = summ.results[0]
    fn = harness.export_path(res, out_path("path.csv", odir), ecfg.R)
    fe = harness.export_events(res.events, out_path("events.json", odir))
    click.echo(fn)
    click.echo(fe)
    click.echo(f"status={res.status} fate={summ.fates[0].tag}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--r0", type=float)
@click.option("--t0", "T0", type=float)
@click.option("--b0", type=float)
@click.option("--sigma", type=float)
@click.option("--radius", "R", type=float)
@click.option("--horizon", type=float)
@click.option("-n", "--count", "N", type=int)
@click.option("--seed", type=int)
@click.option("--out", "output_dir", type=click.Path())
def ensemble(config_path, **flags):
    """Run an ensemble and export the aggregated summary."""
    cfg = merge(load_config(config_path), **flags)
    ecfg = harness.EnsembleConfig(
        sigma=float(cfg.get("sigma", 1.0)), R=float(cfg.get("R", 1.0)),
        r0=float(cfg.get("r0", 3.0)), T0=float(cfg.get("T0", 0.0)),
        b0=float(cfg.get("b0", 2.0)), N=int(cfg.get("N", 100)),
        horizon=float(cfg.get("horizon", 100.0)),
        master_seed=int(cfg.get("seed", 0)))
    summ = harness.run_ensemble(ecfg)
    fn = harness.export_summary(summ, out_path("summary.json",
                                               cfg.get("output_dir")))
    click.echo(fn)
    click.echo(json.dumps(summ.to_dict()["counts"]))


@main.command()
@click.option("--a", "a", type=float, required=True, help="energy")
@click.option("--b", "b", type=float, required=True, help="angular momentum")
@click.option("--r0", type=float, required=True)
@click.option("--radius", "R", type=float, default=1.0)
@click.option("--smax", type=float, default=0.0,
              help="integrate the orbit up to this proper time")
@click.option("--out", "output_dir", type=click.Path())
def geodesic(a, b, r0, R, smax, output_dir):
    """Classify a timelike orbit; optionally integrate it."""
    cls = classify_timelike(a, b, r0, R)
    click.echo(json.dumps({"case": cls.case, "feasible": cls.feasible,
                           "roots": cls.roots, "note": cls.note},
                          sort_keys=True))
    if smax > 0 and cls.feasible:
        p = integrate_timelike(a, b, r0, R, s_max=smax)
        fn = out_path("geodesic.csv", output_dir)
        with open(fn, "w") as fh:
            fh.write("s,r,psi,t\n")
            for i in range(len(p.s)):
                fh.write(f"{p.s[i]:.17g},{p.r[i]:.17g},"
                         f"{p.psi[i]:.17g},{p.t[i]:.17g}\n")
        click.echo(fn)


@main.command()
@click.option("--alpha", type=float, required=True,
              help="impact ratio energy/angular momentum")
@click.option("--radius", "R", type=float, default=1.0)
def null(alpha, R):
    """Classify a light ray; report the confined sweep angle if any."""
    info = classify_null(alpha, R)
    out = dict(info)
    if info["case"] == 2 and R < info["rho"] < 1.5 * R:
        out["deflection"] = deflection_integral(info["rho"], R)
    click.echo(json.dumps(out, sort_keys=True))


@main.command()
@click.option("--dim", type=int, default=2)
@click.option("--rapidity", type=float, default=1.0,
              help="initial boost rapidity")
@click.option("--sigma", type=float, default=1.0)
@click.option("-n", "--count", "N", type=int, default=2000)
@click.option("--steps", type=int, default=4000)
@click.option("--h0", type=float, default=5e-3)
@click.option("--seed", type=int, default=0)
@click.option("--out", "output_dir", type=click.Path())
def scatter(dim, rapidity, sigma, N, steps, h0, seed, output_dir):
    """Flat-space asymptotic directions versus the closed-form density."""
    from scipy.stats import kstest

    d = dim
    p0 = np.zeros(d + 1)
    p0[0] = math.cosh(rapidity)
    p0[1] = math.sinh(rapidity)
    rng = trajectory_rng(seed, 0)
    p, _xi = minkowski.simulate_velocity_ensemble(p0, sigma, h0, steps, rng,
                                                  N, stop_p0=1e4)
    nrm = np.sqrt(np.maximum(p[:, 0] ** 2 - 1.0, 1e-300))
    theta = p[:, 1:] / nrm[:, None]
    out = {"schema": "scatter-v1", "dim": d, "N": N}
    if d == 2:
        ang = np.arctan2(theta[:, 1], theta[:, 0])
        dens = lambda a: harness_density(p0, a)
        from scipy.integrate import quad
        cdf = np.vectorize(lambda a: quad(dens, -math.pi, a, limit=400)[0])
        ks = kstest(np.sort(ang), cdf)
        out["ks_statistic"] = float(ks.statistic)
        out["ks_pvalue"] = float(ks.pvalue)
    fn = out_path("scatter.json", output_dir)
    with open(fn, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(fn)
    click.echo(json.dumps(out, sort_keys=True))


def harness_density(p0, angle):
    """d=2 angular density of the asymptotic direction."""
    th = np.array([math.cos(angle), math.sin(angle)])
    return float(minkowski.scattering_density(p0, th))


@main.command()
@click.option("--pytest-args", default="", help="extra arguments for pytest")
def acceptance(pytest_args):
    """Run the acceptance suite (requires the source checkout)."""
    here = os.path.dirname(os.path.dirname(os.path.dirname(
        os.path.abspath(__file__))))
    target = os.path.join(here, "tests", "test_acceptance.py")
    if not os.path.exists(target):
        target = os.path.join(os.getcwd(), "tests", "test_acceptance.py")
    if not os.path.exists(target):
        raise click.ClickException(
            "tests/test_acceptance.py not found; run from the source tree")
    cmd = [sys.executable, "-m", "pytest", "-v", target]
    if pytest_args:
        cmd.extend(pytest_args.split())
    raise SystemExit(subprocess.call(cmd))


if __name__ == "__main__":
    main()
