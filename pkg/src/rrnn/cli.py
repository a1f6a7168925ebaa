"""Command-line entry point: ``rrnn <command> [--config FILE] [--out DIR] [--seed N] [--threads N]``.

Every run writes its CSV/JSON artifacts plus ``manifest.json`` into the
output directory. The manifest is written even when the run fails, with the
error text in its ``error`` field, and the exit status is then nonzero.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import write_csv, write_json, write_trajectory_dump
from .config import SCHEMAS, load_config
from .core import (ConfigError, InitialLaw, ModelKind, NetworkConfig, NeuronModel, TransferKind,
                   WeightLaw, rng_stream)

OUT_ENV = "RRNN_OUT_DIR"
log = logging.getLogger("rrnn")


def _network_config(cfg, seed) -> NetworkConfig:
    model = NeuronModel(ModelKind(cfg["model"]), cfg["leak"], cfg["reset"])
    w = cfg["weights"]
    weights = WeightLaw(w["kind"], w["mean"], w["var"], w["value"], w["count"],
                        w["exclude_diagonal"])
    init = InitialLaw(cfg["init"]["mean"], cfg["init"]["std"])
    return NetworkConfig(model, cfg["N"], cfg["T"], cfg["theta"], cfg["sigma"], weights, init,
                         cfg["gain"], seed)


def _grid(span):
    if span["num"] < 1:
        raise ConfigError("grid 'num' must be >= 1")
    return np.linspace(span["start"], span["stop"], span["num"])


def _if_params(cfg):
    from .fokker import IFContinuousParams
    keys = ("tau", "theta", "reset", "J", "C", "D", "mu_ext", "sigma_ext")
    return IFContinuousParams(**{k: cfg[k] for k in keys})


def cmd_simulate(cfg, seed, threads, out):
    from .netsim import empirical_moments, simulate
    net = _network_config(cfg, seed)
    rows = []
    for r in range(cfg["realizations"]):
        ens = simulate(net, r)
        if cfg["dump_trajectories"]:
            write_trajectory_dump(out / f"trajectories_{r}.f64", ens.u)
        em = empirical_moments(ens)
        rows += [(r, t, em.m[t], em.q[t], em.pot_mean[t], em.pot_var[t])
                 for t in range(net.T + 1)]
    write_csv(out / "moments.csv", ["realization", "t", "m", "q", "pot_mean", "pot_var"], rows)
    return {"rows": len(rows)}


def compare_rows(net: NetworkConfig, realizations, tolerance):
    """(t, q_meanfield, q_sim_mean, q_sim_stderr, rel_error) rows and the pass flag."""
    from .meanfield import MeanFieldParams, propagate_moments
    from .netsim import empirical_moments, simulate
    if net.weights.kind.value != "gaussian":
        raise ConfigError("compare needs Gaussian weights")
    params = MeanFieldParams(net.weights.mean, net.weights.var, net.theta, net.sigma, net.gain,
                             net.T, net.transfer.kind)
    mf = propagate_moments(params, net.init, full_covariance=False)
    qs = np.array([empirical_moments(simulate(net, r)).q for r in range(realizations)])
    mean = qs.mean(axis=0)
    se = qs.std(axis=0, ddof=1) / np.sqrt(realizations) if realizations > 1 else np.zeros_like(mean)
    rows, ok = [], True
    for t in range(1, net.T + 1):
        rel = abs(mean[t] - mf.q[t]) / abs(mf.q[t]) if mf.q[t] != 0 else abs(mean[t])
        ok &= bool(rel <= tolerance)
        rows.append((t, mf.q[t], mean[t], se[t], rel))
    return rows, ok


def cmd_compare(cfg, seed, threads, out):
    net = _network_config(cfg, seed)
    if net.model.kind is not ModelKind.ANALOG_FORMAL:
        raise ConfigError("compare covers the AF model")
    rows, ok = compare_rows(net, cfg["realizations"], cfg["tolerance"])
    write_csv(out / "compare.csv",
              ["t", "q_meanfield", "q_sim_mean", "q_sim_stderr", "rel_error"], rows)
    write_json(out / "compare.json", {"pass": ok, "tolerance": cfg["tolerance"],
                                      "max_rel_error": max(r[-1] for r in rows)})
    return {"pass": ok}


def cmd_meanfield(cfg, seed, threads, out):
    from .meanfield import MeanFieldParams, cross_covariance_series, propagate_moments
    params = MeanFieldParams(cfg["Jbar"], cfg["J2"], cfg["theta"], cfg["sigma"], cfg["gain"],
                             cfg["T"], TransferKind(cfg["transfer"]))
    init = InitialLaw(cfg["init"]["mean"], cfg["init"]["std"])
    ser = propagate_moments(params, init)
    twin = cross_covariance_series(params, init, cfg["twin"]["delta"], cfg["twin"]["shared_noise"])
    T = params.T
    write_csv(out / "moments.csv", ["t", "m", "q", "pot_mean", "pot_var", "c12", "d12"],
              [(t, ser.m[t], ser.q[t], ser.pot_mean[t], ser.pot_var[t], twin.c12[t], twin.d12[t])
               for t in range(T + 1)])
    write_csv(out / "covariance.csv", ["s", "t", "c"],
              [(s, t, ser.c[s, t]) for s in range(T + 1) for t in range(T + 1)])
    return {"T": T}


def cmd_chaos_surface(cfg, seed, threads, out):
    from .meanfield import chaos_surface
    cells = chaos_surface(_grid(cfg["J2"]), _grid(cfg["theta"]), cfg["gain"], workers=threads)
    write_csv(out / "chaos_surface.csv",
              ["J2", "theta", "q_star", "c_star", "qc_gap", "multiplier", "converged"],
              [(c.J2, c.theta, c.q_star, c.c_star, c.qc_gap, c.multiplier, c.converged)
               for c in cells])
    return {"cells": len(cells), "unconverged": sum(not c.converged for c in cells)}


def cmd_twopop_map(cfg, seed, threads, out):
    from .twopop import bifurcation_map
    cells = bifurcation_map(_grid(cfg["g"]), _grid(cfg["d"]), cfg["T"], cfg["sigma"],
                            cfg["delta"], workers=threads)
    rows = []
    for c in cells:
        r = c.regime
        if r is None:
            rows.append((c.g, c.d, "Failed", np.nan, np.nan, np.nan, np.nan, c.error))
        else:
            rows.append((c.g, c.d, r.label.value, r.q_star[0], r.q_star[1], r.osc_amplitude,
                         r.d12_plateau, ""))
    write_csv(out / "twopop_map.csv", ["g", "d", "label", "q1_star", "q2_star", "osc_amplitude",
                                       "d12_plateau", "error"], rows)
    labels = sorted({row[2] for row in rows})
    return {"cells": len(rows), "labels": labels}


def cmd_fp_rate(cfg, seed, threads, out):
    from dataclasses import replace

    from scipy.integrate import trapezoid

    from .fokker import (default_grid, external_input_moments, selfconsistent_rate,
                         stationary_density, threshold_flux, weak_noise_rate)
    params = _if_params(cfg)
    ext = cfg["external"]
    if ext is not None:
        mu, sig = external_input_moments(ext["J"], ext["C"], ext["nu"], params.tau)
        params = replace(params, mu_ext=mu, sigma_ext=sig)
    res = selfconsistent_rate(params, with_density=False)
    grid = default_grid(res.mu0, res.sigma0, params.theta, params.reset, cfg["grid_points"])
    u, p = stationary_density(res.mu0, res.sigma0, res.nu0, params.tau, params.theta,
                              params.reset, grid)
    write_csv(out / "density.csv", ["u", "p"], zip(u, p))
    summary = {
        "nu0": res.nu0, "mu0": res.mu0, "sigma0": res.sigma0, "y_theta": res.y_theta,
        "y_reset": res.y_reset, "residual": res.residual, "iterations": res.iterations,
        "weak_noise_nu0": weak_noise_rate(res.y_theta, params.tau),
        "threshold_flux": threshold_flux(u, p, res.sigma0, params.tau),
        "mass": float(trapezoid(p, u)),
        "mu_ext": params.mu_ext, "sigma_ext": params.sigma_ext,
    }
    write_json(out / "rate.json", summary)
    return {"nu0": res.nu0}


def cmd_fp_evolve(cfg, seed, threads, out):
    from .fokker import (fp_grid, fp_lower_bound, fp_time_stepper, oscillation_scan,
                         selfconsistent_rate, stationary_cells)
    params = _if_params(cfg)
    scan = cfg["scan"]
    if scan is not None and (scan["mu_ext"] or scan["sigma_ext"]):
        mus = [float(v) for v in scan["mu_ext"]] or [params.mu_ext]
        sigmas = [float(v) for v in scan["sigma_ext"]] or [params.sigma_ext]
        cells = oscillation_scan(mus, sigmas, params, cfg["duration"], cfg["cells"],
                                 workers=threads)
        write_csv(out / "rate_scan.csv",
                  ["mu_ext", "sigma_ext", "nu0", "label", "mean_rate", "rel_amplitude"],
                  [(m, s, lab.nu0, lab.label, lab.mean_rate, lab.rel_amplitude)
                   for m, s, lab in cells])
        return {"labels": sorted({lab.label for _, _, lab in cells})}
    res = selfconsistent_rate(params, with_density=False)
    grid = fp_grid(params, fp_lower_bound(params, res), cfg["cells"])
    traj = fp_time_stepper(params, stationary_cells(params, res, grid), cfg["duration"], grid,
                           dt=cfg["dt"], nu_history=res.nu0, record_every=10)
    write_csv(out / "fp_rate.csv", ["t", "rate", "mass"], zip(traj.t, traj.rate, traj.mass))
    write_csv(out / "fp_density.csv", ["u", "p"], zip(traj.u, traj.p))
    return {"nu0": res.nu0, "final_rate": float(traj.rate[-1])}


def cmd_spiking(cfg, seed, threads, out):
    from .fokker import selfconsistent_rate, simulate_spiking
    params = _if_params(cfg)
    run = simulate_spiking(params, cfg["N"], cfg["duration"], rng_stream(seed, "spiking"),
                           dt=cfg["dt"])
    write_csv(out / "spikes.csv", ["neuron", "time"], zip(run.spike_neuron, run.spike_time))
    write_csv(out / "population_rate.csv", ["t_start", "t_end", "rate"],
              zip(run.bin_edges[:-1], run.bin_edges[1:], run.rate))
    res = selfconsistent_rate(params, with_density=False)
    summary = {"mean_rate": run.mean_rate, "rate_stderr": run.rate_stderr, "nu0": res.nu0,
               "rel_error": run.mean_rate / res.nu0 - 1}
    write_json(out / "spiking.json", summary)
    return summary


def cmd_girsanov_verify(cfg, seed, threads, out):
    from .girsanov import (FreeLaw, TrajectoryLaw, meanfield_law, network_log_density_batch,
                           rate_function_estimate, relative_entropy_estimate)
    N, T, R = cfg["N"], cfg["T"], cfg["replicas"]
    init = InitialLaw(cfg["init"]["mean"], cfg["init"]["std"])
    law = TrajectoryLaw(NeuronModel(), init, cfg["theta"], cfg["sigma"], T, cfg["gain"])
    U = FreeLaw(law).sample(R * N, rng_stream(seed, "girsanov", "free")).reshape(R, N, T + 1)
    w = np.exp(network_log_density_batch(U, law, cfg["Jbar"], cfg["J2"]))
    mf = meanfield_law(law, cfg["Jbar"], cfg["J2"])
    sample = mf.sample(R, rng_stream(seed, "girsanov", "meanfield"))
    ent = relative_entropy_estimate(sample, mf)
    H = rate_function_estimate(sample, mf, cfg["Jbar"], cfg["J2"])
    summary = {
        "normalization": {"value": float(w.mean()), "stderr": float(w.std(ddof=1) / np.sqrt(R))},
        "relative_entropy": ent._asdict(),
        "rate_function": H._asdict(),
    }
    write_json(out / "girsanov.json", summary)
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "meanfield": cmd_meanfield,
    "chaos-surface": cmd_chaos_surface,
    "twopop-map": cmd_twopop_map,
    "fp-rate": cmd_fp_rate,
    "fp-evolve": cmd_fp_evolve,
    "spiking": cmd_spiking,
    "girsanov-verify": cmd_girsanov_verify,
    "compare": cmd_compare,
}
assert set(COMMANDS) == set(SCHEMAS)


def _versions():
    import scipy
    import yaml
    return {"rrnn": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def build_parser():
    ap = argparse.ArgumentParser(prog="rrnn", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="YAML config; omitted keys take defaults")
    ap.add_argument("--out", type=Path, help=f"output directory (else ${OUT_ENV}, else ./out)")
    ap.add_argument("--seed", type=int, help="unsigned 64-bit seed; overrides the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker processes for grid scans")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or Path(os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": args.command, "config_path": str(args.config) if args.config else None,
                "config_sha256": None, "seed": None, "threads": args.threads,
                "versions": _versions(), "error": None}
    t0 = time.perf_counter()
    status = 0
    try:
        cfg, digest = load_config(args.config, args.command)
        manifest["config_sha256"] = digest
        seed = cfg["seed"] if args.seed is None else args.seed
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        manifest["seed"] = seed
        manifest["config"] = cfg
        manifest["summary"] = COMMANDS[args.command](cfg, seed, args.threads, out)
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest
        status = 2 if isinstance(exc, ConfigError) else 1
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        log.debug("%s", traceback.format_exc())
        print(f"rrnn {args.command}: {manifest['error']}", file=sys.stderr)
    manifest["wall_time_s"] = time.perf_counter() - t0
    manifest["outputs"] = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    write_json(out / "manifest.json", manifest)
    return status


if __name__ == "__main__":
    sys.exit(main())
