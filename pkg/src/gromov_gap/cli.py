"""Command-line entry point: ``gromov-gap <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

from . import config as cfgmod
from .errors import DomainError, GmgError, InputNotFound, NotConverged
from .geometry import CostMatrix, PointCloud, build_cost_matrix, pairwise_costs, rescale_by_stat
from .gmg import chord_convexity_test, gmg_from_samples, weak_convexity_constants
from .gw import epsilon_schedule, gw_brute_force, gw_solve_entropic
from .harness import (ExperimentConfig, SyntheticSpec, oracle_sweep, stability_analysis, sweep_csv,
                      train_map)
from .io import atomic_write_text, points_to_csv, read_points, to_json
from .net import init_mlp, params_to_json
from .sinkhorn import entropic_ot_value, sinkhorn_solve

log = logging.getLogger("gromov_gap")

SUBCOMMANDS = ("cost", "sinkhorn", "gw", "gmg", "brute", "convexity", "train", "stability", "sweep",
               "validate")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gromov-gap", description="Gromov-Monge gap toolkit")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def add(name, help_text, inputs=(), out=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, help="sectioned key = value config file")
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--log-level", choices=("error", "info", "debug"), default="error")
        for flag in inputs:
            sp.add_argument(f"--{flag}", required=True, help=f"{flag} CSV (rows are points, no header)")
        if out:
            sp.add_argument("--out", required=True, help="output path")
        return sp

    sp = add("cost", "pairwise cost matrix of one cloud", ("points",))
    sp.add_argument("--side", choices=("source", "target"), default="source", help="which kernel to use")
    sp.add_argument("--rescale", action="store_true", help="divide by the [gw] stat")
    add("sinkhorn", "entropic OT plan for a cost matrix", ("cost",))
    add("gw", "entropic Gromov-Wasserstein between two clouds", ("source", "target"))
    add("gmg", "Gromov-Monge gap of a map given as paired clouds", ("source", "mapped"))
    add("brute", "exact GW by permutation enumeration", ("source", "target"))
    add("convexity", "weak-convexity constants (and optional chord test)", ("source",))
    add("train", "train a map on the synthetic task; --out is a directory")
    add("stability", "gradient alignment of DST and GMG for a random map")
    add("sweep", "entropic GW vs enumeration on random instances")
    sp = add("validate", "print the fully resolved config", out=False)
    sp.add_argument("--out", default=None)
    return p


def _inputs(args, names):
    # existence is checked for every file before any work starts
    paths = [getattr(args, n) for n in names]
    for path in paths:
        if not os.path.isfile(path):
            raise InputNotFound(f"input file not found: {path}")
    return [read_points(path) for path in paths]


def _require(converged, what):
    if not converged:
        raise NotConverged(f"{what} solver hit its iteration cap; raise the caps or loosen tolerances")


def _write_json(path, payload):
    atomic_write_text(path, to_json(payload))


def _cmd_cost(args, cfg):
    (pts,) = _inputs(args, ["points"])
    kx, ky = cfgmod.build_kernels(cfg)
    cm = build_cost_matrix(PointCloud(pts), kx if args.side == "source" else ky)
    if args.rescale:
        cm = rescale_by_stat(cm, cfg["gw"]["stat"])
    atomic_write_text(args.out, points_to_csv(cm.values))


def _cmd_sinkhorn(args, cfg):
    (cost,) = _inputs(args, ["cost"])
    coupling = sinkhorn_solve(cost, cfgmod.build_sinkhorn_config(cfg))
    _require(coupling.converged, "Sinkhorn")
    _write_json(args.out, {
        "plan": coupling.plan, "f": coupling.log_potentials[0], "g": coupling.log_potentials[1],
        "epsilon": coupling.epsilon, "iterations_used": coupling.iterations_used,
        "marginal_error": coupling.marginal_error, "converged": coupling.converged,
        "value": entropic_ot_value(coupling, cost),
    })


def _clouds(args, cfg, second):
    x, y = _inputs(args, ["source", second])
    kx, ky = cfgmod.build_kernels(cfg)
    return PointCloud(x), PointCloud(y), kx, ky


def _cmd_gw(args, cfg):
    x, y, kx, ky = _clouds(args, cfg, "target")
    res = gw_solve_entropic(build_cost_matrix(x, kx), build_cost_matrix(y, ky), cfgmod.build_gw_config(cfg))
    _require(res.converged, "GW")
    _write_json(args.out, {**res.summary(), "plan": res.plan.plan})


def _cmd_gmg(args, cfg):
    x, t, kx, ky = _clouds(args, cfg, "mapped")
    report = gmg_from_samples(x, t, kx, ky, cfgmod.build_gw_config(cfg))
    _require(report.gw.converged, "GW")
    _write_json(args.out, report.to_dict())


def _cmd_brute(args, cfg):
    x, y, kx, ky = _clouds(args, cfg, "target")
    value, sigma = gw_brute_force(CostMatrix(pairwise_costs(kx, x.points), kx),
                                  CostMatrix(pairwise_costs(ky, y.points), ky))
    _write_json(args.out, {"value": value, "sigma": [int(s) for s in sigma]})


def _cmd_convexity(args, cfg):
    (pts,) = _inputs(args, ["source"])
    cloud = PointCloud(pts)
    report = weak_convexity_constants(cloud).to_dict()
    c = cfg["convexity"]
    if c["chords"] > 0:
        kx, ky = cfgmod.build_kernels(cfg)
        fam = kx.family
        gamma = report["gamma_inner_n"] if fam in ("inner_product", "cosine") else report["gamma_two_n"]
        chord = chord_convexity_test(cloud, (kx, ky), gamma, trials=c["chords"], seed=cfg["run"]["seed"],
                                     target_dim=c["target_dim"] or None, epsilon=c["epsilon"],
                                     method=c["method"], normalization=c["normalization"])
        report["chord"] = vars(chord)
    _write_json(args.out, report)


def _experiment(cfg, seed):
    t = cfg["train"]
    return ExperimentConfig(regularizer=t["regularizer"], lam=t["lambda"], kernel_pair=cfgmod.build_kernels(cfg),
                            fit_epsilon=t["fit_epsilon"], gw_config=cfgmod.build_gw_config(cfg),
                            steps=t["steps"], batch_size=t["batch_size"], lr=t["lr"],
                            eval_every=t["eval_every"], seed=seed, hidden=t["hidden"],
                            activation=t["activation"], holdout_size=t["holdout_size"])


def _spec(cfg, seed):
    d = cfg["data"]
    dim = 3 if d["target"] == "rigid" else 2
    return SyntheticSpec(target=d["target"], radial_noise=d["radial_noise"], target_dim=dim, seed=seed,
                         n_per_batch=cfg["train"]["batch_size"])


def _cmd_train(args, cfg):
    seed = cfg["run"]["seed"]
    spec, exp = _spec(cfg, seed), _experiment(cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    result = train_map(spec, exp)
    atomic_write_text(os.path.join(args.out, "metrics.csv"), result.metrics_csv())
    atomic_write_text(os.path.join(args.out, "mapped.csv"), points_to_csv(result.holdout_mapped))
    atomic_write_text(os.path.join(args.out, "source.csv"), points_to_csv(result.holdout_source))
    atomic_write_text(os.path.join(args.out, "params.json"), params_to_json(result.state.params))
    manifest = result.manifest(exp, spec)
    # wall time varies between runs, so it lives outside the byte-stable JSON/CSV outputs
    atomic_write_text(os.path.join(args.out, "timing.txt"), f"wall_time_seconds {manifest.pop('wall_time'):.3f}\n")
    _write_json(os.path.join(args.out, "manifest.json"), manifest)


def _cmd_stability(args, cfg):
    seed = cfg["run"]["seed"]
    spec = _spec(cfg, seed)
    st = cfg["stability"]
    params = init_mlp([spec.source_dim, *cfg["train"]["hidden"], spec.target_dim], seed,
                      cfg["train"]["activation"])
    kernels = cfgmod.build_kernels(cfg)
    out = {"seed": seed, "kernels": [k.family for k in kernels]}
    for reg in st["regularizers"]:
        rep = stability_analysis(spec, params, reg, kernels, cfgmod.build_gw_config(cfg),
                                 batches=st["batches"], batch_size=st["batch_size"], seed=seed)
        out[reg] = rep.to_dict()
    _write_json(args.out, out)


def _cmd_sweep(args, cfg):
    s = cfg["sweep"]
    gw = replace(cfgmod.build_gw_config(cfg), max_outer=max(cfg["gw"]["max_outer"], 200))
    rows = oracle_sweep(s["n_values"], s["families"],
                        epsilon_schedule(s["schedule_start"], s["schedule_stop"], s["schedule_steps"]),
                        trials=s["trials"], seed=cfg["run"]["seed"], config=gw)
    atomic_write_text(args.out, sweep_csv(rows))


def _cmd_validate(args, cfg):
    text = cfgmod.echo(cfg)
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)


HANDLERS = {
    "cost": _cmd_cost, "sinkhorn": _cmd_sinkhorn, "gw": _cmd_gw, "gmg": _cmd_gmg, "brute": _cmd_brute,
    "convexity": _cmd_convexity, "train": _cmd_train, "stability": _cmd_stability, "sweep": _cmd_sweep,
    "validate": _cmd_validate,
}


def run(argv=None) -> int:
    """Parse, dispatch and map errors to exit codes (0 ok, 1 bad input, 2 internal)."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=getattr(logging, args.log_level.upper()), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        cfg = cfgmod.load_config(args.config)
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        log.info("seed %d", cfg["run"]["seed"])
        HANDLERS[args.subcommand](args, cfg)
    except GmgError as exc:
        sys.stderr.write(f"{exc.code}: {exc}\n")
        return exc.exit_code
    except (OSError, ValueError) as exc:
        err = DomainError(str(exc))
        sys.stderr.write(f"{err.code}: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        sys.stderr.write(f"E_INTERNAL: {type(exc).__name__}: {exc}\n")
        return 2
    log.info("done in %.2fs", time.perf_counter() - started)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
