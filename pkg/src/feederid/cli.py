"""Command line: ``feederid identify | simulate | sweep | diagnose``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .library import DEFAULT_TYPES, LV_CABLE_TYPES
from .network import aggregate_flows
from .pipeline import (EXIT_OK, EXIT_OTHER, RunConfig, StageError, _sampler, _Stage, build_problem,
                       run_identify, run_noise_sweep)
from .polytope import assemble_halfspaces, diagnose_identifiability, solve_delta_lp
from .simulate import NoiseSpec, apply_noise, assign_cables, make_dataset, random_feeder

_RUN_FIELDS = ("feeder", "meters", "library", "truth", "m", "kappa", "lam", "rho", "m_prime",
               "K", "seed", "snapshots", "snapshot_seed", "walk", "max_iters", "meter_units", "synth",
               "noise")


def _add_run_flags(p):
    p.add_argument("--config", help="JSON RunConfig; flags override its fields")
    p.add_argument("--feeder")
    p.add_argument("--meters")
    p.add_argument("--library")
    p.add_argument("--truth")
    p.add_argument("--meter-units", dest="meter_units", choices=("pu", "si"))
    p.add_argument("--m", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--m-prime", dest="m_prime", type=int)
    p.add_argument("-K", type=int, dest="K")
    p.add_argument("--seed", type=int)
    p.add_argument("--snapshots", type=int)
    p.add_argument("--snapshot-seed", dest="snapshot_seed", type=int)
    p.add_argument("--walk", choices=("hit_and_run", "dikin"))
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--synth", type=json.loads, help="JSON object of synthetic-feeder settings")
    p.add_argument("--noise", type=json.loads, help="JSON object of noise settings")
    p.add_argument("--out", default="runs", help="parent of the run directory")


def _config(args) -> RunConfig:
    over = {k: getattr(args, k) for k in _RUN_FIELDS if getattr(args, k, None) is not None}
    if args.config:
        return RunConfig.from_json(args.config, **over)
    return RunConfig(**over)


def cmd_identify(args) -> int:
    cfg = _config(args)
    code, res, run_dir = run_identify(cfg, args.out)
    if res is None:
        err = json.loads((run_dir / "error.json").read_text())
        print(f"failed at stage {err['stage']}: {err['error']}: {err['message']}", file=sys.stderr)
        if err["exit_code"] == 2:
            print("the data admit no impedance vector inside the library envelope "
                  "(delta* too small for the observed inconsistency, or noisy inputs)",
                  file=sys.stderr)
        return code
    rep = res.report.to_dict()
    print(f"run directory: {run_dir}")
    print(f"delta* = {rep['delta_star']:.4g}  candidates = {rep['n_candidates']}")
    if "mape_star" in rep:
        for stage, (r, x) in sorted(rep["mape_star"].items()):
            print(f"MAPE* {stage:>12}: r {r:6.2f}%  x {x:6.2f}%")
        print(f"truth contained on {100 * rep['containment_fraction']:.1f}% of edges")
    if rep["derailed"]:
        print("WARNING: best-fit residual is large compared with the voltage drops; "
              "the range should not be trusted", file=sys.stderr)
    return code


def cmd_simulate(args) -> int:
    """Write a synthetic feeder, library, truth and meter file into a directory."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    top = random_feeder(args.n_nodes, args.chains, seed=args.seed)
    feeder = io.Feeder(top, name=f"synthetic-{args.n_nodes}")
    types = args.types or list(DEFAULT_TYPES)
    io.save_feeder(out / "feeder.json", feeder)
    io.save_library(out / "library.json", feeder, {t: LV_CABLE_TYPES[t] for t in types}, types)
    lib = io.load_library(out / "library.json", feeder)
    gt = assign_cables(top, lib, seed=args.seed)
    io.save_truth(out / "truth.json", feeder, gt.choice)
    spec = {"sampler": args.sampler, "pf": args.pf, "p_max": args.p_max, "q_max": args.q_max}
    data = make_dataset(top, gt.z_true, _sampler(spec), args.T, seed=args.seed, model=args.model)
    if args.voltage_noise or args.injection_noise:
        data = apply_noise(data, NoiseSpec(injection_noise_halfwidth=args.injection_noise,
                                           voltage_noise_sigma=args.voltage_noise, seed=args.seed))
    io.save_meters(out / "meters.csv", data, feeder)
    print(f"wrote feeder.json, library.json, truth.json, meters.csv to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = json.loads(Path(args.grid).read_text()) if Path(args.grid).exists() else json.loads(args.grid)
    table = run_noise_sweep(cfg, grid, seeds=range(args.seeds))
    text = json.dumps(table, indent=2, sort_keys=True)
    out = Path(args.out) / f"sweep-{cfg.hash()}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")
    for lv in table["levels"]:
        med = lv["mape_r"]["median"] if lv["mape_r"] else float("nan")
        medx = lv["mape_x"]["median"] if lv["mape_x"] else float("nan")
        print(f"{json.dumps(lv['level'])}: ok {lv['n_ok']}/{lv['n_cells']}  "
              f"median MAPE* r {med:.2f}%  x {medx:.2f}%")
    print(f"table written to {out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    """Best-fit residual and identifiability diagnostics, no sampling."""
    cfg = _config(args)
    timings = {}
    try:
        with _Stage("load", timings):
            prob = build_problem(cfg)
        top, data = prob.feeder.topology, prob.data
        with _Stage("best_fit", timings):
            flows = aggregate_flows(top, data)
            sol = solve_delta_lp(top, data, flows)
        with _Stage("polytope", timings):
            rep = diagnose_identifiability(assemble_halfspaces(top, data, flows, sol.delta_star, cfg.kappa))
    except StageError as err:
        print(err, file=sys.stderr)
        return err.exit_code
    from .network import degree2_chains
    doc = {"delta_star": sol.delta_star, "n_edges": top.n_edges, "n_leaves": len(top.leaves),
           "T": data.T, "degree2_chains": [[prob.feeder.edge_key(e) for e in c] for c in degree2_chains(top)],
           "identifiability": rep.to_dict()}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="feederid", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("identify", help="full pipeline, artifacts under a run directory")
    _add_run_flags(p)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("simulate", help="write a synthetic feeder and its meter data")
    p.add_argument("--out", required=True)
    p.add_argument("--n-nodes", dest="n_nodes", type=int, default=30)
    p.add_argument("--chains", type=int, nargs="*", default=[3, 2, 2])
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--sampler", choices=("fixed_pf", "uniform"), default="fixed_pf")
    p.add_argument("--pf", type=float, default=0.95)
    p.add_argument("--p-max", dest="p_max", type=float, default=0.015)
    p.add_argument("--q-max", dest="q_max", type=float, default=0.0075)
    p.add_argument("--model", choices=("ac", "lindistflow"), default="ac")
    p.add_argument("--types", nargs="*", choices=sorted(LV_CABLE_TYPES))
    p.add_argument("--voltage-noise", dest="voltage_noise", type=float, default=0.0)
    p.add_argument("--injection-noise", dest="injection_noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="noise sweep, median and quartiles of MAPE* per level")
    _add_run_flags(p)
    p.add_argument("--grid", required=True, help="JSON list of noise levels, or a file holding one")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="best-fit residual and identifiability only")
    _add_run_flags(p)
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
