"""End-to-end identification runs and noise sweeps.

A run goes data -> best-fit LP -> polytope -> library bounds -> diagnostics
-> Chebyshev center -> free/fixed split -> sampling -> refinement ->
optional thinning -> report. Feeders with metered inner nodes are split
into independent pieces that are identified separately and recombined.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import (FeederIdError, Infeasible, NumericalDegeneracy, StartInfeasible,
                     Unbounded)
from .library import DEFAULT_TYPES, LV_CABLE_TYPES, CableLibrary, LibraryBounds, ohm_per_km_to_pu_per_m
from .metrics import RangeReport, mape_star, range_report
from .network import MeterDataset, aggregate_flows, split_at_metered
from .polytope import (HalfSpaceSystem, apply_library_bounds, assemble_halfspaces, auto_select_free,
                       chebyshev_center, diagnose_identifiability, solve_delta_lp,
                       split_directions)
from .refine import RefinementConfig, refine_candidates
from .sample import lift_to_full, remove_redundant, round_polytope, sample_walk
from .simulate import (FixedPowerFactor, NoiseSpec, UniformInjections, apply_noise,
                       assign_cables, make_dataset, random_feeder, with_lengths)
from .thin import facility_location_select, knn_graph

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_INFEASIBLE = 2
EXIT_DEGENERATE = 3

WORKERS_ENV = "FEEDERID_WORKERS"
DEFAULT_K = 32
DEFAULT_M_PRIME = 20
# a best-fit residual above this fraction of the median measured drop means
# the data no longer constrain the impedances in a useful way
DERAIL_RATIO = 0.1


@dataclass
class RunConfig:
    """Everything that determines a run. Paths may be replaced by ``synth``.

    ``synth`` keys (all optional): ``n_nodes``, ``chains``, ``feeder_seed``,
    ``truth_seed``, ``data_seed``, ``T``, ``sampler`` (``"fixed_pf"`` or
    ``"uniform"``), ``pf``, ``p_max``, ``q_max``, ``model`` (``"ac"`` or
    ``"lindistflow"``), ``types``.
    """

    feeder: str | None = None
    meters: str | None = None
    library: str | None = None
    truth: str | None = None
    synth: dict | None = None
    meter_units: str = "pu"
    m: int = 30000
    kappa: float = 1.05
    lam: float = 0.01
    rho: float | None = None  # None: 0.05 with length noise, else 0
    m_prime: int | None = None
    K: int | None = None
    envelope: dict = field(default_factory=dict)
    seed: int = 0
    snapshots: int | None = None
    snapshot_seed: int = 0
    noise: dict = field(default_factory=dict)
    free: list | None = None
    walk: str = "hit_and_run"
    max_iters: int = 5000
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.kappa > 1:
            raise ValueError("kappa must be > 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.meters is None and self.synth is None:
            self.synth = {}
        for p in (self.feeder, self.meters, self.library, self.truth):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(p)

    @classmethod
    def from_json(cls, path, **overrides) -> "RunConfig":
        with open(path) as fh:
            doc = json.load(fh)
        base = Path(path).parent
        for k in ("feeder", "meters", "library", "truth"):
            if doc.get(k) is not None and not Path(doc[k]).is_absolute():
                doc[k] = str(base / doc[k])
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    @property
    def effective_rho(self) -> float:
        if self.rho is not None:
            return self.rho
        return 0.05 if self.noise.get("length_noise_sigma", 0) > 0 else 0.0


@dataclass
class Problem:
    feeder: io.Feeder  # lengths as the identifier sees them (possibly noisy)
    data: MeterDataset
    library: CableLibrary
    z_true: np.ndarray | None = None


def _sampler(spec: dict):
    kind = spec.get("sampler", "fixed_pf")
    if kind == "fixed_pf":
        return FixedPowerFactor(pf=spec.get("pf", 0.95), p_max=spec.get("p_max", 0.015))
    if kind == "uniform":
        return UniformInjections(p_max=spec.get("p_max", 0.015), q_max=spec.get("q_max", 0.0075))
    raise ValueError(f"unknown injection sampler {kind!r}")


def _library_for(feeder: io.Feeder, cfg: RunConfig, types) -> CableLibrary:
    if cfg.library is not None:
        return io.load_library(cfg.library, feeder)
    ohm = np.array([LV_CABLE_TYPES[t] for t in types])
    env = {"hi_factor": 1.10, "lo_factor": 0.90, **cfg.envelope}
    f = ohm_per_km_to_pu_per_m(feeder.z_base)
    bounds = LibraryBounds.from_points(ohm, **env).scaled(f)
    return CableLibrary.uniform(ohm * f, feeder.topology.n_edges, bounds, names=list(types))


def build_problem(cfg: RunConfig) -> Problem:
    """Load or synthesize the feeder, library, data and truth; apply declared noise."""
    spec = cfg.synth or {}
    types = tuple(spec.get("types", DEFAULT_TYPES))
    if cfg.feeder is not None:
        feeder = io.load_feeder(cfg.feeder)
    else:
        top = random_feeder(spec.get("n_nodes", 30), spec.get("chains", (3, 2, 2)),
                            seed=spec.get("feeder_seed", 0))
        feeder = io.Feeder(top, name="synthetic")
    lib = _library_for(feeder, cfg, types)
    z_true = None
    if cfg.truth is not None:
        z_true = io.load_truth(cfg.truth, feeder, lib)
    if cfg.meters is not None:
        data = io.load_meters(cfg.meters, feeder, cfg.meter_units)
    else:
        if z_true is None:
            z_true = assign_cables(feeder.topology, lib, seed=spec.get("truth_seed", 0)).z_true
        data = make_dataset(feeder.topology, z_true, _sampler(spec), spec.get("T", 10),
                            seed=spec.get("data_seed", 0), model=spec.get("model", "ac"))
    if cfg.snapshots is not None and cfg.snapshots < data.T:
        rows = np.sort(np.random.default_rng(cfg.snapshot_seed).choice(data.T, cfg.snapshots, replace=False))
        data = data.subset(rows)
    if cfg.noise:
        ns = NoiseSpec(**cfg.noise)
        data = apply_noise(data, ns)
        if ns.length_noise_sigma > 0:
            lengths = apply_noise(feeder.topology.lengths, ns)
            feeder = dataclasses.replace(feeder, topology=with_lengths(feeder.topology, lengths))
            # the library bounds scale with the perturbed lengths downstream
    return Problem(feeder, data, lib, z_true)


class StageError(FeederIdError):
    """A module error annotated with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")

    @property
    def exit_code(self) -> int:
        if isinstance(self.cause, (Infeasible, Unbounded)):
            return EXIT_INFEASIBLE
        if isinstance(self.cause, (NumericalDegeneracy, StartInfeasible)):
            return EXIT_DEGENERATE
        return EXIT_OTHER


class _Stage:
    def __init__(self, name, timings):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, typ, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and isinstance(exc, Exception) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class RunResult:
    report: RangeReport
    raw: np.ndarray  # B
    refined: np.ndarray  # C
    thinned: np.ndarray | None
    selection: np.ndarray | None
    z0: np.ndarray
    diagnostics: dict
    timings: dict


def _median_drop(data: MeterDataset, leaves) -> float:
    drops = np.abs(data.root_v2[:, None] - data.v2_at(leaves))
    return float(np.median(drops))


def identify(problem: Problem, cfg: RunConfig) -> RunResult:
    """Run the pipeline in memory. Module errors surface as :class:`StageError`."""
    timings: dict = {}
    top = problem.feeder.topology
    E = top.n_edges
    lengths = top.lengths
    lib = problem.library
    pieces = split_at_metered(top, problem.data)
    B = np.zeros((cfg.m, 2 * E))
    z0 = np.zeros(2 * E)
    diag_pieces, systems = [], []
    for k, piece in enumerate(pieces):
        sub, data, emap = piece.topology, piece.data, piece.edges
        Es = sub.n_edges
        cols = np.concatenate([emap, E + emap])
        with _Stage("best_fit", timings):
            flows = aggregate_flows(sub, data)
            sol = solve_delta_lp(sub, data, flows)
        with _Stage("polytope", timings):
            zsys = assemble_halfspaces(sub, data, flows, sol.delta_star, cfg.kappa)
            bsys = apply_library_bounds(zsys, lengths[emap], lib.bounds)
            report = diagnose_identifiability(zsys)
        systems.append((bsys, emap))
        derail = sol.delta_star / max(_median_drop(data, sub.leaves), 1e-300)
        d = {"piece": k, "edges": emap.tolist(), "delta_star": sol.delta_star,
             "margin": zsys.margin, "lp_cs_residual": sol.cs_residual,
             "derail_ratio": derail, "identifiability": report.to_dict()}
        diag_pieces.append(d)
        with _Stage("chebyshev", timings):
            zc, radius = chebyshev_center(bsys)
        d["chebyshev_radius"] = radius
        override = None
        if cfg.free is not None:
            local = {int(e): i for i, e in enumerate(emap)}
            override = [local[f % E] + (Es if f >= E else 0) for f in cfg.free if f % E in local]
        free = auto_select_free(report, sub, override)
        d["free"] = [int(cols[i]) for i in free]
        with _Stage("split", timings):
            split = split_directions(bsys, zc, free)
        if len(free) == 0:
            Bs = np.repeat(zc[None, :], cfg.m, axis=0)
        else:
            with _Stage("round", timings):
                rp = round_polytope(remove_redundant(split.system), seed=cfg.seed + k)
            d["pilot_condition"] = rp.pilot_condition
            with _Stage("sample", timings):
                Bs = lift_to_full(sample_walk(rp, cfg.m, seed=cfg.seed + k, method=cfg.walk), split)
        B[:, cols] = Bs
        z0[cols] = zc
    # stitch the pieces' constraint systems for refinement
    with _Stage("refine", timings):
        full = _block_system(systems, E)
        rcfg = RefinementConfig(lam=cfg.lam, rho=cfg.effective_rho, max_iters=cfg.max_iters)
        uniq, inv = np.unique(B, axis=0, return_inverse=True)
        C = refine_candidates(uniq, full, lib, lengths, rcfg)[inv.reshape(-1)]
    thinned = selection = None
    if cfg.m_prime is not None:
        with _Stage("thin", timings):
            K = min(cfg.K or DEFAULT_K, len(C) - 1)
            graph = knn_graph(C, K)
            sel = facility_location_select(graph, min(cfg.m_prime, len(C)))
            selection, thinned = sel.indices, C[sel.indices]
    with _Stage("report", timings):
        final = thinned if thinned is not None else C
        rep = range_report(final, problem.z_true, top, raw=B)
        if problem.z_true is not None:
            rep.mape["chebyshev"] = [round(v, 2) for v in mape_star(z0[None, :], problem.z_true)]
            if thinned is not None:
                rep.mape["refined_full"] = [round(v, 2) for v in mape_star(C, problem.z_true)]
    delta = max(p["delta_star"] for p in diag_pieces)
    ratio = max(p["derail_ratio"] for p in diag_pieces)
    rep.extra.update({
        "delta_star": delta,
        "derail_ratio": ratio,
        "derailed": bool(ratio > DERAIL_RATIO),
        "kappa": cfg.kappa,
        "rho": rcfg.rho,
        "lambda": cfg.lam,
        "stage": "thinned" if thinned is not None else "refined",
        "config_hash": cfg.hash(),
    })
    if selection is not None:
        rep.extra["selection"] = selection.tolist()
    if rep.extra["derailed"]:
        log.warning("best-fit residual is %.1f%% of the median voltage drop: "
                    "the range is not trustworthy", 100 * ratio)
    diagnostics = {"config_hash": cfg.hash(), "pieces": diag_pieces}
    return RunResult(rep, B, C, thinned, selection, z0, diagnostics, timings)


def _block_system(systems, E) -> HalfSpaceSystem:
    """Per-piece systems embedded into the full edge set (block diagonal)."""
    Ms, ds, tags = [], [], []
    for s, emap in systems:
        M = np.zeros((len(s), 2 * E))
        M[:, np.concatenate([emap, E + emap])] = s.M
        Ms.append(M)
        ds.append(s.d)
        tags += s.tags
    return HalfSpaceSystem(np.vstack(Ms), np.concatenate(ds), tags,
                           max(s.margin for s, _ in systems))


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_identify(cfg: RunConfig, out_dir=None, problem: Problem | None = None):
    """Run and write artifacts under ``<out_dir>/<config hash>/``.

    Returns ``(exit_code, RunResult or None, run_dir)``. Wall-clock timings
    go to ``timings.json`` so every other artifact is reproducible byte for
    byte.
    """
    h = cfg.hash()
    run_dir = Path(out_dir or cfg.out_dir) / h
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "config.json", {**cfg.to_dict(), "config_hash": h})
    try:
        problem = problem or build_problem(cfg)
        res = identify(problem, cfg)
    except StageError as err:
        _write_json(run_dir / "error.json", {"config_hash": h, "stage": err.stage,
                                             "error": type(err.cause).__name__,
                                             "message": str(err.cause), "exit_code": err.exit_code})
        log.error("%s", err)
        return err.exit_code, None, run_dir
    feeder = problem.feeder
    files = {
        "report.json": lambda p: res.report.to_json(p),
        "envelopes.csv": lambda p: res.report.to_csv(p),
        "diagnostics.json": lambda p: _write_json(p, res.diagnostics),
        "candidates_raw.csv": lambda p: io.save_candidates(p, res.raw, feeder),
        "candidates_refined.csv": lambda p: io.save_candidates(p, res.refined, feeder),
        "chebyshev_center.csv": lambda p: io.save_candidates(p, res.z0, feeder),
    }
    if res.thinned is not None:
        files["candidates_thinned.csv"] = lambda p: io.save_candidates(p, res.thinned, feeder)
    for name, write in files.items():
        write(run_dir / name)
    _write_json(run_dir / "manifest.json",
                {"config_hash": h, "files": {n: _sha(run_dir / n) for n in files}})
    _write_json(run_dir / "timings.json", {k: round(v, 6) for k, v in res.timings.items()})
    return EXIT_OK, res, run_dir


# ---------------------------------------------------------------------------
# noise sweeps


def _sweep_cell(args):
    cfg_dict, level, seed = args
    cfg = RunConfig(**cfg_dict)
    synth = dict(cfg.synth or {})
    synth["data_seed"] = seed
    cfg = dataclasses.replace(cfg, synth=synth, noise={**level, "seed": seed},
                              snapshot_seed=seed, seed=seed)
    row = {"level": level, "seed": seed}
    try:
        res = identify(build_problem(cfg), cfg)
    except StageError as err:
        row.update(status="failed", exit_code=err.exit_code, stage=err.stage,
                   error=type(err.cause).__name__)
        return row
    rep = res.report
    row.update(status="derailed" if rep.extra["derailed"] else "ok", exit_code=EXIT_OK,
               delta_star=rep.extra["delta_star"], derail_ratio=rep.extra["derail_ratio"],
               mape_r=rep.mape.get("refined", [None, None])[0],
               mape_x=rep.mape.get("refined", [None, None])[1],
               containment=rep.containment)
    return row


def _summary(values) -> dict | None:
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return {"median": float(q50), "p25": float(q25), "p75": float(q75)}


def run_noise_sweep(cfg: RunConfig, grid, seeds=range(10), workers=None) -> dict:
    """Run ``identify`` for every (noise level, seed) cell.

    Each level is a dict of :class:`NoiseSpec` fields (without ``seed``).
    Data seed, noise seed and snapshot seed all follow the cell seed.
    Failed cells are recorded and excluded from the per-level statistics,
    whose ``n_ok`` makes the survivorship explicit. Workers default to the
    ``FEEDERID_WORKERS`` environment variable (1 if unset).
    """
    grid = [dict(g) for g in grid]
    if not grid:
        raise ValueError("empty noise grid")
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(cfg.to_dict(), g, int(s)) for g in grid for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            cells = list(ex.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    levels = []
    for g in grid:
        rows = [c for c in cells if c["level"] == g]
        ok = [c for c in rows if c["status"] == "ok"]
        levels.append({
            "level": g,
            "n_cells": len(rows),
            "n_ok": len(ok),
            "n_failed": sum(c["status"] == "failed" for c in rows),
            "n_derailed": sum(c["status"] == "derailed" for c in rows),
            "mape_r": _summary(c["mape_r"] for c in ok),
            "mape_x": _summary(c["mape_x"] for c in ok),
            "delta_star": _summary(c.get("delta_star") for c in rows if c["status"] != "failed"),
        })
    return {"config_hash": cfg.hash(), "cells": cells, "levels": levels}
