import dataclasses
import json

import numpy as np
import pytest

from feederid import io
from feederid.errors import Infeasible, NumericalDegeneracy, TopologyError
from feederid.library import default_library
from feederid.network import MeterDataset
from feederid.pipeline import (EXIT_DEGENERATE, EXIT_INFEASIBLE, EXIT_OK, EXIT_OTHER, Problem,
                               RunConfig, StageError, build_problem, identify, run_identify,
                               run_noise_sweep)
from feederid.simulate import Z_BASE, assign_cables, lindistflow_forward, random_feeder

SMALL = dict(m=400, synth={"n_nodes": 16, "chains": [2, 2]})


def test_config_defaults_and_hash(tmp_path):
    a = RunConfig()
    assert a.synth == {} and a.effective_rho == 0.0
    assert RunConfig(noise={"length_noise_sigma": 0.02}).effective_rho == 0.05
    assert RunConfig(rho=0.3, noise={"length_noise_sigma": 0.02}).effective_rho == 0.3
    assert RunConfig(out_dir="x").hash() == RunConfig(out_dir="y").hash() != RunConfig(m=5).hash()
    with pytest.raises(ValueError):
        RunConfig(kappa=1.0)
    with pytest.raises(ValueError):
        RunConfig(m=0)
    with pytest.raises(FileNotFoundError):
        RunConfig(feeder=str(tmp_path / "missing.json"))


def test_config_from_json_resolves_paths(tmp_path):
    (tmp_path / "sub").mkdir()
    io.save_feeder(tmp_path / "sub" / "f.json", io.Feeder(random_feeder(5, seed=0)))
    (tmp_path / "sub" / "cfg.json").write_text(json.dumps({"feeder": "f.json", "m": 10}))
    cfg = RunConfig.from_json(tmp_path / "sub" / "cfg.json", m=20, kappa=None)
    assert cfg.feeder == str(tmp_path / "sub" / "f.json") and cfg.m == 20 and cfg.kappa == 1.05


def test_stage_error_exit_codes():
    assert StageError("x", Infeasible("")).exit_code == EXIT_INFEASIBLE
    assert StageError("x", NumericalDegeneracy("")).exit_code == EXIT_DEGENERATE
    assert StageError("x", TopologyError("")).exit_code == EXIT_OTHER


def test_run_is_byte_reproducible(tmp_path):
    cfg = RunConfig(**SMALL)
    c1, r1, d1 = run_identify(cfg, tmp_path / "a")
    c2, r2, d2 = run_identify(cfg, tmp_path / "b")
    assert c1 == c2 == EXIT_OK and d1.name == d2.name == cfg.hash()
    names = sorted(p.name for p in d1.iterdir())
    assert names == sorted(p.name for p in d2.iterdir())
    assert "candidates_thinned.csv" not in names and "timings.json" in names
    for n in names:
        if n != "timings.json":
            assert (d1 / n).read_bytes() == (d2 / n).read_bytes(), n
    manifest = json.loads((d1 / "manifest.json").read_text())
    assert set(manifest["files"]) == set(names) - {"manifest.json", "timings.json", "config.json"}
    rep = json.loads((d1 / "report.json").read_text())
    assert rep["stage"] == "refined" and rep["n_candidates"] == 400
    assert set(rep["mape_star"]) == {"refined", "raw", "chebyshev"}


def test_thinning_stage(tmp_path):
    cfg = RunConfig(**SMALL, m_prime=20, K=8)
    code, res, d = run_identify(cfg, tmp_path)
    assert code == EXIT_OK
    assert res.thinned.shape == (20, res.refined.shape[1])
    np.testing.assert_array_equal(res.thinned, res.refined[res.selection])
    rep = json.loads((d / "report.json").read_text())
    assert rep["stage"] == "thinned" and len(rep["selection"]) == 20
    assert "refined_full" in rep["mape_star"]
    _, C = io.load_candidates(d / "candidates_thinned.csv")
    assert C.shape == (20, res.refined.shape[1])


def test_candidates_respect_polytope_and_library_box():
    cfg = RunConfig(**SMALL)
    prob = build_problem(cfg)
    res = identify(prob, cfg)
    E = prob.feeder.topology.n_edges
    b = prob.library.bounds
    L = prob.feeder.topology.lengths
    r, x = res.raw[:, :E] / L, res.raw[:, E:] / L
    assert np.all(r >= b.r_lo * (1 - 1e-9)) and np.all(r <= b.r_hi * (1 + 1e-9))
    assert np.all(x >= b.x_lo * (1 - 1e-9)) and np.all(x <= b.x_hi * (1 + 1e-9))
    assert res.report.extra["delta_star"] >= 0 and not res.report.extra["derailed"]


def test_infeasible_noise_exits_2(tmp_path):
    cfg = RunConfig(m=100, synth={"feeder_seed": 1, "truth_seed": 1, "data_seed": 1},
                    noise={"voltage_noise_sigma": 0.005, "seed": 1}, seed=1)
    code, res, d = run_identify(cfg, tmp_path)
    assert code == EXIT_INFEASIBLE and res is None
    err = json.loads((d / "error.json").read_text())
    assert err["stage"] == "chebyshev" and err["exit_code"] == 2


def test_metered_inner_node_splits():
    top = random_feeder(14, seed=2)
    lib = default_library(top.n_edges, Z_BASE)
    z = assign_cables(top, lib, seed=0).z_true
    rng = np.random.default_rng(0)
    inner = next(n for n in range(1, 14) if n not in top.leaf_set)
    loaded = np.r_[top.leaves, inner]
    P = np.zeros((10, 14))
    P[:, loaded] = rng.uniform(0, 0.015, (10, len(loaded)))
    Q = P * 0.25 + rng.uniform(0, 0.002, P.shape) * (P > 0)
    nodes = [0] + sorted(loaded.tolist())
    # exact model data: each piece pins its edges down to a point
    data = MeterDataset(P, Q, lindistflow_forward(top, z, P, Q)[:, nodes], nodes)
    cfg = RunConfig(m=300)
    res = identify(Problem(io.Feeder(top), data, lib, z), cfg)
    assert len(res.diagnostics["pieces"]) == 2
    edges = sorted(e for p in res.diagnostics["pieces"] for e in p["edges"])
    assert edges == list(range(top.n_edges))
    np.testing.assert_allclose(res.z0, z, rtol=1e-6)
    assert res.report.mape["refined"] == [0.0, 0.0]


def test_noise_sweep_table():
    cfg = RunConfig(m=100)
    grid = [{}, {"voltage_noise_sigma": 0.005}]
    table = run_noise_sweep(cfg, grid, seeds=range(3), workers=1)
    assert len(table["cells"]) == 6
    for lv in table["levels"]:
        assert lv["n_cells"] == 3
        assert lv["n_ok"] + lv["n_failed"] + lv["n_derailed"] == 3
    clean = table["levels"][0]
    assert clean["n_ok"] == 3 and clean["mape_r"]["p25"] <= clean["mape_r"]["median"] <= clean["mape_r"]["p75"]
    noisy = [c for c in table["cells"] if c["level"] == grid[1]]
    assert all(c["status"] in ("failed", "derailed") for c in noisy)
    with pytest.raises(ValueError):
        run_noise_sweep(cfg, [])
