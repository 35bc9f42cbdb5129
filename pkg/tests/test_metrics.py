import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feederid.errors import DimensionMismatch, ZeroTruthComponent
from feederid.metrics import mape_star, range_report
from feederid.network import validate_topology

Z = np.array([1.0, 2.0, 0.5, 0.4])


def mape_loops(C, z):
    E = len(z) // 2
    best = [np.inf, np.inf]
    for row in C:
        for h, sl in enumerate((slice(0, E), slice(E, 2 * E))):
            s = 0.0
            for a, b in zip(row[sl], z[sl]):
                s += abs(a - b) / abs(b)
            best[h] = min(best[h], 100 * s / E)
    return tuple(best)


def test_mape_examples():
    assert mape_star(Z[None], Z) == (0.0, 0.0)
    C = np.array([[1.1, 2.2, 0.5, 0.4], [5.0, 5.0, 0.6, 0.6]])
    r, x = mape_star(C, Z)
    assert r == pytest.approx(10.0) and x == 0.0


def test_mape_errors():
    with pytest.raises(ZeroTruthComponent):
        mape_star(Z[None], np.array([1.0, 0.0, 1.0, 1.0]))
    with pytest.raises(DimensionMismatch):
        mape_star(np.ones((2, 3)), Z)


@given(st.integers(0, 10_000))
def test_mape_matches_loops_and_is_monotone(seed):
    rng = np.random.default_rng(seed)
    C = Z * rng.uniform(0.5, 1.5, size=(int(rng.integers(1, 20)), 4))
    got = mape_star(C, Z)
    np.testing.assert_allclose(got, mape_loops(C, Z), rtol=1e-12)
    more = mape_star(np.vstack([C, Z * rng.uniform(0.5, 1.5, size=(3, 4))]), Z)
    assert more[0] <= got[0] and more[1] <= got[1]


def test_identical_rows_degenerate_envelope():
    C = np.tile([1.0, 2.0, 0.5, 0.4], (5, 1))
    rep = range_report(C, Z)
    np.testing.assert_array_equal(rep.r.lo, rep.r.hi)
    assert rep.containment == 1.0 and rep.mape["refined"] == [0.0, 0.0]


def test_truth_inside_and_outside():
    C = np.array([[0.9, 1.9, 0.45, 0.30], [1.1, 2.1, 0.55, 0.39]])
    rep = range_report(C, Z)
    assert rep.contained.tolist() == [True, False]
    assert rep.out_of_range.tolist() == [0.0, pytest.approx(0.01)]
    np.testing.assert_allclose(rep.magnitude.lo, np.hypot(C[:, :2], C[:, 2:]).min(0))
    np.testing.assert_allclose(rep.r.median, [1.0, 2.0])


def test_collapsed_mape_and_raw_stage():
    top = validate_topology([(0, 1, 1.0), (1, 2, 1.0)])  # single chain of two edges
    z = np.array([1.0, 3.0, 0.5, 0.5])
    C = np.array([[2.0, 2.0, 0.4, 0.6]])  # wrong split, right sums
    rep = range_report(C, z, topology=top, raw=C * 1.1)
    assert rep.mape["refined"][0] > 0
    assert rep.mape_collapsed["refined"] == [0.0, 0.0]
    assert rep.mape_collapsed["raw"] == [10.0, 10.0]


def test_serialization(tmp_path):
    C = np.array([[0.9, 1.9, 0.45, 0.30], [1.1, 2.1, 0.55, 0.39]])
    rep = range_report(C, Z)
    rep.extra["delta_star"] = 1e-3
    doc = json.loads(rep.to_json(tmp_path / "r.json"))
    assert doc == json.loads((tmp_path / "r.json").read_text())
    assert doc["containment_fraction"] == 0.5 and doc["delta_star"] == 1e-3
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("edge,abs_min")
    assert float(lines[1].split(",")[4]) == 0.9
    assert "contained" not in range_report(C).to_dict()


def test_report_validation():
    with pytest.raises(ValueError):
        range_report(np.zeros((0, 4)))
    with pytest.raises(DimensionMismatch):
        range_report(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        range_report(np.ones((2, 4)), np.ones(6))
