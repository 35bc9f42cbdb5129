"""Scoring of candidate ranges against a known impedance vector."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroTruthComponent
from .network import FeederTopology, collapse_chains


def mape_star(candidates, z_true) -> tuple[float, float]:
    """Mean absolute percentage error of the best row, separately for r and x.

    For each half the minimum over rows is taken independently, so the r and
    x scores may come from different candidates.

    Returns
    -------
    (mape_r, mape_x) : percentages
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    z = np.asarray(z_true, dtype=float)
    if C.shape[1] != z.size or z.size % 2:
        raise DimensionMismatch("candidate width does not match the truth vector")
    if np.any(z == 0):
        raise ZeroTruthComponent("truth has a zero entry; relative error undefined")
    E = z.size // 2
    rel = np.abs(C - z) / np.abs(z)
    return 100.0 * float(rel[:, :E].mean(axis=1).min()), 100.0 * float(rel[:, E:].mean(axis=1).min())


@dataclass
class EdgeRange:
    lo: np.ndarray
    hi: np.ndarray
    median: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist(), "median": self.median.tolist()}


def _range(a: np.ndarray) -> EdgeRange:
    return EdgeRange(a.min(axis=0), a.max(axis=0), np.median(a, axis=0))


@dataclass
class RangeReport:
    """Per-edge envelopes of a candidate set and, optionally, truth scores."""

    magnitude: EdgeRange
    r: EdgeRange
    x: EdgeRange
    n_candidates: int
    contained: np.ndarray | None = None  # per edge, r and x both inside
    out_of_range: np.ndarray | None = None  # per edge, largest excess over r/x envelopes
    mape: dict = field(default_factory=dict)  # stage -> [mape_r, mape_x]
    mape_collapsed: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def n_edges(self) -> int:
        return len(self.r.lo)

    @property
    def containment(self) -> float | None:
        return None if self.contained is None else float(np.mean(self.contained))

    def to_dict(self) -> dict:
        out = {
            "n_candidates": self.n_candidates,
            "n_edges": self.n_edges,
            "magnitude": self.magnitude.to_dict(),
            "r": self.r.to_dict(),
            "x": self.x.to_dict(),
        }
        if self.contained is not None:
            out["contained"] = [bool(c) for c in self.contained]
            out["containment_fraction"] = self.containment
            out["out_of_range"] = self.out_of_range.tolist()
        if self.mape:
            out["mape_star"] = self.mape
        if self.mape_collapsed:
            out["mape_star_collapsed"] = self.mape_collapsed
        out.update(self.extra)
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path):
        """One row per edge with the envelopes, for external plotting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["edge"] + [f"{q}_{s}" for q in ("abs", "r", "x") for s in ("min", "median", "max")]
            if self.contained is not None:
                head += ["contained", "out_of_range"]
            w.writerow(head)
            for e in range(self.n_edges):
                row = [e]
                for rg in (self.magnitude, self.r, self.x):
                    row += [repr(float(rg.lo[e])), repr(float(rg.median[e])), repr(float(rg.hi[e]))]
                if self.contained is not None:
                    row += [int(self.contained[e]), repr(float(self.out_of_range[e]))]
                w.writerow(row)


def _pct(pair) -> list:
    return [round(pair[0], 2), round(pair[1], 2)]


def range_report(candidates, z_true=None, topology: FeederTopology | None = None,
                 raw=None, rtol: float = 1e-9) -> RangeReport:
    """Envelopes of ``candidates`` (usually the refined set) and truth scores.

    Parameters
    ----------
    candidates : (m, 2E) array
    z_true : (2E,) array, optional
        Enables containment flags, out-of-range distances and MAPE*.
    topology : FeederTopology, optional
        Enables MAPE* on the chain-collapsed network.
    raw : (m0, 2E) array, optional
        The pre-refinement candidates, scored alongside as stage ``"raw"``.
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if C.shape[0] == 0:
        raise ValueError("empty candidate set")
    if C.shape[1] % 2:
        raise DimensionMismatch("candidate width must be even")
    E = C.shape[1] // 2
    r, x = C[:, :E], C[:, E:]
    rep = RangeReport(_range(np.hypot(r, x)), _range(r), _range(x), len(C))
    if z_true is None:
        return rep
    z = np.asarray(z_true, dtype=float)
    if z.size != 2 * E:
        raise DimensionMismatch("truth width does not match candidates")
    inside = np.ones(E, dtype=bool)
    dist = np.zeros(E)
    for half, rg in ((z[:E], rep.r), (z[E:], rep.x)):
        excess = np.maximum(rg.lo - half, half - rg.hi).clip(min=0.0)
        inside &= excess <= rtol * np.abs(half)
        dist = np.maximum(dist, excess)
    rep.contained = inside
    rep.out_of_range = np.where(inside, 0.0, dist)
    stages = {"refined": C}
    if raw is not None:
        stages["raw"] = np.atleast_2d(np.asarray(raw, dtype=float))
    for name, S in stages.items():
        rep.mape[name] = _pct(mape_star(S, z))
        if topology is not None:
            _, zc = collapse_chains(topology, z)
            _, Sc = collapse_chains(topology, S)
            rep.mape_collapsed[name] = _pct(mape_star(Sc, zc))
    return rep
