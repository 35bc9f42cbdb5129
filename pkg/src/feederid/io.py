"""Readers and writers for feeder, meter, library, truth and candidate files.

Feeder JSON::

    {"name": "...", "nodes": [...], "edges": [{"from": a, "to": b, "length_m": 42.0}],
     "root": a, "S_base": 1e5, "V_base": 400}

Node labels may be any JSON scalar; they are remapped to ``0..N-1`` with the
root (``"root"``, or the first entry of ``"nodes"``) as 0, and the mapping is
kept so outputs use the original labels. Edge keys in the other files are
``"<parent>-<child>"`` with original labels; either orientation is accepted.

Meter CSV has columns ``t, node, P, Q, v``. ``v`` may be blank where no
voltage is recorded. Values are per-unit unless ``units="si"`` (W, var, V).

Library JSON lists cable types in ohm/km (or ohm/m with ``"units": "ohm/m"``)
and which types each edge may use::

    {"units": "ohm/km", "types": {"4c_185": [0.166, 0.068], ...},
     "default": ["4c_185", ...], "edges": {"0-1": ["4c_185"]},
     "envelope": {"hi_factor": 1.1, "lo_factor": 0.9, "m_hi": 0.03, ...}}

Envelope lines are always given in ohm/km.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, TopologyError
from .library import CableLibrary, ENVELOPE_LINES, LibraryBounds, ohm_per_km_to_pu_per_m
from .network import FeederTopology, MeterDataset, validate_topology
from .simulate import S_BASE, V_BASE


@dataclass
class Feeder:
    """A validated topology plus the labels and bases it was loaded with."""

    topology: FeederTopology
    labels: list = field(default_factory=list)  # internal id -> original label
    name: str = ""
    s_base: float = S_BASE
    v_base: float = V_BASE

    def __post_init__(self):
        if not self.labels:
            self.labels = list(range(self.topology.n_nodes))

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def index(self) -> dict:
        return {str(l): i for i, l in enumerate(self.labels)}

    def edge_key(self, e: int) -> str:
        p, c, _ = self.topology.edges[e]
        return f"{self.labels[p]}-{self.labels[c]}"

    def edge_keys(self) -> list[str]:
        return [self.edge_key(e) for e in range(self.topology.n_edges)]

    def edge_lookup(self) -> dict:
        """Both orientations of every edge key -> edge index."""
        out = {}
        for e, (p, c, _) in enumerate(self.topology.edges):
            a, b = self.labels[p], self.labels[c]
            out[f"{a}-{b}"] = e
            out[f"{b}-{a}"] = e
        return out


def load_feeder(path) -> Feeder:
    with open(path) as fh:
        doc = json.load(fh)
    edges = doc.get("edges") or []
    labels = list(doc.get("nodes") or [])
    for ed in edges:
        for k in ("from", "to"):
            if ed[k] not in labels:
                labels.append(ed[k])
    if not labels:
        raise TopologyError("feeder file has no nodes")
    root = doc.get("root", labels[0])
    if root not in labels:
        raise TopologyError(f"root {root!r} is not a node")
    labels.remove(root)
    labels.insert(0, root)
    idx = {str(l): i for i, l in enumerate(labels)}
    raw = [(idx[str(ed["from"])], idx[str(ed["to"])], ed["length_m"]) for ed in edges]
    top = validate_topology(raw)
    if top.n_nodes != len(labels):
        raise TopologyError("some listed nodes are not connected to any edge")
    return Feeder(top, labels, doc.get("name", ""), float(doc.get("S_base", S_BASE)),
                  float(doc.get("V_base", V_BASE)))


def save_feeder(path, feeder: Feeder):
    top = feeder.topology
    doc = {
        "name": feeder.name,
        "root": feeder.labels[0],
        "nodes": list(feeder.labels),
        "edges": [{"from": feeder.labels[p], "to": feeder.labels[c], "length_m": float(l)}
                  for p, c, l in top.edges],
        "S_base": feeder.s_base,
        "V_base": feeder.v_base,
    }
    _dump_json(path, doc)


def load_meters(path, feeder: Feeder, units="pu") -> MeterDataset:
    """Read a long-format meter CSV into a :class:`MeterDataset`.

    Nodes without rows get zero injections. A node counts as having a
    voltage meter if ``v`` is present in every snapshot.
    """
    idx = feeder.index
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            try:
                node = idx[str(rec["node"]).strip()]
            except KeyError:
                raise DimensionMismatch(f"meter row for unknown node {rec['node']!r}") from None
            v = (rec.get("v") or "").strip()
            rows.append((int(rec["t"]), node, float(rec.get("P") or 0.0),
                         float(rec.get("Q") or 0.0), float(v) if v else np.nan))
    if not rows:
        raise DimensionMismatch("meter file is empty")
    times = sorted({r[0] for r in rows})
    tpos = {t: i for i, t in enumerate(times)}
    T, N = len(times), feeder.topology.n_nodes
    P, Q, V = np.zeros((T, N)), np.zeros((T, N)), np.full((T, N), np.nan)
    for t, n, p, q, v in rows:
        P[tpos[t], n], Q[tpos[t], n], V[tpos[t], n] = p, q, v
    if units == "si":
        P, Q, V = P / feeder.s_base, Q / feeder.s_base, V / feeder.v_base
    elif units != "pu":
        raise ValueError(f"unknown units {units!r}")
    metered = [n for n in range(N) if np.all(np.isfinite(V[:, n]))]
    if 0 not in metered:
        raise DimensionMismatch("root voltage missing in some snapshot")
    nodes = [0] + [n for n in metered if n != 0]
    return MeterDataset(P, Q, V[:, nodes] ** 2, nodes, 0)


def save_meters(path, data: MeterDataset, feeder: Feeder):
    """Write ``data`` in the long CSV format (per-unit, ``v`` not squared)."""
    vcol = data.node_index_map
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node", "P", "Q", "v"])
        for t in range(data.T):
            for n in range(data.n_nodes):
                has_v = n in vcol
                if not has_v and data.P[t, n] == 0 and data.Q[t, n] == 0:
                    continue
                v = repr(float(np.sqrt(data.v2[t, vcol[n]]))) if has_v else ""
                w.writerow([t, feeder.labels[n], repr(float(data.P[t, n])),
                            repr(float(data.Q[t, n])), v])


def load_library(path, feeder: Feeder) -> CableLibrary:
    """Per-edge cable candidates converted to per-unit per meter."""
    with open(path) as fh:
        doc = json.load(fh)
    units = doc.get("units", "ohm/km")
    to_km = {"ohm/km": 1.0, "ohm/m": 1000.0}.get(units)
    if to_km is None:
        raise ValueError(f"unknown library units {units!r}")
    types = {k: np.asarray(v, dtype=float) * to_km for k, v in doc["types"].items()}
    default = list(doc.get("default") or types)
    per_edge_names = [list(default) for _ in range(feeder.topology.n_edges)]
    lookup = feeder.edge_lookup()
    for key, names in (doc.get("edges") or {}).items():
        if key not in lookup:
            raise DimensionMismatch(f"library entry for unknown edge {key!r}")
        per_edge_names[lookup[key]] = list(names)
    used = sorted({n for names in per_edge_names for n in names})
    env = {**ENVELOPE_LINES, "hi_factor": 1.10, "lo_factor": 0.90, **(doc.get("envelope") or {})}
    bounds_km = LibraryBounds.from_points(np.array([types[n] for n in used]), **env)
    f = ohm_per_km_to_pu_per_m(feeder.z_base)
    per_edge = [np.array([types[n] for n in names]) * f for names in per_edge_names]
    return CableLibrary(per_edge, bounds_km.scaled(f), names=per_edge_names)


def save_library(path, feeder: Feeder, types: dict, default, per_edge=None):
    doc = {"units": "ohm/km", "types": {k: list(map(float, v)) for k, v in types.items()},
           "default": list(default)}
    if per_edge:
        doc["edges"] = {feeder.edge_key(e): list(n) for e, n in per_edge.items()}
    _dump_json(path, doc)


def load_truth(path, feeder: Feeder, library: CableLibrary) -> np.ndarray:
    """Impedance vector from ``{"<edge>": index or type name}``."""
    with open(path) as fh:
        doc = json.load(fh)
    lookup = feeder.edge_lookup()
    E = feeder.topology.n_edges
    choice = [None] * E
    for key, val in doc.items():
        if key not in lookup:
            raise DimensionMismatch(f"truth entry for unknown edge {key!r}")
        e = lookup[key]
        if isinstance(val, str):
            val = library.names[e].index(val)
        choice[e] = int(val)
    missing = [feeder.edge_key(e) for e, c in enumerate(choice) if c is None]
    if missing:
        raise DimensionMismatch(f"truth file misses edges {missing}")
    return library.assignment(choice, feeder.topology.lengths)


def save_truth(path, feeder: Feeder, choice):
    _dump_json(path, {feeder.edge_key(e): int(k) for e, k in enumerate(choice)})


def candidate_header(feeder: Feeder) -> list[str]:
    keys = feeder.edge_keys()
    return [f"r:{k}" for k in keys] + [f"x:{k}" for k in keys]


def save_candidates(path, C, feeder: Feeder):
    """CSV with one candidate per row; full float precision for reproducibility."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(candidate_header(feeder))
        for row in C:
            w.writerow([repr(float(v)) for v in row])


def load_candidates(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd)
        data = np.array([[float(v) for v in row] for row in rd], dtype=float)
    return head, data.reshape(-1, len(head))


def _dump_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
