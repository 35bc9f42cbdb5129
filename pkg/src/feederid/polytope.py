"""Feasible-impedance polyhedron: best-fit LP, half-space assembly, library
bounds, Chebyshev center, identifiability diagnostics and free/fixed split.

Impedance vectors are ``z = [r, x]`` with edges in topology order. Squared
voltages are predicted as ``v0^2 - M z`` where ``v0^2`` is the measured
root voltage (1 in per-unit for a stiff source).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, Infeasible, InfeasibleFixedPoint, SolverFailure
from .library import LibraryBounds
from .lp import solve_lp
from .network import AggregatedFlows, FeederTopology, MeterDataset, degree2_chains, incidence

log = logging.getLogger(__name__)

DEFAULT_KAPPA = 1.05
MIN_SLACK = 1e-12
DATA_KINDS = ("v_upper", "v_lower")


@dataclass
class HalfSpaceSystem:
    """``M z <= d`` with one provenance tag ``(kind, leaf_or_edge, t)`` per row."""

    M: np.ndarray
    d: np.ndarray
    tags: list = field(default_factory=list)
    margin: float = 0.0  # slack added to the data rows (kappa * delta*)

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        if self.M.shape[0] != self.d.shape[0]:
            raise DimensionMismatch(f"M has {self.M.shape[0]} rows, d has {self.d.shape[0]}")
        if not self.tags:
            self.tags = [("row", i, -1) for i in range(len(self.d))]
        if len(self.tags) != len(self.d):
            raise DimensionMismatch("one tag per row required")

    @property
    def dim(self) -> int:
        return self.M.shape[1]

    def __len__(self):
        return len(self.d)

    def select(self, rows) -> "HalfSpaceSystem":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return HalfSpaceSystem(self.M[rows], self.d[rows], [self.tags[i] for i in rows], self.margin)

    def stack(self, other: "HalfSpaceSystem") -> "HalfSpaceSystem":
        return HalfSpaceSystem(
            np.vstack([self.M, other.M]), np.concatenate([self.d, other.d]),
            self.tags + other.tags, self.margin,
        )

    def data_rows(self) -> np.ndarray:
        return np.array([t[0] in DATA_KINDS for t in self.tags], dtype=bool)

    def violation(self, z) -> np.ndarray:
        """Positive part of ``M z - d``; ``z`` may be a matrix of rows."""
        return np.maximum(np.asarray(z) @ self.M.T - self.d, 0.0)

    def contains(self, z, tol=1e-9) -> np.ndarray:
        return np.all(np.asarray(z) @ self.M.T <= self.d + tol, axis=-1)

    def save(self, path):
        """Dump to ``.npz`` (M, d, tags as strings)."""
        np.savez(path, M=self.M, d=self.d, tags=np.array([json.dumps(t) for t in self.tags]),
                 margin=self.margin)

    @classmethod
    def load(cls, path) -> "HalfSpaceSystem":
        f = np.load(path)
        tags = [tuple(json.loads(s)) for s in f["tags"]]
        return cls(f["M"], f["d"], tags, float(f["margin"]))

    def to_csv(self, path):
        """Rows of ``[M | d]`` with a header, for quick inspection."""
        n = self.dim
        header = ",".join([f"z{j}" for j in range(n)] + ["d", "kind", "ref", "t"])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row, rhs, tag in zip(self.M, self.d, self.tags):
                vals = ",".join(repr(float(v)) for v in row)
                fh.write(f"{vals},{float(rhs)!r},{tag[0]},{tag[1]},{tag[2]}\n")


@dataclass
class DeltaSolution:
    z_star: np.ndarray
    delta_star: float
    cs_residual: float = 0.0


def data_matrix(topology: FeederTopology, flows: AggregatedFlows, leaves=None) -> np.ndarray:
    """Stacked per-leaf blocks (leaf-major, ``T`` rows each) mapping z to voltage drop."""
    A = incidence(topology)
    leaves = topology.leaves if leaves is None else leaves
    blocks = [2.0 * np.hstack([flows.Pbr * A[n], flows.Qbr * A[n]]) for n in leaves]
    return np.vstack(blocks)


def _measured_drops(topology: FeederTopology, data: MeterDataset) -> np.ndarray:
    """``v0^2 - v_n^2`` stacked leaf-major, matching :func:`data_matrix`."""
    v0 = data.root_v2
    vl = data.v2_at(topology.leaves)
    return (v0[:, None] - vl).T.reshape(-1)


def _check(topology, data, flows):
    if data.n_nodes != topology.n_nodes:
        raise DimensionMismatch("dataset and topology node counts differ")
    if flows.Pbr.shape != (data.T, topology.n_edges):
        raise DimensionMismatch("flows do not match dataset")
    if len(topology.leaves) == 0:
        raise ValueError("feeder has no leaves")


def solve_delta_lp(topology, data, flows) -> DeltaSolution:
    """Smallest uniform voltage residual ``delta*`` achievable by some ``z >= 0``.

    Columns are rescaled to unit max-abs before calling the solver; the
    returned ``z_star`` is in original units.
    """
    _check(topology, data, flows)
    M = data_matrix(topology, flows)
    drop = _measured_drops(topology, data)
    n = M.shape[1]
    scale = np.max(np.abs(M), axis=0)
    scale[scale == 0] = 1.0
    Ms = M / scale
    ones = np.ones((len(drop), 1))
    # |drop - M z| <= delta
    A_ub = np.vstack([np.hstack([Ms, -ones]), np.hstack([-Ms, -ones])])
    b_ub = np.concatenate([drop, -drop])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = solve_lp(c, A_ub, b_ub, bounds=[(0, None)] * (n + 1))
    z = res.x[:n] / scale
    delta = float(max(res.x[-1], 0.0))
    return DeltaSolution(z, delta, res.cs_residual)


def assemble_halfspaces(topology, data, flows, delta_star, kappa=DEFAULT_KAPPA,
                        min_slack=MIN_SLACK) -> HalfSpaceSystem:
    """Half-space form of all impedance vectors reproducing the leaf voltages
    within ``kappa * delta_star``.

    For each leaf the block ``-M^n`` (predicted voltage not above measured
    plus slack) precedes ``+M^n`` (not below measured minus slack).
    """
    if not kappa > 1:
        raise ValueError("kappa must be > 1")
    _check(topology, data, flows)
    margin = kappa * delta_star
    if delta_star < min_slack:
        log.warning("delta* = %.3g below %.1g: using absolute slack %.1g so the "
                    "polytope keeps some volume", delta_star, min_slack, min_slack)
        margin = min_slack
    T = data.T
    A = incidence(topology)
    v0 = data.root_v2
    blocks, rhs, tags = [], [], []
    for n in topology.leaves:
        Mn = 2.0 * np.hstack([flows.Pbr * A[n], flows.Qbr * A[n]])
        vn = data.v2_at([n])[:, 0]
        blocks += [-Mn, Mn]
        rhs += [vn - v0 + margin, v0 - vn + margin]
        tags += [("v_upper", int(n), t) for t in range(T)]
        tags += [("v_lower", int(n), t) for t in range(T)]
    return HalfSpaceSystem(np.vstack(blocks), np.concatenate(rhs), tags, margin)


def apply_library_bounds(system: HalfSpaceSystem, lengths, bounds: LibraryBounds) -> HalfSpaceSystem:
    """Append per-edge box and r-x line constraints scaled by edge length."""
    l = np.asarray(lengths, dtype=float)
    E = len(l)
    if system.dim != 2 * E:
        raise DimensionMismatch("system dimension does not match edge count")
    I = np.eye(E)
    O = np.zeros((E, E))
    b = bounds
    M = np.vstack([
        np.hstack([I, O]),
        np.hstack([O, I]),
        np.hstack([-I, O]),
        np.hstack([O, -I]),
        np.hstack([-b.m_hi * I, I]),
        np.hstack([b.m_lo * I, -I]),
    ])
    d = np.concatenate([l * b.r_hi, l * b.x_hi, -l * b.r_lo, -l * b.x_lo, l * b.b_hi, -l * b.b_lo])
    kinds = ("r_hi", "x_hi", "r_lo", "x_lo", "line_hi", "line_lo")
    tags = [(k, e, -1) for k in kinds for e in range(E)]
    return system.stack(HalfSpaceSystem(M, d, tags))


def chebyshev_center(system: HalfSpaceSystem, lexicographic: bool = True, max_stages=None):
    """Center and radius of the largest Euclidean ball inside ``M z <= d``.

    The largest ball is often not unique (any box that is not a cube). With
    ``lexicographic`` the tie is broken by max-min slack: rows whose
    multiplier is positive are tight on every optimal center, so they are
    pinned at the current radius and the common slack of the others is
    maximized again. A box then returns its midpoint.

    Raises :class:`Infeasible` for an empty set and :class:`Unbounded` when
    arbitrarily large balls fit.
    """
    norms = np.linalg.norm(system.M, axis=1)
    zero = norms == 0
    if np.any(system.d[zero] < 0):
        raise Infeasible("a constant row has negative right-hand side")
    M, d, norms = system.M[~zero], system.d[~zero], norms[~zero]
    n = system.dim
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(None, None)] * n + [(0, None)]
    res = solve_lp(c, np.hstack([M, norms[:, None]]), d, bounds=bounds)
    z, radius = res.x[:n], float(res.x[-1])
    if not lexicographic:
        return z, radius
    pinned = np.full(len(d), np.nan)
    t, duals = radius, res.duals
    stages = max_stages if max_stages is not None else n + 1
    for _ in range(stages):
        free = np.isnan(pinned)
        tight = free & (duals > 1e-9 * max(duals.max(), 1e-300))
        if not tight.any():
            break
        pinned[tight] = t
        free &= ~tight
        if not free.any():
            break
        A = np.hstack([M, np.where(free, norms, 0.0)[:, None]])
        rhs = np.where(free, d, d - pinned * norms)
        try:
            res = solve_lp(c, A, rhs, bounds=bounds)
        except (Infeasible, SolverFailure):
            break  # numerical trouble at a pinned face: keep the last center
        z, t, duals = res.x[:n], float(res.x[-1]), res.duals
        if t <= 0:
            break
    return z, radius


@dataclass
class IdentifiabilityReport:
    singular_values: np.ndarray
    rank: int
    n_columns: int
    duplicate_groups: list  # groups of edge indices with identical M columns
    zero_columns: list
    constant_pf: bool
    tan_phi: float | None
    pinv_norm1: float

    def to_dict(self) -> dict:
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "rank": int(self.rank),
            "n_columns": int(self.n_columns),
            "duplicate_groups": [list(map(int, g)) for g in self.duplicate_groups],
            "zero_columns": list(map(int, self.zero_columns)),
            "constant_pf": bool(self.constant_pf),
            "tan_phi": None if self.tan_phi is None else float(self.tan_phi),
            "pinv_norm1": float(self.pinv_norm1),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _duplicate_groups(cols: np.ndarray, rtol: float) -> list:
    n = cols.shape[1]
    norms = np.linalg.norm(cols, axis=0)
    seen = np.zeros(n, dtype=bool)
    groups = []
    for i in range(n):
        if seen[i] or norms[i] == 0:
            continue
        g = [i]
        for j in range(i + 1, n):
            if seen[j] or norms[j] == 0:
                continue
            if np.linalg.norm(cols[:, i] - cols[:, j]) <= rtol * max(norms[i], norms[j]):
                g.append(j)
                seen[j] = True
        if len(g) > 1:
            groups.append(g)
    return groups


def diagnose_identifiability(system: HalfSpaceSystem, rank_rtol=1e-8, dup_rtol=1e-10,
                             pf_rtol=1e-8) -> IdentifiabilityReport:
    """Spectral and structural diagnostics of the data block of ``system``.

    Looks for duplicated edge columns (degree-2 signature), a reactive half
    proportional to the active half (constant power factor) and reports the
    numerical rank.
    """
    rows = np.array([t[0] == "v_lower" for t in system.tags], dtype=bool)
    M = system.M[rows] if rows.any() else system.M
    E = M.shape[1] // 2
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > rank_rtol * sv[0])) if sv.size and sv[0] > 0 else 0
    left, right = M[:, :E], M[:, E:]
    dup_r = _duplicate_groups(left, dup_rtol)
    dup_x = _duplicate_groups(right, dup_rtol)
    # an edge pair counts only if both its r and x columns coincide
    xsets = [set(g) for g in dup_x]
    groups = []
    for g in dup_r:
        for xs in xsets:
            common = sorted(set(g) & xs)
            if len(common) > 1:
                groups.append(common)
    zero_cols = [e for e in range(E)
                 if not np.any(left[:, e]) and not np.any(right[:, e])]
    ll = float(np.sum(left * left))
    tan_phi, const_pf = None, False
    if ll > 0:
        k = float(np.sum(left * right) / ll)
        resid = np.linalg.norm(right - k * left)
        if resid <= pf_rtol * max(np.linalg.norm(right), np.finfo(float).tiny):
            const_pf, tan_phi = True, k
    pinv = np.linalg.pinv(M, rcond=rank_rtol)
    return IdentifiabilityReport(sv, rank, 2 * E, groups, zero_cols, const_pf, tan_phi,
                                 float(np.abs(pinv).sum(axis=0).max()) if pinv.size else 0.0)


def auto_select_free(report: IdentifiabilityReport | None, topology: FeederTopology,
                     override=None) -> np.ndarray:
    """Coordinates to explore by sampling.

    By default the r and x entries of every edge in a degree-2 chain, plus
    any edge group the diagnostics found with duplicated columns. Data-driven
    deficiencies such as a constant power factor are left to the library
    bounds. ``override`` is returned verbatim (sorted, deduplicated).
    """
    E = topology.n_edges
    if override is not None:
        return np.unique(np.asarray(override, dtype=int))
    edges = {e for chain in degree2_chains(topology) for e in chain}
    if report is not None:
        edges |= {e for g in report.duplicate_groups for e in g}
    edges = sorted(edges)
    return np.array(edges + [E + e for e in edges], dtype=int)


@dataclass
class DirectionSplit:
    """Reduced system over the free coordinates with the rest pinned to ``z0``."""

    free_indices: np.ndarray
    fixed_indices: np.ndarray
    z0: np.ndarray
    system: HalfSpaceSystem  # in free coordinates, zero rows dropped
    rows: np.ndarray  # original row index of each reduced row

    @property
    def z0_fixed(self) -> np.ndarray:
        return self.z0[self.fixed_indices]

    def lift(self, samples_free) -> np.ndarray:
        """Full-dimensional rows: free entries from ``samples_free``, the rest from ``z0``."""
        s = np.atleast_2d(np.asarray(samples_free, dtype=float))
        if s.shape[1] != len(self.free_indices):
            raise DimensionMismatch("sample width does not match the free set")
        out = np.repeat(self.z0[None, :], s.shape[0], axis=0)
        out[:, self.free_indices] = s
        return out


def split_directions(system: HalfSpaceSystem, z0, free_indices, tol=1e-9) -> DirectionSplit:
    """Move the fixed coordinates to the right-hand side.

    Raises :class:`InfeasibleFixedPoint` if ``z0`` violates ``system`` by
    more than ``tol`` (relative to ``1 + |d|``).
    """
    z0 = np.asarray(z0, dtype=float)
    n = system.dim
    free = np.unique(np.asarray(free_indices, dtype=int))
    if free.size and (free[0] < 0 or free[-1] >= n):
        raise IndexError("free index out of range")
    fixed = np.setdiff1d(np.arange(n), free)
    viol = system.M @ z0 - system.d
    if np.any(viol > tol * (1.0 + np.abs(system.d))):
        worst = int(np.argmax(viol))
        raise InfeasibleFixedPoint(
            f"z0 violates row {worst} {system.tags[worst]} by {viol[worst]:.3g}")
    Mf = system.M[:, free]
    df = system.d - system.M[:, fixed] @ z0[fixed]
    keep = np.any(Mf != 0, axis=1)
    if np.any(df[~keep] < -tol * (1.0 + np.abs(system.d[~keep]))):
        raise InfeasibleFixedPoint("fixed coordinates violate a constraint with no free entries")
    rows = np.flatnonzero(keep)
    reduced = HalfSpaceSystem(Mf[rows], df[rows], [system.tags[i] for i in rows], system.margin)
    return DirectionSplit(free, fixed, z0.copy(), reduced, rows)
