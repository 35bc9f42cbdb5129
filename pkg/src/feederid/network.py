"""Radial feeder topology, meter data containers and flow aggregation.

Edges are always stored in depth-first preorder from the root (children
visited in ascending id order), and edge ``e`` is identified with its child
node. Impedance vectors follow the same order: ``z = [r_0..r_{E-1}, x_0..x_{E-1}]``.

Powers are consumption-positive: a load with ``P > 0`` lowers downstream
voltages.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    DisconnectedNode,
    DuplicateEdge,
    MissingRoot,
    NonPositiveLength,
    TopologyError,
)


@dataclass(frozen=True)
class FeederTopology:
    """Validated rooted tree. Build it with :func:`validate_topology`."""

    n_nodes: int
    edges: tuple  # ((parent, child, length_m), ...) in DFS preorder
    root: int = 0

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> list[int]:
        return list(range(self.n_nodes))

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([e[2] for e in self.edges], dtype=float)

    @cached_property
    def parent(self) -> np.ndarray:
        par = np.full(self.n_nodes, -1, dtype=int)
        for p, c, _ in self.edges:
            par[c] = p
        return par

    @cached_property
    def edge_of_node(self) -> np.ndarray:
        """Index of the edge entering each node (-1 for the root)."""
        idx = np.full(self.n_nodes, -1, dtype=int)
        for e, (_, c, _) in enumerate(self.edges):
            idx[c] = e
        return idx

    @cached_property
    def children(self) -> tuple:
        ch = [[] for _ in range(self.n_nodes)]
        for p, c, _ in self.edges:
            ch[p].append(c)
        return tuple(tuple(c) for c in ch)

    @cached_property
    def leaves(self) -> np.ndarray:
        """Degree-1 non-root nodes, ascending."""
        return np.array(
            [n for n in range(self.n_nodes) if n != self.root and not self.children[n]],
            dtype=int,
        )

    @property
    def leaf_set(self) -> frozenset:
        return frozenset(int(n) for n in self.leaves)

    def path_edges(self, node: int) -> list[int]:
        """Edges on the root-to-``node`` path, root side first."""
        out = []
        while node != self.root:
            e = self.edge_of_node[node]
            out.append(int(e))
            node = self.parent[node]
        return out[::-1]

    def subtree_nodes(self, node: int) -> list[int]:
        stack, out = [node], []
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.children[n])
        return out


def validate_topology(raw_edges) -> FeederTopology:
    """Check that ``raw_edges`` describe a tree rooted at 0 and orient it.

    Parameters
    ----------
    raw_edges : sequence of (int, int, float)
        Undirected edges ``(a, b, length_m)``; orientation is inferred from
        the root. Node ids must be exactly ``0..N-1``.

    Returns
    -------
    FeederTopology
        Edges re-ordered by DFS preorder and oriented parent -> child.
    """
    raw = [(int(a), int(b), float(l)) for a, b, l in raw_edges]
    if not raw:
        raise TopologyError("empty edge list")
    for a, b, l in raw:
        if not l > 0 or not np.isfinite(l):
            raise NonPositiveLength(f"edge ({a}, {b}) has length {l}")
        if a == b:
            raise CycleDetected(f"self-loop at node {a}")
    seen = set()
    for a, b, _ in raw:
        if (a, b) in seen:
            raise DuplicateEdge(f"edge ({a}, {b}) listed twice")
        seen.add((a, b))

    nodes = sorted({a for a, _, _ in raw} | {b for _, b, _ in raw})
    if 0 not in nodes:
        raise MissingRoot("node 0 (root) does not appear in any edge")

    # union-find catches cycles regardless of edge orientation
    uf = {n: n for n in nodes}

    def find(n):
        while uf[n] != n:
            uf[n] = uf[uf[n]]
            n = uf[n]
        return n

    for a, b, _ in raw:
        ra, rb = find(a), find(b)
        if ra == rb:
            raise CycleDetected(f"edge ({a}, {b}) closes a cycle")
        uf[ra] = rb

    if len({find(n) for n in nodes}) > 1:
        raise DisconnectedNode("edges do not form a single connected tree")
    if nodes != list(range(len(nodes))):
        raise TopologyError("node ids must be contiguous 0..N-1; use the loader to remap labels")

    adj = {n: [] for n in nodes}
    for a, b, l in raw:
        adj[a].append((b, l))
        adj[b].append((a, l))

    ordered = []
    stack = [(0, -1)]
    while stack:
        n, par = stack.pop()
        nbrs = sorted((m, l) for m, l in adj[n] if m != par)
        # push in reverse so the smallest child is visited first
        for m, l in reversed(nbrs):
            stack.append((m, n))
        if par >= 0:
            length = next(l for m, l in adj[n] if m == par)
            ordered.append((par, n, length))
    return FeederTopology(n_nodes=len(nodes), edges=tuple(ordered))


@dataclass
class MeterDataset:
    """Synchronized meter snapshots.

    ``P`` and ``Q`` are ``T x N`` (zero at unmetered nodes); ``v2`` holds
    squared voltage magnitudes for the nodes listed in ``v2_nodes`` (root
    first, then leaves ascending).
    """

    P: np.ndarray
    Q: np.ndarray
    v2: np.ndarray
    v2_nodes: np.ndarray
    root: int = 0

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.v2 = np.atleast_2d(np.asarray(self.v2, dtype=float))
        self.v2_nodes = np.asarray(self.v2_nodes, dtype=int)
        if self.P.shape != self.Q.shape:
            raise DimensionMismatch(f"P {self.P.shape} and Q {self.Q.shape} differ")
        if self.v2.shape[0] != self.P.shape[0]:
            raise DimensionMismatch("v2 and P have different snapshot counts")
        if self.v2.shape[1] != len(self.v2_nodes):
            raise DimensionMismatch("v2 columns do not match v2_nodes")
        if self.root not in set(self.v2_nodes.tolist()):
            raise DimensionMismatch("root voltage column missing")
        if not np.all(self.v2 > 0):
            raise ValueError("squared voltages must be strictly positive")

    @property
    def T(self) -> int:
        return self.P.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.P.shape[1]

    @property
    def node_index_map(self) -> dict:
        return {int(n): j for j, n in enumerate(self.v2_nodes)}

    def v2_at(self, nodes) -> np.ndarray:
        """``T x len(nodes)`` squared voltages for the given nodes."""
        m = self.node_index_map
        try:
            cols = [m[int(n)] for n in nodes]
        except KeyError as exc:
            raise DimensionMismatch(f"no voltage data for node {exc.args[0]}") from None
        return self.v2[:, cols]

    @property
    def root_v2(self) -> np.ndarray:
        return self.v2[:, self.node_index_map[self.root]]

    def subset(self, rows) -> "MeterDataset":
        rows = np.asarray(rows)
        return MeterDataset(self.P[rows], self.Q[rows], self.v2[rows], self.v2_nodes.copy(), self.root)


@dataclass
class AggregatedFlows:
    Pbr: np.ndarray  # T x E
    Qbr: np.ndarray


def incidence(topology: FeederTopology) -> np.ndarray:
    """Path-incidence matrix: ``A[n, e] = 1`` iff edge ``e`` is on the root path of ``n``."""
    A = np.zeros((topology.n_nodes, topology.n_edges))
    # preorder guarantees parents are filled before children
    for e, (p, c, _) in enumerate(topology.edges):
        A[c] = A[p]
        A[c, e] = 1.0
    return A


def aggregate_flows(topology: FeederTopology, data: MeterDataset) -> AggregatedFlows:
    """Aggregated branch powers by bottom-up accumulation of nodal loads."""
    if data.n_nodes != topology.n_nodes:
        raise DimensionMismatch(
            f"dataset has {data.n_nodes} nodes, topology has {topology.n_nodes}"
        )
    return AggregatedFlows(_accumulate(topology, data.P), _accumulate(topology, data.Q))


def _accumulate(topology: FeederTopology, nodal: np.ndarray) -> np.ndarray:
    node_tot = np.array(nodal, dtype=float, copy=True)
    for p, c, _ in reversed(topology.edges):
        node_tot[:, p] += node_tot[:, c]
    return node_tot[:, [c for _, c, _ in topology.edges]]


def degree2_nodes(topology: FeederTopology) -> list[int]:
    return [
        n for n in range(topology.n_nodes)
        if n != topology.root and len(topology.children[n]) == 1
    ]


def degree2_chains(topology: FeederTopology) -> list[list[int]]:
    """Maximal runs of edges joined through degree-2 internal nodes.

    Each chain is a list of edge indices ordered from the root side. Edges
    not touching any degree-2 node are omitted.
    """
    deg2 = set(degree2_nodes(topology))
    chains = []
    for e, (p, c, _) in enumerate(topology.edges):
        if p in deg2 or c not in deg2:
            continue
        chain = [e]
        node = c
        while node in deg2:
            nxt = topology.children[node][0]
            chain.append(int(topology.edge_of_node[nxt]))
            node = nxt
        chains.append(chain)
    return chains


@dataclass(frozen=True)
class CollapsedFeeder:
    topology: FeederTopology
    groups: tuple  # original edge indices per simplified edge
    node_map: dict = field(default_factory=dict)  # original node -> simplified node

    def matrix(self, n_edges: int) -> np.ndarray:
        """Summation matrix S with ``r_simplified = S @ r``."""
        S = np.zeros((len(self.groups), n_edges))
        for k, g in enumerate(self.groups):
            S[k, list(g)] = 1.0
        return S


def simplify_chains(topology: FeederTopology) -> CollapsedFeeder:
    """Degree-simplified feeder where every chain becomes one edge."""
    deg2 = set(degree2_nodes(topology))
    keep = [n for n in range(topology.n_nodes) if n not in deg2]
    node_map = {n: i for i, n in enumerate(keep)}
    raw, groups = [], {}
    for e, (p, c, l) in enumerate(topology.edges):
        if p in deg2:
            continue
        members, length, node = [e], l, c
        while node in deg2:
            nxt = topology.children[node][0]
            k = int(topology.edge_of_node[nxt])
            members.append(k)
            length += topology.edges[k][2]
            node = nxt
        raw.append((node_map[p], node_map[node], length))
        groups[node_map[node]] = tuple(members)
    simple = validate_topology(raw)
    ordered = tuple(groups[c] for _, c, _ in simple.edges)
    return CollapsedFeeder(simple, ordered, node_map)


def collapse_chains(topology: FeederTopology, z: np.ndarray):
    """Sum impedances along degree-2 chains.

    ``z`` may be a single impedance vector or a matrix of candidate rows.
    Returns ``(simplified_topology, z_simplified)``.
    """
    z = np.asarray(z, dtype=float)
    E = topology.n_edges
    if z.shape[-1] != 2 * E:
        raise DimensionMismatch(f"expected {2 * E} impedance entries, got {z.shape[-1]}")
    cf = simplify_chains(topology)
    S = cf.matrix(E)
    r, x = z[..., :E], z[..., E:]
    zs = np.concatenate([r @ S.T, x @ S.T], axis=-1)
    return cf.topology, zs


@dataclass
class SubFeeder:
    """Independent piece of a feeder split at a metered inner node."""

    topology: FeederTopology
    data: MeterDataset
    nodes: np.ndarray  # original node id for each local node
    edges: np.ndarray  # original edge index for each local edge


def split_at_metered(topology: FeederTopology, data: MeterDataset) -> list[SubFeeder]:
    """Split the feeder at inner nodes that carry load and a voltage reading.

    Each split node becomes the root of its own sub-feeder and a leaf of the
    upstream one, loaded with the aggregated power of its whole subtree.
    Returns a single piece when no split is needed.
    """
    vmap = data.node_index_map
    cuts = [
        n for n in range(topology.n_nodes)
        if n != topology.root and topology.children[n] and n in vmap
        and (np.any(data.P[:, n] != 0) or np.any(data.Q[:, n] != 0))
    ]
    if not cuts:
        return [SubFeeder(topology, data, np.arange(topology.n_nodes), np.arange(topology.n_edges))]
    cutset = set(cuts)
    agg_p = _accumulate(topology, data.P)
    agg_q = _accumulate(topology, data.Q)
    pieces = []
    for s in [topology.root] + cuts:
        local_nodes = [s]
        stack = [s]
        while stack:
            n = stack.pop()
            if n != s and n in cutset:
                continue
            for c in topology.children[n]:
                local_nodes.append(c)
                stack.append(c)
        index = {n: i for i, n in enumerate(local_nodes)}
        raw = [
            (index[topology.parent[n]], index[n], topology.edges[topology.edge_of_node[n]][2])
            for n in local_nodes[1:]
        ]
        sub = validate_topology(raw)
        order = np.empty(sub.n_nodes, dtype=int)
        for n, i in index.items():
            order[i] = n
        T = data.T
        P = np.zeros((T, sub.n_nodes))
        Q = np.zeros((T, sub.n_nodes))
        for n, i in index.items():
            if i == 0:
                continue
            if n in cutset:
                e = topology.edge_of_node[n]
                P[:, i], Q[:, i] = agg_p[:, e], agg_q[:, e]
            else:
                P[:, i], Q[:, i] = data.P[:, n], data.Q[:, n]
        vnodes = [0] + [int(i) for i in sub.leaves]
        v2 = np.column_stack([data.v2[:, vmap[int(order[i])]] for i in vnodes])
        edge_ids = np.array([topology.edge_of_node[order[c]] for _, c, _ in sub.edges], dtype=int)
        pieces.append(SubFeeder(sub, MeterDataset(P, Q, v2, vnodes), order, edge_ids))
    return pieces
