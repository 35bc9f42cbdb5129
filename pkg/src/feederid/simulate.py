"""Ground-truth data generation: AC power flow, LinDistFlow, noise and synthetic feeders."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import singledispatch

import numpy as np

from .errors import DimensionMismatch, NonConvergence
from .library import CableLibrary
from .network import FeederTopology, MeterDataset, aggregate_flows, incidence, validate_topology

# per-unit bases of the synthetic LV feeders: 400 V, 100 kVA
V_BASE = 400.0
S_BASE = 1.0e5
Z_BASE = V_BASE**2 / S_BASE


def _split_z(topology: FeederTopology, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    E = topology.n_edges
    if z.shape != (2 * E,):
        raise DimensionMismatch(f"impedance vector must have {2 * E} entries, got {z.shape}")
    return z[:E], z[E:]


def ac_power_flow(topology, z, P, Q, root_v=1.0, tol=1e-10, max_iter=100) -> np.ndarray:
    """Backward/forward sweep power flow on a radial feeder.

    Loads are constant power, consumption positive. ``P`` and ``Q`` are
    ``(N,)`` for one snapshot or ``(T, N)`` for several solved together.

    Returns
    -------
    ndarray of complex
        Node voltages in the root phase reference, same leading shape as ``P``.

    Raises
    ------
    NonConvergence
        If the largest voltage update is still above ``tol`` after
        ``max_iter`` sweeps; ``.snapshot`` holds the first offending row.
    """
    r, x = _split_z(topology, z)
    zc = r + 1j * x
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    single = P.ndim == 1
    S = np.atleast_2d(P) + 1j * np.atleast_2d(Q)
    if S.shape[1] != topology.n_nodes:
        raise DimensionMismatch("injection vector does not match node count")
    T = S.shape[0]
    parents = np.array([p for p, _, _ in topology.edges], dtype=int)
    childs = np.array([c for _, c, _ in topology.edges], dtype=int)
    V = np.full((T, topology.n_nodes), complex(root_v))
    done = np.zeros(T, dtype=bool)
    for _ in range(max_iter):
        I_node = np.conj(S / V)
        I_acc = I_node.copy()
        for k in range(topology.n_edges - 1, -1, -1):
            I_acc[:, parents[k]] += I_acc[:, childs[k]]
        I_br = I_acc[:, childs]
        V_new = V.copy()
        for k in range(topology.n_edges):
            V_new[:, childs[k]] = V_new[:, parents[k]] - zc[k] * I_br[:, k]
        step = np.max(np.abs(V_new - V), axis=1)
        V = V_new
        if not np.all(np.isfinite(V)):
            break
        done = step < tol
        if np.all(done):
            return V[0] if single else V
    bad = int(np.flatnonzero(~done)[0]) if np.any(~done) else 0
    raise NonConvergence(f"power flow did not converge in {max_iter} sweeps", snapshot=bad)


def lindistflow_forward(topology, z, P, Q, root_v2=1.0) -> np.ndarray:
    """Squared voltages predicted by LinDistFlow at every node (``T x N``).

    ``root_v2`` may be a scalar or one value per snapshot.
    """
    r, x = _split_z(topology, z)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if P.shape[1] != topology.n_nodes or P.shape != Q.shape:
        raise DimensionMismatch("injections do not match topology")
    v0 = np.broadcast_to(np.asarray(root_v2, dtype=float), (P.shape[0],))
    dummy = MeterDataset(P, Q, v0[:, None], [topology.root])
    fl = aggregate_flows(topology, dummy)
    A = incidence(topology)
    return v0[:, None] - 2.0 * (fl.Pbr * r + fl.Qbr * x) @ A.T


# ---------------------------------------------------------------------------
# injection samplers: callables (rng, T, topology) -> (P, Q), loads at leaves


@dataclass
class FixedPowerFactor:
    """Leaf loads uniform in ``[p_min, p_max]`` at one power factor (lagging)."""

    pf: float = 0.95
    p_max: float = 0.06
    p_min: float = 0.0

    def __call__(self, rng, T, topology):
        P = np.zeros((T, topology.n_nodes))
        P[:, topology.leaves] = rng.uniform(self.p_min, self.p_max, (T, len(topology.leaves)))
        return P, P * np.tan(np.arccos(self.pf))


@dataclass
class UniformInjections:
    """Independent uniform P and Q at every leaf (mixed power factors)."""

    p_max: float = 0.06
    q_max: float = 0.03
    p_min: float = 0.0
    q_min: float = 0.0

    def __call__(self, rng, T, topology):
        L = len(topology.leaves)
        P = np.zeros((T, topology.n_nodes))
        Q = np.zeros((T, topology.n_nodes))
        P[:, topology.leaves] = rng.uniform(self.p_min, self.p_max, (T, L))
        Q[:, topology.leaves] = rng.uniform(self.q_min, self.q_max, (T, L))
        return P, Q


class ProfileReplay:
    """Replays recorded load profiles, one ``(P, Q)`` pair per leaf per snapshot.

    Profiles are ``T_prof x L`` arrays (per-unit); snapshot rows are drawn
    without replacement when ``T`` is smaller than the profile length,
    otherwise replayed in order and wrapped.
    """

    def __init__(self, P, Q):
        self.P = np.atleast_2d(np.asarray(P, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))

    @classmethod
    def from_csv(cls, path):
        """CSV with columns ``t, leaf, P, Q``; leaves are ranked by id."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append((int(rec["t"]), int(rec["leaf"]), float(rec["P"]), float(rec["Q"])))
        ts = sorted({r[0] for r in rows})
        leaves = sorted({r[1] for r in rows})
        ti = {t: i for i, t in enumerate(ts)}
        li = {n: i for i, n in enumerate(leaves)}
        P = np.zeros((len(ts), len(leaves)))
        Q = np.zeros_like(P)
        for t, n, p, q in rows:
            P[ti[t], li[n]] = p
            Q[ti[t], li[n]] = q
        return cls(P, Q)

    def __call__(self, rng, T, topology):
        L = len(topology.leaves)
        if self.P.shape[1] != L:
            raise DimensionMismatch(f"profile has {self.P.shape[1]} leaves, feeder has {L}")
        n = self.P.shape[0]
        rows = np.sort(rng.choice(n, T, replace=False)) if T <= n else np.arange(T) % n
        P = np.zeros((T, topology.n_nodes))
        Q = np.zeros((T, topology.n_nodes))
        P[:, topology.leaves] = self.P[rows]
        Q[:, topology.leaves] = self.Q[rows]
        return P, Q


def make_dataset(topology, z_true, sampler, T, seed=0, model="ac", root_v=1.0) -> MeterDataset:
    """Simulate ``T`` snapshots and keep only what smart meters would record.

    ``model`` is ``"ac"`` (backward/forward sweep) or ``"lindistflow"``.
    P and Q are kept at every node (zero at inner nodes); voltages only at
    the root and the leaves.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    P, Q = sampler(rng, T, topology)
    if model == "ac":
        V = ac_power_flow(topology, z_true, P, Q, root_v=root_v)
        v2 = np.abs(np.atleast_2d(V)) ** 2
    elif model == "lindistflow":
        v2 = lindistflow_forward(topology, z_true, P, Q, root_v2=root_v**2)
    else:
        raise ValueError(f"unknown model {model!r}")
    nodes = [topology.root] + [int(n) for n in topology.leaves]
    return MeterDataset(P, Q, v2[:, nodes], nodes, topology.root)


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseSpec:
    """Relative noise levels. Lengths and voltages get gaussian noise,
    injections uniform noise of the given half-width."""

    length_noise_sigma: float = 0.0
    injection_noise_halfwidth: float = 0.0
    voltage_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.length_noise_sigma, self.injection_noise_halfwidth, self.voltage_noise_sigma) < 0:
            raise ValueError("noise levels must be non-negative")

    def stream(self, key: int) -> np.random.Generator:
        # counter-based generator, one independent stream per noise family
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, key])))


_LENGTHS, _P, _Q, _V = 0, 1, 2, 3


@singledispatch
def apply_noise(target, spec: NoiseSpec):
    """Return a perturbed copy of a length vector or a :class:`MeterDataset`."""
    raise TypeError(f"cannot apply noise to {type(target).__name__}")


@apply_noise.register
def _(lengths: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=float)
    if spec.length_noise_sigma == 0:
        return lengths.copy()
    g = spec.stream(_LENGTHS).normal(0.0, spec.length_noise_sigma, lengths.shape)
    return np.maximum(lengths * (1.0 + g), 1e-3 * lengths)


@apply_noise.register
def _(data: MeterDataset, spec: NoiseSpec) -> MeterDataset:
    P, Q, v2 = data.P.copy(), data.Q.copy(), data.v2.copy()
    h = spec.injection_noise_halfwidth
    if h > 0:
        P *= 1.0 + spec.stream(_P).uniform(-h, h, P.shape)
        Q *= 1.0 + spec.stream(_Q).uniform(-h, h, Q.shape)
    s = spec.voltage_noise_sigma
    if s > 0:
        v = np.sqrt(v2) * (1.0 + spec.stream(_V).normal(0.0, s, v2.shape))
        v2 = v**2
    return MeterDataset(P, Q, v2, data.v2_nodes.copy(), data.root)


# ---------------------------------------------------------------------------
# synthetic feeders


@dataclass
class GroundTruthAssignment:
    choice: np.ndarray  # library index per edge
    z_true: np.ndarray

    def to_json(self, topology: FeederTopology) -> dict:
        return {f"{p}-{c}": int(k) for (p, c, _), k in zip(topology.edges, self.choice)}


def random_feeder(n_nodes, chain_edges=(), seed=0, length_range=(20.0, 120.0)) -> FeederTopology:
    """Random radial feeder whose only degree-2 nodes sit in the requested chains.

    Parameters
    ----------
    n_nodes : int
        Total node count including chain nodes.
    chain_edges : sequence of int
        Edge count of each degree-2 chain (each >= 2). A chain of ``k``
        edges adds ``k - 1`` degree-2 nodes.
    """
    rng = np.random.default_rng(seed)
    extra = sum(k - 1 for k in chain_edges)
    if any(k < 2 for k in chain_edges):
        raise ValueError("chains need at least two edges")
    n_base = n_nodes - extra
    if n_base < 4:
        raise ValueError("too few nodes for the requested chains")
    children = {0: [1], 1: []}
    leaves = [1]
    count = 2
    while count < n_base:
        remaining = n_base - count
        if remaining == 1:
            inner = [n for n, c in children.items() if len(c) >= 2]
            host = inner[rng.integers(len(inner))]
            children[host].append(count)
            children[count] = []
            leaves.append(count)
            count += 1
            continue
        k = int(min(remaining, rng.integers(2, 4)))
        if remaining - k == 1:
            k = 2 if remaining > 3 else remaining
        host = leaves.pop(rng.integers(len(leaves)))
        for _ in range(k):
            children[host].append(count)
            children[count] = []
            leaves.append(count)
            count += 1
    edges = [(p, c) for p, cs in children.items() for c in cs]
    # subdivide distinct edges to create the chains
    picks = rng.choice(len(edges), size=len(chain_edges), replace=False)
    raw = []
    chain_of = dict(zip(picks.tolist(), chain_edges))
    for i, (p, c) in enumerate(edges):
        k = chain_of.get(i, 1)
        prev = p
        for j in range(k - 1):
            raw.append((prev, count, float(rng.uniform(*length_range))))
            prev = count
            count += 1
        raw.append((prev, c, float(rng.uniform(*length_range))))
    return relabel_preorder(validate_topology(raw))


def relabel_preorder(topology: FeederTopology) -> FeederTopology:
    """Rename nodes so ids follow DFS preorder (edge ``e`` ends at node ``e + 1``)."""
    new = {topology.root: 0}
    for k, (_, c, _) in enumerate(topology.edges):
        new[c] = k + 1
    return validate_topology([(new[p], new[c], l) for p, c, l in topology.edges])


def assign_cables(topology: FeederTopology, library: CableLibrary, seed=0) -> GroundTruthAssignment:
    rng = np.random.default_rng(seed)
    choice = np.array([rng.integers(len(p)) for p in library.per_edge])
    return GroundTruthAssignment(choice, library.assignment(choice, topology.lengths))


def with_lengths(topology: FeederTopology, lengths) -> FeederTopology:
    """Copy of ``topology`` with replaced edge lengths (same ordering)."""
    lengths = np.asarray(lengths, dtype=float)
    return replace(
        topology,
        edges=tuple((p, c, float(l)) for (p, c, _), l in zip(topology.edges, lengths)),
    )
