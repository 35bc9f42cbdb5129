import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_trees
from feederid.errors import (CycleDetected, DimensionMismatch, DisconnectedNode, DuplicateEdge,
                             MissingRoot, NonPositiveLength)
from feederid.network import (MeterDataset, aggregate_flows, collapse_chains, degree2_chains,
                              incidence, simplify_chains, split_at_metered, validate_topology)


def _dataset(top, P, Q=None):
    P = np.atleast_2d(P)
    Q = np.zeros_like(P) if Q is None else np.atleast_2d(Q)
    nodes = [0] + list(top.leaves)
    return MeterDataset(P, Q, np.ones((P.shape[0], len(nodes))), nodes)


# validation


def test_smallest_chain():
    top = validate_topology([(0, 1, 10.0), (1, 2, 20.0)])
    assert top.n_nodes == 3
    assert top.leaf_set == {2}
    assert top.edges == ((0, 1, 10.0), (1, 2, 20.0))


def test_two_cycle():
    with pytest.raises(CycleDetected):
        validate_topology([(0, 1, 10), (1, 0, 10)])


def test_forest_is_disconnected():
    with pytest.raises(DisconnectedNode):
        validate_topology([(0, 1, 10), (2, 3, 5)])


@pytest.mark.parametrize("edges, err", [
    ([(0, 1, 0.0)], NonPositiveLength),
    ([(0, 1, -3.0)], NonPositiveLength),
    ([(0, 1, 1.0), (0, 1, 2.0)], DuplicateEdge),
    ([(1, 2, 1.0)], MissingRoot),
    ([(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)], CycleDetected),
])
def test_structural_errors(edges, err):
    with pytest.raises(err):
        validate_topology(edges)


def test_orientation_and_preorder():
    # given child->parent and out of order
    top = validate_topology([(3, 1, 4.0), (1, 0, 1.0), (2, 0, 2.0), (4, 1, 5.0)])
    assert top.edges == ((0, 1, 1.0), (1, 3, 4.0), (1, 4, 5.0), (0, 2, 2.0))
    assert list(top.leaves) == [2, 3, 4]


@given(random_trees())
def test_tree_invariants(raw):
    top = validate_topology(raw)
    assert top.n_edges == top.n_nodes - 1
    children = [c for _, c, _ in top.edges]
    assert sorted(children) == list(range(1, top.n_nodes))
    assert np.all(top.lengths > 0)
    assert sorted(l for *_, l in raw) == sorted(top.lengths.tolist())


# incidence


def test_incidence_examples():
    A = incidence(validate_topology([(0, 1, 1), (1, 2, 1)]))
    np.testing.assert_array_equal(A, [[0, 0], [1, 0], [1, 1]])
    A = incidence(validate_topology([(0, 1, 1), (0, 2, 1)]))
    np.testing.assert_array_equal(A[1:], [[1, 0], [0, 1]])
    A = incidence(validate_topology([(0, 1, 1), (1, 2, 1), (1, 3, 1)]))
    np.testing.assert_array_equal(A[2:], [[1, 1, 0], [1, 0, 1]])


@given(random_trees(max_nodes=200))
def test_incidence_matches_path_oracle(raw):
    top = validate_topology(raw)
    g = nx.Graph([(a, b) for a, b, _ in raw])
    A = incidence(top)
    edge_id = {frozenset((p, c)): e for e, (p, c, _) in enumerate(top.edges)}
    assert not A[0].any()
    assert np.all(A.sum(axis=0) >= 1)
    for n in range(top.n_nodes):
        path = nx.shortest_path(g, 0, n)
        on_path = {edge_id[frozenset(pair)] for pair in zip(path, path[1:])}
        assert set(np.flatnonzero(A[n])) == on_path


# aggregated flows


def test_flows_single_load_telescopes():
    top = validate_topology([(0, 1, 1), (1, 2, 1)])
    f = aggregate_flows(top, _dataset(top, [[0, 0, 1.0]]))
    np.testing.assert_array_equal(f.Pbr, [[1.0, 1.0]])


def test_flows_y_tree_trunk():
    top = validate_topology([(0, 1, 1), (1, 2, 1), (1, 3, 1)])
    f = aggregate_flows(top, _dataset(top, [[0, 0, 1.0, 2.0]]))
    assert f.Pbr[0, 0] == 3.0


@given(random_trees(max_nodes=30), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_flows_match_subtree_oracle(raw, T, seed):
    top = validate_topology(raw)
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(T, top.n_nodes))
    Q = rng.normal(size=(T, top.n_nodes))
    f = aggregate_flows(top, _dataset(top, P, Q))
    g = nx.DiGraph([(p, c) for p, c, _ in top.edges])
    for e, (_, c, _) in enumerate(top.edges):
        sub = [c] + sorted(nx.descendants(g, c))
        np.testing.assert_allclose(f.Pbr[:, e], P[:, sub].sum(axis=1), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(f.Qbr[:, e], Q[:, sub].sum(axis=1), rtol=1e-12, atol=1e-12)


def test_flows_dimension_mismatch():
    top = validate_topology([(0, 1, 1), (1, 2, 1)])
    other = validate_topology([(0, 1, 1)])
    with pytest.raises(DimensionMismatch):
        aggregate_flows(top, _dataset(other, [[0, 1.0]]))


# degree-2 chains


def test_pure_chain():
    top = validate_topology([(0, 1, 1), (1, 2, 1), (2, 3, 1)])
    assert degree2_chains(top) == [[0, 1, 2]]


def test_star_has_no_chains():
    assert degree2_chains(validate_topology([(0, i, 1) for i in range(1, 5)])) == []


def _replica_tree():
    # 116 nodes with six degree-2 nodes: four two-edge chains and one three-edge chain
    from feederid.simulate import random_feeder
    return random_feeder(116, chain_edges=(2, 2, 2, 2, 3), seed=3)


def test_replica_chain_edge_count():
    top = _replica_tree()
    assert top.n_nodes == 116
    deg = np.zeros(top.n_nodes, dtype=int)
    for p, c, _ in top.edges:
        deg[p] += 1
        deg[c] += 1
    assert int(np.sum(deg[1:] == 2)) == 6
    assert sum(len(c) for c in degree2_chains(top)) == 11


@given(random_trees(max_nodes=40))
def test_chains_partition_degree2_edges(raw):
    top = validate_topology(raw)
    chains = degree2_chains(top)
    flat = [e for c in chains for e in c]
    assert len(flat) == len(set(flat))
    deg = np.zeros(top.n_nodes, dtype=int)
    for p, c, _ in top.edges:
        deg[p] += 1
        deg[c] += 1
    touching = {e for e, (p, c, _) in enumerate(top.edges)
                if (p != 0 and deg[p] == 2) or (c != 0 and deg[c] == 2)}
    assert set(flat) == touching


def test_collapse_examples():
    top = validate_topology([(0, 1, 1), (1, 2, 1)])
    simple, z = collapse_chains(top, np.array([0.1, 0.2, 0.01, 0.02]))
    assert simple.n_edges == 1
    np.testing.assert_allclose(z, [0.3, 0.03])
    top = validate_topology([(0, 1, 1), (1, 2, 1), (2, 3, 1)])
    _, z = collapse_chains(top, np.array([0.1, 0.2, 0.3, 0.01, 0.02, 0.03]))
    np.testing.assert_allclose(z, [0.6, 0.06])
    star = validate_topology([(0, 1, 1), (0, 2, 1)])
    _, z = collapse_chains(star, np.arange(4.0))
    np.testing.assert_array_equal(z, np.arange(4.0))
    with pytest.raises(DimensionMismatch):
        collapse_chains(star, np.arange(3.0))


@given(random_trees(max_nodes=40), st.integers(0, 2**31 - 1))
def test_collapse_preserves_totals(raw, seed):
    top = validate_topology(raw)
    z = np.random.default_rng(seed).uniform(size=(3, 2 * top.n_edges))
    simple, zs = collapse_chains(top, z)
    E, Es = top.n_edges, simple.n_edges
    np.testing.assert_allclose(zs[:, :Es].sum(1), z[:, :E].sum(1))
    np.testing.assert_allclose(zs[:, Es:].sum(1), z[:, E:].sum(1))
    assert not degree2_chains(simple) or all(len(c) == 0 for c in degree2_chains(simple))
    cf = simplify_chains(top)
    assert sorted(e for g in cf.groups for e in g) == list(range(E))


# metered inner nodes


def test_split_at_metered_inner_node():
    # 0-1-2 with a branch 1-3; node 1 has a meter with load and voltage
    top = validate_topology([(0, 1, 1), (1, 2, 1), (1, 3, 1)])
    P = np.array([[0.0, 0.5, 1.0, 2.0]])
    Q = 0.1 * P
    data = MeterDataset(P, Q, np.array([[1.0, 0.99, 0.98, 0.97]]), [0, 1, 2, 3])
    pieces = split_at_metered(top, data)
    assert len(pieces) == 2
    up, down = pieces
    assert up.topology.n_edges == 1 and up.edges.tolist() == [0]
    np.testing.assert_allclose(up.data.P[0], [0.0, 3.5])
    np.testing.assert_allclose(up.data.v2[0], [1.0, 0.99])
    assert sorted(down.edges.tolist()) == [1, 2]
    np.testing.assert_allclose(down.data.v2[0, 0], 0.99)
    assert sorted(down.nodes.tolist()) == [1, 2, 3]


def test_no_split_without_inner_meter():
    top = validate_topology([(0, 1, 1), (1, 2, 1), (1, 3, 1)])
    data = _dataset(top, [[0, 0, 1.0, 1.0]])
    assert len(split_at_metered(top, data)) == 1


def test_dataset_validation():
    with pytest.raises(DimensionMismatch):
        MeterDataset(np.zeros((2, 3)), np.zeros((2, 4)), np.ones((2, 2)), [0, 2])
    with pytest.raises(DimensionMismatch):
        MeterDataset(np.zeros((2, 3)), np.zeros((2, 3)), np.ones((2, 2)), [1, 2])
    with pytest.raises(ValueError):
        MeterDataset(np.zeros((1, 3)), np.zeros((1, 3)), np.array([[1.0, -1.0]]), [0, 2])
