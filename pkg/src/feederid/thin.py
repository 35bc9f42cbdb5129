"""Representative subset selection by greedy facility-location maximization."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateInput


@dataclass
class SimilarityGraph:
    """K nearest neighbors (self excluded) of every candidate and their similarity.

    Similarity is ``d_max - distance`` with ``d_max`` the largest pairwise
    distance, so it is non-negative and a point's similarity to itself is
    ``d_max``, the maximum.
    """

    neighbors: np.ndarray  # m x K, ascending distance
    distances: np.ndarray  # m x K
    d_max: float

    @property
    def weights(self) -> np.ndarray:
        return np.maximum(self.d_max - self.distances, 0.0)

    @property
    def m(self) -> int:
        return self.neighbors.shape[0]

    def matrix(self) -> sp.csr_matrix:
        """Sparse ``m x m`` similarity, row h holding ``w(h, h')``, diagonal included."""
        m, K = self.neighbors.shape
        rows = np.repeat(np.arange(m), K + 1)
        cols = np.column_stack([np.arange(m), self.neighbors]).ravel()
        vals = np.column_stack([np.full(m, self.d_max), self.weights]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def knn_graph(C, K: int, block: int = 1024) -> SimilarityGraph:
    """Exact brute-force Euclidean K-nearest-neighbor graph over the rows of ``C``.

    Distances are screened with the expanded-square formula, then the best
    ``K + 8`` per row are re-ranked on directly computed norms. Ties in the
    re-ranked distances go to the lower row index, so the graph is
    deterministic.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    m = len(C)
    if not 1 <= K < m:
        raise ValueError("need 1 <= K < number of rows")
    sq = np.einsum("ij,ij->i", C, C)
    kk = min(m - 1, K + 8)
    nbrs = np.empty((m, K), dtype=int)
    dists = np.empty((m, K))
    d2_max = 0.0
    for lo in range(0, m, block):
        Q = C[lo:lo + block]
        b = len(Q)
        d2 = Q @ C.T
        d2 *= -2.0
        d2 += sq[None, :]
        d2 += sq[lo:lo + b, None]
        np.maximum(d2, 0.0, out=d2)
        d2_max = max(d2_max, float(d2.max()))
        d2[np.arange(b), np.arange(lo, lo + b)] = np.inf
        cand = np.sort(np.argpartition(d2, kk - 1, axis=1)[:, :kk], axis=1)
        diff = C[cand] - Q[:, None, :]
        exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.argsort(exact, axis=1, kind="stable")[:, :K]
        nbrs[lo:lo + b] = np.take_along_axis(cand, order, axis=1)
        dists[lo:lo + b] = np.take_along_axis(exact, order, axis=1)
    if d2_max == 0.0:
        raise DegenerateInput("all candidate rows are identical")
    return SimilarityGraph(nbrs, dists, float(np.sqrt(d2_max)))


@dataclass
class Selection:
    indices: np.ndarray  # in selection order
    gains: np.ndarray  # marginal gain of each pick
    objective: float


def coverage(W: sp.csr_matrix, chosen) -> float:
    """Facility-location value ``sum_h max_{c in chosen} W[h, c]`` (0 for an empty set)."""
    chosen = list(chosen)
    if not chosen:
        return 0.0
    sub = W[:, chosen].toarray()
    return float(np.maximum(sub.max(axis=1), 0.0).sum())


def facility_location_select(graph: SimilarityGraph, m_prime: int) -> Selection:
    """Greedy (lazy) maximization of facility-location coverage with ``m_prime`` picks.

    Equivalent to the naive greedy that adds the largest marginal gain at
    every step, ties going to the lowest index.
    """
    m = graph.m
    if not 0 <= m_prime <= m:
        raise ValueError("m_prime must lie in [0, m]")
    W = graph.matrix().tocsc()
    cur = np.zeros(m)

    def gain(c):
        a, b = W.indptr[c], W.indptr[c + 1]
        rows, vals = W.indices[a:b], W.data[a:b]
        # exactly rounded, so ties do not depend on storage order
        return math.fsum(np.maximum(vals - cur[rows], 0.0))

    heap = [(-gain(c), c) for c in range(m)]
    heapq.heapify(heap)
    picked, gains = [], []
    while len(picked) < m_prime:
        _, c = heapq.heappop(heap)
        g = gain(c)
        if heap and (-g, c) > heap[0]:
            heapq.heappush(heap, (-g, c))
            continue
        picked.append(c)
        gains.append(g)
        a, b = W.indptr[c], W.indptr[c + 1]
        rows = W.indices[a:b]
        np.maximum.at(cur, rows, W.data[a:b])
    return Selection(np.array(picked, dtype=int), np.array(gains), float(cur.sum()))
