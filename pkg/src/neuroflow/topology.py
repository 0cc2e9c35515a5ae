"""Sensor-graph topology and the discrete gradient/divergence operators.

A topology is an immutable set of 2-D node locations plus a list of
canonically oriented edges (tail id < head id).  The oriented incidence
matrix maps edge signals to node signals (divergence); its transpose maps
node signals to edge signals (gradient).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._util import read_json, write_json


class TopologyError(ValueError):
    """Malformed, duplicated, or disconnected graph input."""


def _connected_components(n_nodes: int, tails: np.ndarray, heads: np.ndarray):
    """Returns the list of components, each a sorted list of node ids."""
    adjacency = [[] for _ in range(n_nodes)]
    for t, h in zip(tails, heads):
        adjacency[t].append(h)
        adjacency[h].append(t)
    seen = np.zeros(n_nodes, dtype=bool)
    components = []
    for start in range(n_nodes):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in adjacency[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        components.append(sorted(comp))
    return components


@dataclass(frozen=True)
class GraphTopology:
    """Immutable sensor graph with canonical edge orientation (tail < head)."""

    locations: np.ndarray  # (N, 2) float64
    tails: np.ndarray      # (E,) int64
    heads: np.ndarray      # (E,) int64

    def __post_init__(self):
        loc = np.array(self.locations, dtype=np.float64)
        tails = np.array(self.tails, dtype=np.int64).ravel()
        heads = np.array(self.heads, dtype=np.int64).ravel()
        if loc.ndim != 2 or loc.shape[1] != 2:
            raise TopologyError(f"locations must be (N, 2), got {loc.shape}")
        if not np.all(np.isfinite(loc)):
            raise TopologyError("non-finite node coordinates")
        n = loc.shape[0]
        if n < 1:
            raise TopologyError("at least one node required")
        if tails.shape != heads.shape:
            raise TopologyError("tails and heads must have equal length")
        if tails.size:
            if tails.min() < 0 or heads.max() >= n or tails.max() >= n or heads.min() < 0:
                raise TopologyError("edge endpoint outside 0..N-1")
            if np.any(tails == heads):
                bad = int(np.flatnonzero(tails == heads)[0])
                raise TopologyError(f"self-loop at edge {bad}")
            if np.any(tails >= heads):
                bad = int(np.flatnonzero(tails >= heads)[0])
                raise TopologyError(
                    f"edge {bad} is ({tails[bad]}, {heads[bad]}); "
                    "canonical orientation requires tail < head"
                )
            keys = tails * n + heads
            if np.unique(keys).size != keys.size:
                raise TopologyError("duplicate edges")
        components = _connected_components(n, tails, heads)
        if len(components) > 1:
            raise TopologyError(
                f"graph is disconnected into {len(components)} components: "
                + "; ".join(str(c) for c in components)
            )
        loc.setflags(write=False)
        tails.setflags(write=False)
        heads.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)

    @property
    def n_nodes(self) -> int:
        return self.locations.shape[0]

    @property
    def n_edges(self) -> int:
        return self.tails.shape[0]

    def edge_list(self):
        return list(zip(self.tails.tolist(), self.heads.tolist()))

    def degrees(self) -> np.ndarray:
        return np.bincount(self.tails, minlength=self.n_nodes) + np.bincount(
            self.heads, minlength=self.n_nodes
        )


def topology_from_edges(locations, edges) -> GraphTopology:
    """Build a topology from an explicit (tail, head) edge list.

    Edges are canonicalized (reoriented tail < head, deduplicated) and
    sorted lexicographically, so the result does not depend on input order.
    """
    pairs = {(min(a, b), max(a, b)) for a, b in edges}
    pairs = sorted(pairs)
    tails = np.array([p[0] for p in pairs], dtype=np.int64)
    heads = np.array([p[1] for p in pairs], dtype=np.int64)
    return GraphTopology(np.asarray(locations, dtype=np.float64), tails, heads)


def build_knn_graph(locations, k: int) -> GraphTopology:
    """Link every node to its k nearest neighbors (Euclidean), union-symmetrized.

    Distance ties are broken toward the smaller node id.  Duplicate
    coordinates are rejected because their neighbor ranking is undefined.
    """
    loc = np.asarray(locations, dtype=np.float64)
    if loc.ndim != 2 or loc.shape[1] != 2:
        raise TopologyError(f"locations must be (N, 2), got {loc.shape}")
    n = loc.shape[0]
    if n < 2:
        raise TopologyError("k-NN construction needs at least 2 nodes")
    if k < 1:
        raise TopologyError("k must be >= 1")
    uniq = np.unique(loc, axis=0)
    if uniq.shape[0] != n:
        raise TopologyError("duplicate coordinates; neighbor ties unresolvable")

    diff = loc[:, None, :] - loc[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    ids = np.arange(n)
    pairs = set()
    kk = min(k, n - 1)
    for i in range(n):
        order = np.lexsort((ids, dist[i]))  # ties resolved by smaller id
        neighbors = [j for j in order if j != i][:kk]
        for j in neighbors:
            pairs.add((min(i, j), max(i, j)))
    pairs = sorted(pairs)
    tails = np.array([p[0] for p in pairs], dtype=np.int64)
    heads = np.array([p[1] for p in pairs], dtype=np.int64)

    components = _connected_components(n, tails, heads)
    if len(components) > 1:
        raise TopologyError(
            f"k-NN graph with k={k} is disconnected into components: "
            + "; ".join(str(c) for c in components)
        )
    return GraphTopology(loc, tails, heads)


def grid_locations(rows: int, cols: int, pitch: float = 1.0) -> np.ndarray:
    """Regular rows x cols array of sensor positions, row-major node ids."""
    ys, xs = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64) * pitch


def grid_graph(rows: int, cols: int, diagonals: bool = True, pitch: float = 1.0) -> GraphTopology:
    """Regular grid linked to its immediate (and optionally diagonal) neighbors.

    This is the 8-neighborhood pattern of a dense rectangular sensor array;
    boundary nodes keep only their in-array neighbors.
    """
    loc = grid_locations(rows, cols, pitch)
    steps = [(0, 1), (1, 0)]
    if diagonals:
        steps += [(1, 1), (1, -1)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in steps:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    edges.append((r * cols + c, rr * cols + cc))
    return topology_from_edges(loc, edges)


def incidence(topology: GraphTopology) -> sp.csc_matrix:
    """Oriented node-edge incidence matrix, one column per edge.

    Column e holds -1 at tail(e) and +1 at head(e); column sums are zero.
    Stored sparsely (two nonzeros per column).
    """
    e = topology.n_edges
    indices = np.empty(2 * e, dtype=np.int64)
    indices[0::2] = topology.tails
    indices[1::2] = topology.heads
    data = np.empty(2 * e, dtype=np.float64)
    data[0::2] = -1.0
    data[1::2] = 1.0
    indptr = np.arange(0, 2 * e + 1, 2, dtype=np.int64)
    return sp.csc_matrix((data, indices, indptr), shape=(topology.n_nodes, e))


def node_laplacian(topology: GraphTopology) -> np.ndarray:
    """Dense graph Laplacian (incidence times its transpose)."""
    n = topology.n_nodes
    lap = np.zeros((n, n), dtype=np.float64)
    deg = topology.degrees().astype(np.float64)
    np.fill_diagonal(lap, deg)
    lap[topology.tails, topology.heads] -= 1.0
    lap[topology.heads, topology.tails] -= 1.0
    return lap


def gradient(topology: GraphTopology, node_signal: np.ndarray) -> np.ndarray:
    """Edge-wise differences: entry e is s[head(e)] - s[tail(e)]."""
    s = np.asarray(node_signal, dtype=np.float64)
    if s.shape != (topology.n_nodes,):
        raise ValueError(
            f"node signal has shape {s.shape}, expected ({topology.n_nodes},)"
        )
    return s[topology.heads] - s[topology.tails]


def divergence(topology: GraphTopology, edge_signal: np.ndarray) -> np.ndarray:
    """Net inflow minus outflow per node: entry n is sum_e B[n,e] f[e]."""
    f = np.asarray(edge_signal, dtype=np.float64)
    if f.shape != (topology.n_edges,):
        raise ValueError(
            f"edge signal has shape {f.shape}, expected ({topology.n_edges},)"
        )
    n = topology.n_nodes
    return np.bincount(topology.heads, weights=f, minlength=n) - np.bincount(
        topology.tails, weights=f, minlength=n
    )


def topology_to_dict(topology: GraphTopology) -> dict:
    return {
        "nodes": [
            {"id": i, "x": float(x), "y": float(y)}
            for i, (x, y) in enumerate(topology.locations)
        ],
        "edges": [
            {"tail": int(t), "head": int(h)}
            for t, h in zip(topology.tails, topology.heads)
        ],
    }


def topology_from_dict(obj: dict, knn: int | None = None) -> GraphTopology:
    """Parse the topology JSON schema; build edges via k-NN when absent.

    Edge order in the file is preserved (model files index edges by it).
    """
    nodes = obj.get("nodes")
    if not nodes:
        raise TopologyError("topology JSON has no nodes")
    ids = [int(n["id"]) for n in nodes]
    if sorted(ids) != list(range(len(ids))):
        raise TopologyError("node ids must be exactly 0..N-1")
    loc = np.zeros((len(ids), 2), dtype=np.float64)
    for n in nodes:
        loc[int(n["id"])] = (float(n["x"]), float(n["y"]))
    edges = obj.get("edges")
    if edges:
        tails = np.array([int(e["tail"]) for e in edges], dtype=np.int64)
        heads = np.array([int(e["head"]) for e in edges], dtype=np.int64)
        return GraphTopology(loc, tails, heads)
    if knn is None:
        raise TopologyError("topology JSON has no edges and no k was given")
    return build_knn_graph(loc, knn)


def save_topology(topology: GraphTopology, path) -> None:
    write_json(path, topology_to_dict(topology))


def load_topology(path, knn: int | None = None) -> GraphTopology:
    return topology_from_dict(read_json(path), knn=knn)
