"""Broadcaster localization from a gradient flow.

Three steps: (1) read the flow as a directed weighted adjacency, each
edge carrying its transport magnitude in the direction it actually moves;
(2) score every node by aggregate downstream reachability (ADR), the row
sums of exp(beta*A) - I, a total-communicability centrality; (3) take the
ADR-weighted center of mass of the node locations as the broadcaster
location and compare its distance to the stimulation site against the
array-average distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import physical_flow
from .topology import GraphTopology


class BroadcastError(ValueError):
    """Degenerate inputs (e.g. all-zero reachability)."""


@dataclass(frozen=True)
class DirectedFlowGraph:
    """Nonnegative directed adjacency; at most one direction per node pair."""

    adjacency: np.ndarray  # (N, N)

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise BroadcastError("adjacency must be square")
        if not np.all(np.isfinite(a)):
            raise BroadcastError("non-finite adjacency entries")
        if np.any(a < 0):
            raise BroadcastError("adjacency entries must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise BroadcastError("adjacency diagonal must be zero")
        if np.any((a > 0) & (a.T > 0)):
            raise BroadcastError("each node pair may carry flow one way only")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)


@dataclass(frozen=True)
class BroadcastReport:
    adr: np.ndarray
    location: np.ndarray         # broadcaster center of mass x_b
    stim_location: np.ndarray    # x_s
    broadcaster_distance: float  # d_b = ||x_b - x_s||
    random_distance: float       # d_r = mean_n ||l(n) - x_s||


def flow_to_directed_adjacency(topology: GraphTopology, gradient_flow) -> DirectedFlowGraph:
    """Directed adjacency of transport magnitudes.

    Uses the physical flow (sign-flipped edge signal): positive transport
    tail -> head fills A[tail, head], negative fills A[head, tail].
    Flipping an edge's stored orientation flips its flow sign too, so A is
    orientation-independent.
    """
    f = np.asarray(gradient_flow, dtype=np.float64).ravel()
    if f.shape != (topology.n_edges,):
        raise BroadcastError(
            f"flow has shape {f.shape}, expected ({topology.n_edges},)"
        )
    phi = physical_flow(f)
    n = topology.n_nodes
    a = np.zeros((n, n))
    forward = phi > 0
    backward = phi < 0
    a[topology.tails[forward], topology.heads[forward]] = phi[forward]
    a[topology.heads[backward], topology.tails[backward]] = -phi[backward]
    return DirectedFlowGraph(a)


def adr(graph: DirectedFlowGraph | np.ndarray, beta: float | None = None) -> np.ndarray:
    """Aggregate downstream reachability: row sums of exp(beta*A) - I.

    beta defaults to 1/max(A), so rescaling the flow rescales beta inversely
    and leaves the scores unchanged.  The exponential is evaluated by
    scaling and squaring.
    """
    a = graph.adjacency if isinstance(graph, DirectedFlowGraph) else np.asarray(graph, float)
    if not np.all(np.isfinite(a)):
        raise BroadcastError("non-finite adjacency entries")
    peak = a.max() if a.size else 0.0
    if peak == 0.0:
        return np.zeros(a.shape[0])
    if beta is None:
        beta = 1.0 / peak
    reach = scipy.linalg.expm(beta * a)
    return reach.sum(axis=1) - 1.0


def adr_series_oracle(graph: DirectedFlowGraph | np.ndarray, beta: float | None = None,
                      terms: int = 30) -> np.ndarray:
    """Truncated power-series evaluation of the same score, for verification."""
    a = graph.adjacency if isinstance(graph, DirectedFlowGraph) else np.asarray(graph, float)
    peak = a.max() if a.size else 0.0
    if peak == 0.0:
        return np.zeros(a.shape[0])
    if beta is None:
        beta = 1.0 / peak
    scaled = beta * a
    total = np.zeros_like(scaled)
    term = np.eye(scaled.shape[0])
    for k in range(1, terms + 1):
        term = term @ scaled / k
        total += term
    return total.sum(axis=1)


def broadcaster_location(topology: GraphTopology, adr_vector) -> np.ndarray:
    """ADR-weighted center of mass of the node locations.

    Weights are normalized to sum to one so the result stays inside the
    array regardless of overall flow magnitude.
    """
    scores = np.asarray(adr_vector, dtype=np.float64).ravel()
    if scores.shape != (topology.n_nodes,):
        raise BroadcastError("one score per node required")
    if np.any(scores < 0):
        raise BroadcastError("scores must be nonnegative")
    total = scores.sum()
    if total == 0.0:
        raise BroadcastError("all-zero reachability; broadcaster undefined")
    weights = scores / total
    return weights @ topology.locations


def broadcast_distances(topology: GraphTopology, location, stim_location):
    """(d_b, d_r): broadcaster and array-average distance to the stimulation site."""
    x_b = np.asarray(location, dtype=np.float64).ravel()
    x_s = np.asarray(stim_location, dtype=np.float64).ravel()
    d_b = float(np.linalg.norm(x_b - x_s))
    d_r = float(np.mean(np.linalg.norm(topology.locations - x_s[None, :], axis=1)))
    return d_b, d_r


def broadcast_report(topology: GraphTopology, gradient_flow, stim_location) -> BroadcastReport:
    """Full localization pipeline for one gradient flow."""
    graph = flow_to_directed_adjacency(topology, gradient_flow)
    scores = adr(graph)
    location = broadcaster_location(topology, scores)
    d_b, d_r = broadcast_distances(topology, location, stim_location)
    return BroadcastReport(
        adr=scores,
        location=location,
        stim_location=np.asarray(stim_location, dtype=np.float64).ravel(),
        broadcaster_distance=d_b,
        random_distance=d_r,
    )


def locate_session_broadcaster(session, order: int = 5, at_ms: float = 10.0,
                               cutoff: int | None = None, ridge: float = 0.0,
                               use_demean: bool = True,
                               after_ms: float = 30.0) -> BroadcastReport:
    """Fit a session model, smooth its gradient flow at the given latency,
    and localize the broadcaster against the session's stimulation site.

    cutoff defaults to 14 smoothest gradient modes (fewer on tiny arrays).
    """
    from .estimation import fit_session_model, session_latency_flow
    from .hodge import gradient_mode_basis, hodge_decompose, lowpass_gradient

    topology = session.topology
    model = fit_session_model(
        session, order, ridge=ridge, use_demean=use_demean, after_ms=after_ms
    )
    flow = session_latency_flow(
        session, model, at_ms, use_demean=use_demean, after_ms=after_ms
    )
    basis = gradient_mode_basis(topology)
    if cutoff is None:
        cutoff = min(14, basis.n_modes)
    decomp = hodge_decompose(topology, flow, basis)
    smooth = lowpass_gradient(decomp, basis, cutoff)
    return broadcast_report(topology, smooth, session.stim_location)
