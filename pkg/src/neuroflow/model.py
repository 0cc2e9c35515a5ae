"""Lagged graph diffusion model: prediction, edge flows, forward simulation.

The model predicts each node's signal from its own weighted past (memory
diagonals, one vector per lag) minus the divergence of a lag-weighted
gradient flow (conductivity diagonals, one vector per lag):

    s[t] = sum_k  m_k * s[t-k]  -  div( w_k * grad(s[t-k]) )

The flow at time t is f[t] = sum_k w_k * grad(s[t-k]).  Note the sign
convention: with edges oriented tail -> head, a positive f entry means
transport from head to tail under the recursion above, so the physically
intuitive flow along the drawn arrow is phi = -f.  Plotting and the
directed-reachability analysis use phi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._util import read_json, rng_from, write_json
from .topology import GraphTopology, divergence, gradient


class SimulationError(RuntimeError):
    """Forward simulation produced non-finite values (unstable model)."""


@dataclass(frozen=True)
class DiffusionModel:
    """Per-lag node memory and edge conductivity diagonals.

    node_memory:  (K, N), entry [k-1, n] weights s_n[t-k]
    edge_weights: (K, E), entry [k-1, e] is the lag-k conductivity of edge e
    """

    node_memory: np.ndarray
    edge_weights: np.ndarray

    def __post_init__(self):
        m = np.array(self.node_memory, dtype=np.float64)
        w = np.array(self.edge_weights, dtype=np.float64)
        if m.ndim != 2 or w.ndim != 2:
            raise ValueError("node_memory and edge_weights must be 2-D (lags first)")
        if m.shape[0] != w.shape[0]:
            raise ValueError(
                f"lag count mismatch: {m.shape[0]} memory vs {w.shape[0]} edge lags"
            )
        if m.shape[0] < 1:
            raise ValueError("model order must be >= 1")
        m.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "node_memory", m)
        object.__setattr__(self, "edge_weights", w)

    @property
    def order(self) -> int:
        return self.node_memory.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.node_memory.shape[1]

    @property
    def n_edges(self) -> int:
        return self.edge_weights.shape[1]


@dataclass(frozen=True)
class EdgeFlowSeries:
    """Edge flows evaluated at selected time indices of a segment."""

    indices: np.ndarray        # (T,) int64, indices into the source segment
    flows: np.ndarray          # (T, E)
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).ravel()
        flows = np.array(self.flows, dtype=np.float64)
        if flows.ndim != 2 or flows.shape[0] != idx.size:
            raise ValueError("flows must be (len(indices), E)")
        if self.labels and len(self.labels) != idx.size:
            raise ValueError("one label per index required")
        idx.setflags(write=False)
        flows.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "flows", flows)


def _check_dims(model: DiffusionModel, topology: GraphTopology) -> None:
    if model.n_nodes != topology.n_nodes or model.n_edges != topology.n_edges:
        raise ValueError(
            f"model is ({model.n_nodes} nodes, {model.n_edges} edges) but "
            f"topology is ({topology.n_nodes}, {topology.n_edges})"
        )


def _check_history(model: DiffusionModel, history: np.ndarray) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    if h.shape != (model.order, model.n_nodes):
        raise ValueError(
            f"history must be (K, N) = ({model.order}, {model.n_nodes}), got {h.shape}"
        )
    return h


def predict_one_step(model: DiffusionModel, topology: GraphTopology, history) -> np.ndarray:
    """One-step prediction from the K most recent signals (most recent first)."""
    _check_dims(model, topology)
    h = _check_history(model, history)
    grads = h[:, topology.heads] - h[:, topology.tails]          # (K, E)
    flow = (model.edge_weights * grads).sum(axis=0)              # (E,)
    pred = (model.node_memory * h).sum(axis=0)
    return pred - divergence(topology, flow)


def compute_flow(model: DiffusionModel, topology: GraphTopology, history) -> np.ndarray:
    """Edge flow induced by the lagged history: f = sum_k w_k * grad(s[t-k])."""
    _check_dims(model, topology)
    h = _check_history(model, history)
    grads = h[:, topology.heads] - h[:, topology.tails]
    return (model.edge_weights * grads).sum(axis=0)


def physical_flow(flow: np.ndarray) -> np.ndarray:
    """Transport along the drawn tail -> head arrows (sign-flipped flow)."""
    return -np.asarray(flow, dtype=np.float64)


def flow_series(model: DiffusionModel, topology: GraphTopology, series,
                valid_indices, labels: tuple[str, ...] = ()) -> EdgeFlowSeries:
    """Flows at each requested index of a (T, N) segment.

    Every index must have K predecessors inside the segment.
    """
    _check_dims(model, topology)
    s = np.asarray(series, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != topology.n_nodes:
        raise ValueError(f"segment must be (T, {topology.n_nodes}), got {s.shape}")
    idx = np.asarray(valid_indices, dtype=np.int64).ravel()
    if idx.size == 0:
        return EdgeFlowSeries(idx, np.zeros((0, topology.n_edges)), labels)
    if idx.min() < model.order or idx.max() >= s.shape[0]:
        bad = idx[(idx < model.order) | (idx >= s.shape[0])][0]
        raise ValueError(
            f"index {bad} lacks {model.order} in-segment predecessors "
            f"(segment length {s.shape[0]})"
        )
    grads = s[:, topology.heads] - s[:, topology.tails]          # (T, E)
    flows = np.zeros((idx.size, topology.n_edges))
    for k in range(model.order):
        flows += model.edge_weights[k] * grads[idx - (k + 1)]
    return EdgeFlowSeries(idx, flows, labels)


def simulate(model: DiffusionModel, topology: GraphTopology, initial_history,
             inputs, steps: int, noise_std: float = 0.0, seed=0) -> np.ndarray:
    """Run the recursion forward for `steps` steps.

    inputs: per-step exogenous node signal, (steps, N) or None for zero.
    Additive Gaussian noise with the given std is drawn once up front from
    `seed`, so results are deterministic and independent of the kernel
    backend's summation order up to rounding.
    """
    _check_dims(model, topology)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    n = topology.n_nodes
    if initial_history is None:
        hist = np.zeros((model.order, n))
    else:
        hist = _check_history(model, initial_history).copy()
    if inputs is None:
        drive = np.zeros((steps, n))
    else:
        drive = np.array(inputs, dtype=np.float64)
        if drive.shape != (steps, n):
            raise ValueError(f"inputs must be ({steps}, {n}), got {drive.shape}")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if noise_std > 0:
        drive = drive + noise_std * rng_from(seed).standard_normal((steps, n))
    out = np.zeros((steps, n))
    kernels.simulate_steps(
        np.ascontiguousarray(model.node_memory),
        np.ascontiguousarray(model.edge_weights),
        topology.tails, topology.heads,
        np.ascontiguousarray(hist), np.ascontiguousarray(drive), out,
    )
    if not np.all(np.isfinite(out)):
        first_bad = int(np.flatnonzero(~np.isfinite(out).all(axis=1))[0])
        raise SimulationError(
            f"non-finite signal at step {first_bad}: model is unstable "
            "(check stability_radius < 1)"
        )
    return out


def _dense_transition(model: DiffusionModel, topology: GraphTopology, k: int) -> np.ndarray:
    """Dense lag-k transition matrix diag(m_k) - B W_k B^T."""
    n = topology.n_nodes
    a = np.diag(model.node_memory[k]).astype(np.float64)
    w = model.edge_weights[k]
    t, h = topology.tails, topology.heads
    np.subtract.at(a, (t, t), w)
    np.subtract.at(a, (h, h), w)
    np.add.at(a, (t, h), w)
    np.add.at(a, (h, t), w)
    return a


def stability_radius(model: DiffusionModel, topology: GraphTopology) -> float:
    """Spectral radius of the stacked-lag companion form; < 1 means stable."""
    _check_dims(model, topology)
    n, kk = topology.n_nodes, model.order
    companion = np.zeros((n * kk, n * kk))
    for k in range(kk):
        companion[:n, k * n:(k + 1) * n] = _dense_transition(model, topology, k)
    if kk > 1:
        idx = np.arange(n * (kk - 1))
        companion[n + idx, idx] = 1.0
    eigvals = np.linalg.eigvals(companion)
    return float(np.abs(eigvals).max()) if eigvals.size else 0.0


def model_to_dict(model: DiffusionModel) -> dict:
    return {
        "K": model.order,
        "node_memory": [row.tolist() for row in model.node_memory],
        "edge_weights": [row.tolist() for row in model.edge_weights],
    }


def model_from_dict(obj: dict) -> DiffusionModel:
    k = int(obj["K"])
    m = np.asarray(obj["node_memory"], dtype=np.float64)
    w = np.asarray(obj["edge_weights"], dtype=np.float64)
    if m.shape[0] != k or w.shape[0] != k:
        raise ValueError(f"model JSON declares K={k} but has {m.shape[0]} lag vectors")
    return DiffusionModel(m, w)


def save_model(model: DiffusionModel, path) -> None:
    write_json(path, model_to_dict(model))


def load_model(path) -> DiffusionModel:
    return model_from_dict(read_json(path))
