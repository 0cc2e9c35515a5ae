"""Synthetic stimulation sessions with known ground-truth dynamics.

Sessions mimic the recorded protocol at desk scale: a regular sensor grid,
repeated impulse stimulation at a fixed rate grouped into blocks of
trials, optional second laser after a fixed delay, additive Gaussian
observation-process noise.  Every trial draws its own initial state so
the fitted regression is well conditioned even without noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import derived_seed
from .model import DiffusionModel, simulate, stability_radius
from .session import Block, SessionDataset, Trial
from .topology import GraphTopology, build_knn_graph, grid_locations, node_laplacian

PROTOCOL_RATES_HZ = (5.0, 7.0)
PROTOCOL_DELAYS_MS = (10.0, 30.0, 70.0, 100.0)

_STABILITY_TARGET = 0.95
_MAX_HALVINGS = 100


class SynthError(ValueError):
    """Invalid generator configuration or failed stabilization."""


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 10
    cols: int = 10
    knn: int = 8
    order: int = 5
    stim_nodes: tuple[int, ...] | None = None  # None -> grid center, one laser
    stim_rate_hz: float = 5.0
    trials_per_block: int = 100
    blocks: int = 2
    inter_laser_delay_ms: float = 10.0
    noise_std: float = 0.02
    coupling_scale: float = 0.3
    impulse_amplitude: float | None = None     # None -> 10*noise_std (1.0 if noiseless)
    init_std: float = 1.0
    sampling_rate_hz: float = 1000.0
    seed: int = 0
    strict_protocol: bool = False              # restrict rate/delay to recorded sets

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise SynthError("grid needs at least 2 nodes")
        if self.order < 1:
            raise SynthError("order must be >= 1")
        if self.coupling_scale < 0:
            raise SynthError("coupling_scale must be >= 0")
        if self.noise_std < 0 or self.init_std < 0:
            raise SynthError("noise_std and init_std must be >= 0")
        if self.trials_per_block < 1 or self.blocks < 1:
            raise SynthError("need at least one trial and one block")
        if self.stim_rate_hz <= 0 or self.sampling_rate_hz <= 0:
            raise SynthError("rates must be positive")
        if self.stim_nodes is not None and len(self.stim_nodes) not in (1, 2):
            raise SynthError("one or two stimulation nodes supported")
        if self.strict_protocol:
            if self.stim_rate_hz not in PROTOCOL_RATES_HZ:
                raise SynthError(
                    f"strict protocol allows rates {PROTOCOL_RATES_HZ}, "
                    f"got {self.stim_rate_hz}"
                )
            if (self.stim_nodes is not None and len(self.stim_nodes) == 2
                    and self.inter_laser_delay_ms not in PROTOCOL_DELAYS_MS):
                raise SynthError(
                    f"strict protocol allows delays {PROTOCOL_DELAYS_MS}, "
                    f"got {self.inter_laser_delay_ms}"
                )

    @property
    def trial_samples(self) -> int:
        return int(round(self.sampling_rate_hz / self.stim_rate_hz))


def random_stable_model(topology: GraphTopology, order: int, coupling_scale: float,
                        seed) -> DiffusionModel:
    """Random diffusive model with spectral radius below 0.95.

    Node memories are positive and decay with lag, summing to < 1 per node.
    Edge weights are positive with one dominant random lag per edge (edges
    propagate with different delays) plus a small background on the other
    lags; the overall magnitude is coupling_scale relative to the
    Laplacian's top eigenvalue.  If the companion radius still reaches
    0.95 all parameters are halved, up to 100 times.
    """
    if coupling_scale < 0:
        raise SynthError("coupling_scale must be >= 0")
    rng = np.random.default_rng(seed)
    n, e, k = topology.n_nodes, topology.n_edges, order
    raw = rng.uniform(0.5, 1.5, (k, n)) * (0.65 ** np.arange(k))[:, None]
    memory = raw / raw.sum(axis=0) * rng.uniform(0.55, 0.85, n)
    if e and coupling_scale > 0:
        lam_max = float(np.linalg.eigvalsh(node_laplacian(topology))[-1])
        base = coupling_scale / lam_max
        weights = base * rng.uniform(0.05, 0.15, (k, e))
        dominant = rng.integers(0, k, e)
        weights[dominant, np.arange(e)] = base * rng.uniform(0.7, 1.3, e)
    else:
        weights = np.zeros((k, e))
    model = DiffusionModel(memory, weights)
    for _ in range(_MAX_HALVINGS):
        if stability_radius(model, topology) < _STABILITY_TARGET:
            return model
        memory = memory * 0.5
        weights = weights * 0.5
        model = DiffusionModel(memory, weights)
    raise SynthError(
        f"failed to stabilize model below radius {_STABILITY_TARGET} "
        f"after {_MAX_HALVINGS} halvings"
    )


def _grid_center_node(rows: int, cols: int) -> int:
    return (rows // 2) * cols + cols // 2


def generate_session(config: SynthConfig) -> SessionDataset:
    """Simulate a full session; the ground-truth model rides along.

    All randomness derives from config.seed via stable per-purpose
    sub-seeds, so identical configs give identical datasets and trials are
    independent of simulation order.
    """
    locations = grid_locations(config.rows, config.cols)
    topology = build_knn_graph(locations, config.knn)
    model = random_stable_model(
        topology, config.order, config.coupling_scale,
        derived_seed(config.seed, "model"),
    )
    stim_nodes = config.stim_nodes
    if stim_nodes is None:
        stim_nodes = (_grid_center_node(config.rows, config.cols),)
    for node in stim_nodes:
        if not 0 <= node < topology.n_nodes:
            raise SynthError(f"stimulation node {node} outside 0..{topology.n_nodes - 1}")
    laser_count = len(stim_nodes)
    trial_len = config.trial_samples
    delay = int(round(config.inter_laser_delay_ms * config.sampling_rate_hz / 1000.0))
    if laser_count == 2 and delay >= trial_len:
        raise SynthError("inter-laser delay exceeds the trial window")
    amplitude = config.impulse_amplitude
    if amplitude is None:
        amplitude = 10.0 * config.noise_std if config.noise_std > 0 else 1.0

    stim_samples = (0,) if laser_count == 1 else (0, delay)
    inputs = np.zeros((trial_len, topology.n_nodes))
    inputs[0, stim_nodes[0]] += amplitude
    if laser_count == 2:
        inputs[delay, stim_nodes[1]] += amplitude

    blocks = []
    for b in range(config.blocks):
        rows_data = np.empty((config.trials_per_block * trial_len, topology.n_nodes))
        trials = []
        for i in range(config.trials_per_block):
            rng = np.random.default_rng(derived_seed(config.seed, "trial", b, i))
            history = config.init_std * rng.standard_normal(
                (config.order, topology.n_nodes)
            )
            data = simulate(
                model, topology, history, inputs, trial_len,
                noise_std=config.noise_std, seed=rng,
            )
            start = i * trial_len
            rows_data[start:start + trial_len] = data
            trials.append(Trial(start, start + trial_len, stim_samples))
        blocks.append(Block(rows_data, trials))

    return SessionDataset(
        topology=topology,
        blocks=blocks,
        sampling_rate_hz=config.sampling_rate_hz,
        stim_node=stim_nodes[0],
        stim_location=locations[stim_nodes[0]],
        laser_count=laser_count,
        inter_laser_delay_ms=config.inter_laser_delay_ms if laser_count == 2 else None,
        second_stim_node=stim_nodes[1] if laser_count == 2 else None,
        ground_truth=model,
    )


def config_from_dict(obj: dict) -> SynthConfig:
    """SynthConfig from a JSON-style dict; unknown keys are rejected."""
    allowed = set(SynthConfig.__dataclass_fields__)
    unknown = set(obj) - allowed
    if unknown:
        raise SynthError(f"unknown config keys: {sorted(unknown)}")
    if "stim_nodes" in obj and obj["stim_nodes"] is not None:
        obj = dict(obj)
        obj["stim_nodes"] = tuple(int(v) for v in obj["stim_nodes"])
    return SynthConfig(**obj)


def config_to_dict(config: SynthConfig) -> dict:
    out = {}
    for name in SynthConfig.__dataclass_fields__:
        value = getattr(config, name)
        if isinstance(value, tuple):
            value = list(value)
        out[name] = value
    return out
