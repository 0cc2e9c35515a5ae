"""Stimulation-session data: blocks of trials of node time series.

On disk a session is a directory with `topology.json`, one headerless CSV
per block (rows = samples, columns = channels in node-id order), a
`manifest.json` with trial boundaries and stimulation metadata, and
optionally `ground_truth_model.json` for synthetic sessions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError

from ._util import read_csv_matrix, read_json, write_csv_matrix, write_json
from .model import DiffusionModel, load_model, save_model
from .topology import GraphTopology, load_topology, save_topology


class SessionError(ValueError):
    """Inconsistent session structure or files."""


@dataclass(frozen=True)
class Trial:
    """One stimulation incident: a [start, stop) row range of its block."""

    start: int
    stop: int
    stim_samples: tuple[int, ...]  # offsets from `start`; first laser first

    def __post_init__(self):
        if not 0 <= self.start < self.stop:
            raise SessionError(f"bad trial range [{self.start}, {self.stop})")
        if not self.stim_samples:
            raise SessionError("trial has no stimulation sample")
        for s in self.stim_samples:
            if not 0 <= s < self.stop - self.start:
                raise SessionError(f"stimulation offset {s} outside trial")
        if list(self.stim_samples) != sorted(self.stim_samples):
            raise SessionError("stimulation offsets must be ascending")


@dataclass
class Block:
    data: np.ndarray  # (T, N)
    trials: list[Trial]


@dataclass
class SessionDataset:
    topology: GraphTopology
    blocks: list[Block]
    sampling_rate_hz: float
    stim_node: int
    stim_location: np.ndarray  # (2,)
    laser_count: int = 1
    inter_laser_delay_ms: float | None = None
    second_stim_node: int | None = None
    ground_truth: DiffusionModel | None = None

    def __post_init__(self):
        n = self.topology.n_nodes
        if self.sampling_rate_hz <= 0:
            raise SessionError("sampling rate must be positive")
        if not 0 <= self.stim_node < n:
            raise SessionError(f"stimulation node {self.stim_node} outside 0..{n - 1}")
        self.stim_location = np.asarray(self.stim_location, dtype=np.float64).ravel()
        if self.stim_location.shape != (2,):
            raise SessionError("stimulation location must be 2-D")
        if not _inside_hull(self.topology.locations, self.stim_location):
            raise SessionError("stimulation location outside the sensor array hull")
        if self.laser_count not in (1, 2):
            raise SessionError("laser_count must be 1 or 2")
        if self.laser_count == 2 and self.inter_laser_delay_ms is None:
            raise SessionError("two lasers require inter_laser_delay_ms")
        for b, block in enumerate(self.blocks):
            data = np.asarray(block.data, dtype=np.float64)
            if data.ndim != 2 or data.shape[1] != n:
                raise SessionError(
                    f"block {b} data has shape {data.shape}, expected (T, {n})"
                )
            block.data = data
            prev_stop = 0
            for trial in block.trials:
                if trial.start < prev_stop:
                    raise SessionError(f"block {b} trials overlap at row {trial.start}")
                if trial.stop > data.shape[0]:
                    raise SessionError(f"block {b} trial exceeds block length")
                prev_stop = trial.stop

    @property
    def n_trials(self) -> int:
        return sum(len(b.trials) for b in self.blocks)

    def ms_to_samples(self, ms: float) -> int:
        return int(round(ms * self.sampling_rate_hz / 1000.0))

    def trial_segment(self, block_idx: int, trial_idx: int) -> np.ndarray:
        block = self.blocks[block_idx]
        trial = block.trials[trial_idx]
        return block.data[trial.start:trial.stop]


def _inside_hull(points: np.ndarray, x: np.ndarray, tol: float = 1e-9) -> bool:
    """Point-in-convex-hull test; degenerate point sets fall back to a bbox check."""
    try:
        tri = Delaunay(points)
        return bool(tri.find_simplex(x) >= 0)
    except (QhullError, ValueError):
        lo = points.min(axis=0) - tol
        hi = points.max(axis=0) + tol
        return bool(np.all(x >= lo) and np.all(x <= hi))


def write_session(session: SessionDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_topology(session.topology, out / "topology.json")
    blocks_meta = []
    for b, block in enumerate(session.blocks):
        csv_name = f"block_{b:02d}.csv"
        write_csv_matrix(out / csv_name, block.data)
        blocks_meta.append(
            {
                "csv": csv_name,
                "trials": [
                    {
                        "start": t.start,
                        "stop": t.stop,
                        "stim_samples": list(t.stim_samples),
                    }
                    for t in block.trials
                ],
            }
        )
    manifest = {
        "sampling_rate_hz": session.sampling_rate_hz,
        "stim_node": session.stim_node,
        "stim_location": [float(v) for v in session.stim_location],
        "laser_count": session.laser_count,
        "inter_laser_delay_ms": session.inter_laser_delay_ms,
        "second_stim_node": session.second_stim_node,
        "blocks": blocks_meta,
    }
    write_json(out / "manifest.json", manifest)
    if session.ground_truth is not None:
        save_model(session.ground_truth, out / "ground_truth_model.json")


def read_session(session_dir) -> SessionDataset:
    root = Path(session_dir)
    if not (root / "manifest.json").exists():
        raise SessionError(f"{root} has no manifest.json")
    manifest = read_json(root / "manifest.json")
    topology = load_topology(root / "topology.json")
    blocks = []
    for meta in manifest["blocks"]:
        data = read_csv_matrix(root / meta["csv"])
        trials = [
            Trial(int(t["start"]), int(t["stop"]), tuple(int(s) for s in t["stim_samples"]))
            for t in meta["trials"]
        ]
        blocks.append(Block(data, trials))
    ground_truth = None
    gt_path = root / "ground_truth_model.json"
    if gt_path.exists():
        ground_truth = load_model(gt_path)
    return SessionDataset(
        topology=topology,
        blocks=blocks,
        sampling_rate_hz=float(manifest["sampling_rate_hz"]),
        stim_node=int(manifest["stim_node"]),
        stim_location=np.asarray(manifest["stim_location"], dtype=np.float64),
        laser_count=int(manifest.get("laser_count", 1)),
        inter_laser_delay_ms=manifest.get("inter_laser_delay_ms"),
        second_stim_node=manifest.get("second_stim_node"),
        ground_truth=ground_truth,
    )


def scale_session(session: SessionDataset, factor: float) -> SessionDataset:
    """Same session with all recorded signals multiplied by `factor`."""
    blocks = [Block(b.data * factor, list(b.trials)) for b in session.blocks]
    return SessionDataset(
        topology=session.topology,
        blocks=blocks,
        sampling_rate_hz=session.sampling_rate_hz,
        stim_node=session.stim_node,
        stim_location=session.stim_location.copy(),
        laser_count=session.laser_count,
        inter_laser_delay_ms=session.inter_laser_delay_ms,
        second_stim_node=session.second_stim_node,
        ground_truth=session.ground_truth,
    )
