"""Least-squares fitting of diffusion models and flow/no-flow evaluation.

The parameter vector stacks the per-lag node memories first, then the
per-lag edge weights: theta = [m_1 .. m_K, w_1 .. w_K], K*(N+E) unknowns.
Fitting minimizes sum_{t in T_e} ||s_hat[t] - s[t]||^2 over all admitted
target steps (plus an optional ridge term).  The solver works on the
normal equations, which are assembled directly from lagged signal
cross-products instead of materializing the (rows x parameters) design;
`assemble_ls_system` builds the explicit sparse design for verification
and small problems.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import betainc

from .model import DiffusionModel
from .session import SessionDataset
from .topology import GraphTopology, incidence

_BATCH = 2048  # targets per accumulation batch; bounds lag-stack memory


class FitError(ValueError):
    """Invalid fitting configuration or data."""


@dataclass(frozen=True)
class FitConfig:
    """Fitting options.

    targets: optional per-segment index arrays; every index needs `order`
    predecessors inside its segment.  None admits all valid indices.
    """

    order: int
    ridge: float = 0.0
    demean: bool = True
    targets: tuple | None = None

    def __post_init__(self):
        if self.order < 1:
            raise FitError("model order must be >= 1")
        if self.ridge < 0:
            raise FitError("ridge must be >= 0")


@dataclass
class SessionEval:
    """Flow vs no-flow comparison for one session at one model order."""

    order: int
    improvement_pct: float
    rmse_flow: np.ndarray
    rmse_no_flow: np.ndarray
    train_error_flow: float
    train_error_no_flow: float


@dataclass
class EvalReport:
    """Aggregate of SessionEvals across sessions and model orders."""

    orders: list[int]
    rows: list[dict]                   # one per (session, order)
    mean_improvement: dict[int, float]
    t_statistic: dict[int, float]
    p_value: dict[int, float]


def n_parameters(topology: GraphTopology, order: int) -> int:
    return order * (topology.n_nodes + topology.n_edges)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def demean(segments):
    """Subtract each channel's mean over the pooled samples of `segments`.

    Returns (demeaned segments, per-channel means). Callers that split
    train/test should compute means on the fitted windows only and reuse
    them on held-out windows.
    """
    segs = [np.asarray(s, dtype=np.float64) for s in segments]
    if not segs:
        raise FitError("no segments to demean")
    stacked = np.concatenate(segs, axis=0)
    means = stacked.mean(axis=0)
    return [s - means for s in segs], means


def split_train_test(session: SessionDataset, train_fraction: float = 0.8):
    """Per-block leading/trailing trial split; blocks are never mixed.

    Returns (train, test): lists with one array of trial indices per block.
    """
    if not 0 < train_fraction < 1:
        raise FitError("train_fraction must be in (0, 1)")
    train, test = [], []
    for b, block in enumerate(session.blocks):
        n = len(block.trials)
        if n < 5:
            raise FitError(f"block {b} has {n} trials; need at least 5 to split")
        n_train = int(np.floor(train_fraction * n))
        train.append(np.arange(n_train))
        test.append(np.arange(n_train, n))
    return train, test


def stimulus_windows(session: SessionDataset, block_idx: int, trial_indices,
                     after_ms: float = 30.0):
    """Per-trial fit windows: first stimulation to `after_ms` past the last one."""
    block = session.blocks[block_idx]
    after = session.ms_to_samples(after_ms)
    windows = []
    for i in trial_indices:
        tr = block.trials[int(i)]
        w0 = tr.start + tr.stim_samples[0]
        w1 = min(tr.stop, tr.start + tr.stim_samples[-1] + after + 1)
        windows.append(block.data[w0:w1])
    return windows


def _segment_arrays(topology: GraphTopology, segments):
    n = topology.n_nodes
    segs = []
    for j, s in enumerate(segments):
        a = np.asarray(s, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != n:
            raise FitError(f"segment {j} has shape {a.shape}, expected (T, {n})")
        segs.append(a)
    if not segs:
        raise FitError("no segments given")
    return segs


def _target_lists(segments, config: FitConfig):
    k = config.order
    if config.targets is None:
        targets = [np.arange(k, s.shape[0], dtype=np.int64) for s in segments]
    else:
        if len(config.targets) != len(segments):
            raise FitError("one target array per segment required")
        targets = []
        for j, (tgt, s) in enumerate(zip(config.targets, segments)):
            t = np.asarray(tgt, dtype=np.int64).ravel()
            if t.size and (t.min() < k or t.max() >= s.shape[0]):
                raise FitError(
                    f"segment {j}: target without {k} in-segment predecessors"
                )
            targets.append(np.sort(t))
    if sum(t.size for t in targets) == 0:
        raise FitError("empty target set")
    return targets


def _edge_gradients(topology: GraphTopology, segment: np.ndarray) -> np.ndarray:
    return segment[:, topology.heads] - segment[:, topology.tails]


# ---------------------------------------------------------------------------
# system assembly
# ---------------------------------------------------------------------------

def assemble_ls_system(topology: GraphTopology, segments, config: FitConfig):
    """Explicit sparse design matrix and target vector for the fit.

    Rows are grouped by (segment, target step, node); columns follow the
    theta layout.  Quadratic-size route kept for verification and small
    problems; `fit` accumulates the normal equations directly.
    """
    segs = _segment_arrays(topology, segments)
    if config.demean:
        segs, _ = demean(segs)
    targets = _target_lists(segs, config)
    kk = config.order
    n, e = topology.n_nodes, topology.n_edges
    p = kk * (n + e)
    lags = np.arange(1, kk + 1, dtype=np.int64)

    rows_parts, cols_parts, data_parts, y_parts = [], [], [], []
    row0 = 0
    for seg, tgt in zip(segs, targets):
        if tgt.size == 0:
            continue
        b = tgt.size
        idx = tgt[:, None] - lags[None, :]              # (B, K)
        xm = seg[idx]                                   # (B, K, N)
        row_of_node = row0 + np.arange(b)[:, None, None] * n + np.arange(n)[None, None, :]
        rows_parts.append(np.broadcast_to(row_of_node, (b, kk, n)).ravel())
        cols_m = (np.arange(kk)[:, None] * n + np.arange(n)[None, :])
        cols_parts.append(np.broadcast_to(cols_m[None], (b, kk, n)).ravel())
        data_parts.append(xm.ravel())
        if e:
            xw = _edge_gradients(topology, seg)[idx]    # (B, K, E)
            cols_w = kk * n + (np.arange(kk)[:, None] * e + np.arange(e)[None, :])
            cols_w = np.broadcast_to(cols_w[None], (b, kk, e)).ravel()
            base = row0 + np.arange(b)[:, None, None] * n
            rows_tail = np.broadcast_to(base + topology.tails[None, None, :], (b, kk, e)).ravel()
            rows_head = np.broadcast_to(base + topology.heads[None, None, :], (b, kk, e)).ravel()
            rows_parts.extend([rows_tail, rows_head])
            cols_parts.extend([cols_w, cols_w])
            data_parts.extend([xw.ravel(), -xw.ravel()])
        y_parts.append(seg[tgt].ravel())
        row0 += b * n

    rows = np.concatenate(rows_parts)
    cols = np.concatenate(cols_parts)
    data = np.concatenate(data_parts)
    design = sp.coo_matrix((data, (rows, cols)), shape=(row0, p)).tocsr()
    return design, np.concatenate(y_parts)


def normal_equations(topology: GraphTopology, segments, config: FitConfig):
    """Gram matrix and right-hand side of the least-squares problem.

    Equals design.T @ design and design.T @ y from `assemble_ls_system`
    (before ridge), accumulated from lagged cross-products in batches.
    """
    segs = _segment_arrays(topology, segments)
    if config.demean:
        segs, _ = demean(segs)
    targets = _target_lists(segs, config)
    kk = config.order
    n, e = topology.n_nodes, topology.n_edges
    p = kk * (n + e)
    lags = np.arange(1, kk + 1, dtype=np.int64)
    tails, heads = topology.tails, topology.heads

    a_mm = np.zeros((n, kk, kk))
    b_m = np.zeros((kk, n))
    if e:
        c_tail = np.zeros((e, kk, kk))
        c_head = np.zeros((e, kk, kk))
        a_ww = np.zeros((kk * e, kk * e))
        b_w = np.zeros((kk, e))

    for seg, tgt in zip(segs, targets):
        if tgt.size == 0:
            continue
        grads = _edge_gradients(topology, seg) if e else None
        for lo in range(0, tgt.size, _BATCH):
            batch = tgt[lo:lo + _BATCH]
            idx = batch[:, None] - lags[None, :]
            xm = seg[idx]                                # (B, K, N)
            y = seg[batch]
            a_mm += np.matmul(xm.transpose(2, 1, 0), xm.transpose(2, 0, 1))
            b_m += np.einsum("bkn,bn->kn", xm, y)
            if e:
                xw = grads[idx]                          # (B, K, E)
                gy = grads[batch]
                c_tail += np.matmul(
                    xm[:, :, tails].transpose(2, 1, 0), xw.transpose(2, 0, 1)
                )
                c_head += np.matmul(
                    xm[:, :, heads].transpose(2, 1, 0), xw.transpose(2, 0, 1)
                )
                hw = xw.reshape(batch.size, kk * e)
                a_ww += hw.T @ hw
                b_w -= np.einsum("bke,be->ke", xw, gy)

    a = np.zeros((p, p))
    kn = kk * n
    for k in range(kk):
        for l in range(kk):
            np.fill_diagonal(a[k * n:(k + 1) * n, l * n:(l + 1) * n], a_mm[:, k, l])
    if e:
        eidx = np.arange(e)
        for k in range(kk):
            for l in range(kk):
                cols = kn + l * e + eidx
                a[k * n + tails, cols] = c_tail[:, k, l]
                a[k * n + heads, cols] = -c_head[:, k, l]
        a[kn:, :kn] = a[:kn, kn:].T
        btb = (incidence(topology).T @ incidence(topology)).toarray()
        a[kn:, kn:] = a_ww
        for k in range(kk):
            for l in range(kk):
                a[kn + k * e:kn + (k + 1) * e, kn + l * e:kn + (l + 1) * e] *= btb
    rhs = np.concatenate([b_m.ravel(), b_w.ravel()]) if e else b_m.ravel()
    return a, rhs


def _solve_spd(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve; minimum-norm spectral pseudo-inverse when singular."""
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError, ValueError):
        return scipy.linalg.pinvh(a) @ rhs


def fit(topology: GraphTopology, segments, config: FitConfig) -> DiffusionModel:
    """Least-squares diffusion model over the admitted target steps."""
    a, rhs = normal_equations(topology, segments, config)
    if config.ridge > 0:
        a = a + config.ridge * np.eye(a.shape[0])
    theta = _solve_spd(a, rhs)
    kk, n, e = config.order, topology.n_nodes, topology.n_edges
    memory = theta[:kk * n].reshape(kk, n)
    weights = theta[kk * n:].reshape(kk, e)
    return DiffusionModel(memory, weights)


def fit_no_flow(topology: GraphTopology, segments, config: FitConfig) -> DiffusionModel:
    """Same objective with all edge weights pinned at zero.

    Decouples into N independent K-tap autoregressions, solved per node.
    """
    segs = _segment_arrays(topology, segments)
    if config.demean:
        segs, _ = demean(segs)
    targets = _target_lists(segs, config)
    kk, n = config.order, topology.n_nodes
    lags = np.arange(1, kk + 1, dtype=np.int64)
    a_mm = np.zeros((n, kk, kk))
    b_m = np.zeros((n, kk))
    for seg, tgt in zip(segs, targets):
        if tgt.size == 0:
            continue
        for lo in range(0, tgt.size, _BATCH):
            batch = tgt[lo:lo + _BATCH]
            idx = batch[:, None] - lags[None, :]
            xm = seg[idx]
            a_mm += np.matmul(xm.transpose(2, 1, 0), xm.transpose(2, 0, 1))
            b_m += np.einsum("bkn,bn->nk", xm, seg[batch])
    if config.ridge > 0:
        a_mm = a_mm + config.ridge * np.eye(kk)
    try:
        memory = np.linalg.solve(a_mm, b_m[:, :, None])[:, :, 0]   # (N, K)
    except np.linalg.LinAlgError:
        memory = (np.linalg.pinv(a_mm) @ b_m[:, :, None])[:, :, 0]
    return DiffusionModel(memory.T, np.zeros((kk, topology.n_edges)))


# ---------------------------------------------------------------------------
# prediction and scoring
# ---------------------------------------------------------------------------

def predict_targets(model: DiffusionModel, topology: GraphTopology, segment,
                    targets) -> np.ndarray:
    """One-step predictions at the given in-segment indices, (B, N)."""
    seg = np.asarray(segment, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.int64).ravel()
    if tgt.size == 0:
        return np.zeros((0, topology.n_nodes))
    if tgt.min() < model.order or tgt.max() >= seg.shape[0]:
        raise FitError(f"target without {model.order} in-segment predecessors")
    idx = tgt[:, None] - np.arange(1, model.order + 1, dtype=np.int64)[None, :]
    xm = seg[idx]
    pred = np.einsum("bkn,kn->bn", xm, model.node_memory)
    if topology.n_edges:
        xw = _edge_gradients(topology, seg)[idx]
        flows = np.einsum("bke,ke->be", xw, model.edge_weights)
        pred -= (incidence(topology) @ flows.T).T
    return pred


def rmse_per_step(model: DiffusionModel, topology: GraphTopology, segments,
                  targets=None) -> np.ndarray:
    """Channel-RMSE of one-step predictions at each test step, pooled in order."""
    segs = _segment_arrays(topology, segments)
    cfg = FitConfig(order=model.order, demean=False, targets=targets)
    target_lists = _target_lists(segs, cfg)
    out = []
    for seg, tgt in zip(segs, target_lists):
        if tgt.size == 0:
            continue
        err = predict_targets(model, topology, seg, tgt) - seg[tgt]
        out.append(np.sqrt(np.mean(err * err, axis=1)))
    return np.concatenate(out)


def training_error(model: DiffusionModel, topology: GraphTopology, segments,
                   targets=None) -> float:
    """Summed squared prediction error over the target steps."""
    segs = _segment_arrays(topology, segments)
    cfg = FitConfig(order=model.order, demean=False, targets=targets)
    target_lists = _target_lists(segs, cfg)
    total = 0.0
    for seg, tgt in zip(segs, target_lists):
        if tgt.size == 0:
            continue
        err = predict_targets(model, topology, seg, tgt) - seg[tgt]
        total += float((err * err).sum())
    return total


def improvement(rmse_no_flow, rmse_flow) -> float:
    """Median percent RMSE reduction of the flow model over the baseline."""
    nf = np.asarray(rmse_no_flow, dtype=np.float64).ravel()
    fl = np.asarray(rmse_flow, dtype=np.float64).ravel()
    if nf.shape != fl.shape:
        raise FitError("aligned RMSE series required")
    valid = nf > 0
    if not valid.all():
        warnings.warn(
            f"excluding {int((~valid).sum())} steps with zero baseline RMSE",
            RuntimeWarning,
            stacklevel=2,
        )
    if not valid.any():
        raise FitError("no steps with positive baseline RMSE")
    rel = (nf[valid] - fl[valid]) / nf[valid]
    return float(100.0 * np.median(rel))


# ---------------------------------------------------------------------------
# significance tests
# ---------------------------------------------------------------------------

def t_test_one_sample(values, null_mean: float = 0.0):
    """Classical one-sample t test; two-sided p from the t tail function."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("t test needs at least 2 values")
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        raise ValueError("zero sample variance; t statistic undefined")
    n = x.size
    t = float((x.mean() - null_mean) / (sd / np.sqrt(n)))
    df = n - 1
    p = float(betainc(0.5 * df, 0.5, df / (df + t * t)))
    return t, p


def t_test_paired(a, b):
    """Paired two-sided t test on the element-wise differences."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    return t_test_one_sample(x - y)


# ---------------------------------------------------------------------------
# session-level pipelines
# ---------------------------------------------------------------------------

def fit_session_model(session: SessionDataset, order: int, ridge: float = 0.0,
                      use_demean: bool = True, after_ms: float = 30.0,
                      no_flow: bool = False) -> DiffusionModel:
    """One model for the whole session, fitted on every trial's window.

    Demeaning (when enabled) uses per-block channel means over the fitted
    windows, mirroring how blocks are recorded independently.
    """
    windows = []
    for b in range(len(session.blocks)):
        block_windows = stimulus_windows(
            session, b, range(len(session.blocks[b].trials)), after_ms
        )
        if use_demean:
            block_windows, _ = demean(block_windows)
        windows.extend(block_windows)
    cfg = FitConfig(order=order, ridge=ridge, demean=False)
    if no_flow:
        return fit_no_flow(session.topology, windows, cfg)
    return fit(session.topology, windows, cfg)


def evaluate_session(session: SessionDataset, orders, train_fraction: float = 0.8,
                     ridge: float = 0.0, use_demean: bool = True,
                     after_ms: float = 30.0) -> dict[int, SessionEval]:
    """Per-block train/test flow vs no-flow comparison, pooled per session.

    Models are fitted per block on the leading trials; one-step RMSE per
    held-out step is pooled across blocks before the median improvement.
    """
    train_idx, test_idx = split_train_test(session, train_fraction)
    topology = session.topology
    results: dict[int, SessionEval] = {}
    for order in orders:
        cfg = FitConfig(order=order, ridge=ridge, demean=False)
        rmse_f, rmse_nf = [], []
        err_f = err_nf = 0.0
        for b in range(len(session.blocks)):
            train_w = stimulus_windows(session, b, train_idx[b], after_ms)
            test_w = stimulus_windows(session, b, test_idx[b], after_ms)
            if use_demean:
                train_w, means = demean(train_w)
                test_w = [w - means for w in test_w]
            flow_model = fit(topology, train_w, cfg)
            no_flow_model = fit_no_flow(topology, train_w, cfg)
            err_f += training_error(flow_model, topology, train_w)
            err_nf += training_error(no_flow_model, topology, train_w)
            rmse_f.append(rmse_per_step(flow_model, topology, test_w))
            rmse_nf.append(rmse_per_step(no_flow_model, topology, test_w))
        rf = np.concatenate(rmse_f)
        rnf = np.concatenate(rmse_nf)
        if rf.size == 0:
            raise FitError("empty test set")
        results[order] = SessionEval(
            order=order,
            improvement_pct=improvement(rnf, rf),
            rmse_flow=rf,
            rmse_no_flow=rnf,
            train_error_flow=err_f,
            train_error_no_flow=err_nf,
        )
    return results


def session_latency_flow(session: SessionDataset, model: DiffusionModel,
                         at_ms: float, use_demean: bool = True,
                         after_ms: float = 30.0) -> np.ndarray:
    """Trial-averaged edge flow at a fixed latency after the first laser.

    The flow at `at_ms` needs `order` predecessors inside the fitted
    window, so at_ms must be at least order samples past stimulation and
    inside the window.
    """
    from .model import flow_series  # local import keeps module deps one-way

    at = session.ms_to_samples(at_ms)
    if at < model.order:
        raise FitError(
            f"latency {at_ms} ms gives sample {at}, but the model needs "
            f"{model.order} in-window predecessors"
        )
    flows = []
    for b in range(len(session.blocks)):
        windows = stimulus_windows(
            session, b, range(len(session.blocks[b].trials)), after_ms
        )
        if use_demean:
            windows, _ = demean(windows)
        for w in windows:
            if at >= w.shape[0]:
                raise FitError(
                    f"latency {at_ms} ms falls outside the {w.shape[0]}-sample window"
                )
            flows.append(flow_series(model, session.topology, w, [at]).flows[0])
    return np.mean(flows, axis=0)


def build_eval_report(session_results: dict[str, dict[int, SessionEval]]) -> EvalReport:
    """Tabulate per-session improvements and per-order significance."""
    orders = sorted({o for res in session_results.values() for o in res})
    rows = []
    for name in sorted(session_results):
        for order in orders:
            ev = session_results[name].get(order)
            if ev is None:
                continue
            rows.append(
                {
                    "session": name,
                    "order": order,
                    "improvement_pct": ev.improvement_pct,
                    "train_error_flow": ev.train_error_flow,
                    "train_error_no_flow": ev.train_error_no_flow,
                    "n_test_steps": int(ev.rmse_flow.size),
                }
            )
    mean_imp, t_stat, p_val = {}, {}, {}
    for order in orders:
        vals = np.array(
            [r["improvement_pct"] for r in rows if r["order"] == order]
        )
        mean_imp[order] = float(vals.mean())
        if vals.size >= 2 and vals.std(ddof=1) > 0:
            t_stat[order], p_val[order] = t_test_one_sample(vals)
        else:
            t_stat[order], p_val[order] = float("nan"), float("nan")
    return EvalReport(orders, rows, mean_imp, t_stat, p_val)
