"""Batch command-line front end.

Subcommands: synth, fit, eval, decompose, broadcast.  Every command
validates and computes before touching the output directory, writes a
run_manifest.json alongside its outputs, exits 0 on success, and reports
failures as one JSON object on stderr with a nonzero exit code.

Session-level work parallelizes over sessions; worker count comes from
--workers or the NEUROFLOW_WORKERS environment variable (flag wins).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from ._util import read_json, write_json
from .broadcaster import locate_session_broadcaster
from .estimation import (
    build_eval_report,
    evaluate_session,
    fit_session_model,
    n_parameters,
    session_latency_flow,
    stimulus_windows,
    training_error,
    demean as demean_windows,
)
from .hodge import gradient_mode_basis, hodge_decompose, lowpass_gradient
from .model import load_model, model_to_dict, save_model
from .render import quiver_data, quiver_svg
from .session import read_session, write_session
from .synth import SynthConfig, config_from_dict, config_to_dict, generate_session


def _worker_count(args) -> int:
    if getattr(args, "workers", None):
        return max(1, int(args.workers))
    env = os.environ.get("NEUROFLOW_WORKERS", "")
    return max(1, int(env)) if env else 1


def _map_sessions(func, session_dirs, workers: int):
    if workers <= 1 or len(session_dirs) <= 1:
        return [func(d) for d in session_dirs]
    with ProcessPoolExecutor(max_workers=min(workers, len(session_dirs))) as pool:
        return list(pool.map(func, session_dirs))


def _write_run_manifest(out_dir: Path, command: str, config: dict, inputs,
                        outputs, seed, started: float) -> None:
    write_json(
        out_dir / "run_manifest.json",
        {
            "command": command,
            "config": config,
            "inputs": [str(p) for p in inputs],
            "outputs": sorted(str(o) for o in outputs),
            "seed": seed,
            "version": __version__,
            "wall_time_s": round(time.perf_counter() - started, 3),
        },
    )


def _parse_orders(text: str) -> list[int]:
    orders = sorted({int(tok) for tok in text.split(",") if tok.strip()})
    if not orders or any(k < 1 for k in orders):
        raise ValueError(f"bad order list {text!r}")
    return orders


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SYNTH_FLAGS = {
    "rows": "rows",
    "cols": "cols",
    "knn": "knn",
    "order": "order",
    "trials": "trials_per_block",
    "blocks": "blocks",
    "rate": "stim_rate_hz",
    "delay_ms": "inter_laser_delay_ms",
    "noise": "noise_std",
    "coupling": "coupling_scale",
    "amplitude": "impulse_amplitude",
    "init_std": "init_std",
    "sampling_rate": "sampling_rate_hz",
    "seed": "seed",
    "strict_protocol": "strict_protocol",
}


def cmd_synth(args) -> None:
    started = time.perf_counter()
    cfg_dict = read_json(args.config) if args.config else {}
    for flag, field in _SYNTH_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            cfg_dict[field] = value
    if args.stim_node:
        cfg_dict["stim_nodes"] = tuple(args.stim_node)
    config = config_from_dict(cfg_dict)
    session = generate_session(config)

    out = Path(args.out)
    write_session(session, out)
    outputs = sorted(p.name for p in out.iterdir())
    _write_run_manifest(
        out, "synth", config_to_dict(config), [args.config] if args.config else [],
        outputs, config.seed, started,
    )


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args) -> None:
    started = time.perf_counter()
    session = read_session(args.session)
    model = fit_session_model(
        session, args.order, ridge=args.ridge, use_demean=not args.no_demean,
        after_ms=args.after_ms, no_flow=args.no_flow,
    )
    windows = []
    for b in range(len(session.blocks)):
        block_windows = stimulus_windows(
            session, b, range(len(session.blocks[b].trials)), args.after_ms
        )
        if not args.no_demean:
            block_windows, _ = demean_windows(block_windows)
        windows.extend(block_windows)
    err = training_error(model, session.topology, windows)
    n_steps = sum(max(0, w.shape[0] - args.order) for w in windows)
    report = {
        "order": args.order,
        "no_flow": bool(args.no_flow),
        "ridge": args.ridge,
        "demeaned": not args.no_demean,
        "training_error": err,
        "n_target_steps": n_steps,
        "n_parameters": n_parameters(session.topology, args.order),
    }

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    write_json(out / "fit_report.json", report)
    _write_run_manifest(
        out, "fit", report, [args.session],
        ["model.json", "fit_report.json"], None, started,
    )


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _eval_one(session_dir, orders, train_fraction, ridge, use_demean, after_ms):
    session = read_session(session_dir)
    results = evaluate_session(
        session, orders, train_fraction=train_fraction, ridge=ridge,
        use_demean=use_demean, after_ms=after_ms,
    )
    return str(session_dir), results


def cmd_eval(args) -> None:
    started = time.perf_counter()
    orders = _parse_orders(args.orders)
    worker = partial(
        _eval_one, orders=orders, train_fraction=args.train_fraction,
        ridge=args.ridge, use_demean=not args.no_demean, after_ms=args.after_ms,
    )
    pairs = _map_sessions(worker, args.sessions, _worker_count(args))
    report = build_eval_report(dict(pairs))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(
        out / "eval_report.json",
        {
            "orders": report.orders,
            "sessions": report.rows,
            "per_order": {
                str(k): {
                    "mean_improvement_pct": report.mean_improvement[k],
                    "t_statistic": report.t_statistic[k],
                    "p_value": report.p_value[k],
                }
                for k in report.orders
            },
        },
    )
    with (out / "eval_report.csv").open("w", encoding="utf-8") as fh:
        fh.write(
            "session,order,improvement_pct,train_error_flow,"
            "train_error_no_flow,n_test_steps\n"
        )
        for row in report.rows:
            fh.write(
                f"{row['session']},{row['order']},{row['improvement_pct']:.17g},"
                f"{row['train_error_flow']:.17g},{row['train_error_no_flow']:.17g},"
                f"{row['n_test_steps']}\n"
            )
    with (out / "improvement_histogram.csv").open("w", encoding="utf-8") as fh:
        fh.write("order,bin_left,bin_right,count\n")
        for k in report.orders:
            vals = np.array([r["improvement_pct"] for r in report.rows if r["order"] == k])
            counts, edges = np.histogram(vals, bins=10)
            for i, c in enumerate(counts):
                fh.write(f"{k},{edges[i]:.17g},{edges[i + 1]:.17g},{int(c)}\n")
    _write_run_manifest(
        out, "eval",
        {
            "orders": orders,
            "train_fraction": args.train_fraction,
            "ridge": args.ridge,
            "demeaned": not args.no_demean,
            "after_ms": args.after_ms,
        },
        args.sessions,
        ["eval_report.json", "eval_report.csv", "improvement_histogram.csv"],
        None, started,
    )


# ---------------------------------------------------------------------------
# decompose
# ---------------------------------------------------------------------------

def cmd_decompose(args) -> None:
    started = time.perf_counter()
    session = read_session(args.session)
    model = load_model(args.model)
    flow = session_latency_flow(
        session, model, args.at_ms, use_demean=not args.no_demean,
        after_ms=args.after_ms,
    )
    basis = gradient_mode_basis(session.topology)
    cutoff = min(args.cutoff, basis.n_modes)
    decomp = hodge_decompose(session.topology, flow, basis)
    smooth = lowpass_gradient(decomp, basis, cutoff)
    norm = float(np.linalg.norm(decomp.flow))
    residual = float(
        np.linalg.norm(decomp.flow - decomp.gradient_part - decomp.rotational_part)
    )
    payload = {
        "at_ms": args.at_ms,
        "cutoff": cutoff,
        "f": decomp.flow.tolist(),
        "f_grad": decomp.gradient_part.tolist(),
        "f_rot": decomp.rotational_part.tolist(),
        "filtered_gradient": smooth.tolist(),
        "mode_coefficients": decomp.mode_coefficients.tolist(),
        "eigenvalues": basis.eigenvalues.tolist(),
        "reconstruction_residual": residual / norm if norm > 0 else 0.0,
    }
    quiver = quiver_data(session.topology, flow, session.stim_location)
    svg = None
    if not args.no_svg:
        svg = quiver_svg(session.topology, flow, session.stim_location)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "decomposition.json", payload)
    write_json(out / "quiver.json", quiver)
    outputs = ["decomposition.json", "quiver.json"]
    if svg is not None:
        (out / "quiver.svg").write_text(svg, encoding="utf-8")
        outputs.append("quiver.svg")
    _write_run_manifest(
        out, "decompose",
        {"at_ms": args.at_ms, "cutoff": cutoff, "demeaned": not args.no_demean},
        [args.session, args.model], outputs, None, started,
    )


# ---------------------------------------------------------------------------
# broadcast
# ---------------------------------------------------------------------------

def _broadcast_one(session_dir, order, at_ms, cutoff, ridge, use_demean, after_ms):
    session = read_session(session_dir)
    report = locate_session_broadcaster(
        session, order=order, at_ms=at_ms, cutoff=cutoff, ridge=ridge,
        use_demean=use_demean, after_ms=after_ms,
    )
    return str(session_dir), report


def cmd_broadcast(args) -> None:
    started = time.perf_counter()
    worker = partial(
        _broadcast_one, order=args.order, at_ms=args.at_ms, cutoff=args.cutoff,
        ridge=args.ridge, use_demean=not args.no_demean, after_ms=args.after_ms,
    )
    pairs = _map_sessions(worker, args.sessions, _worker_count(args))

    rows = []
    for name, rep in pairs:
        rows.append(
            {
                "session": name,
                "adr": rep.adr.tolist(),
                "x_b": rep.location.tolist(),
                "x_s": rep.stim_location.tolist(),
                "d_b": rep.broadcaster_distance,
                "d_r": rep.random_distance,
            }
        )
    d_b = np.array([r["d_b"] for r in rows])
    d_r = np.array([r["d_r"] for r in rows])
    summary = {
        "n_sessions": len(rows),
        "mean_d_b": float(d_b.mean()),
        "mean_d_r": float(d_r.mean()),
    }
    if len(rows) >= 2 and np.std(d_b - d_r, ddof=1) > 0:
        from .estimation import t_test_paired

        t, p = t_test_paired(d_b, d_r)
        summary["t_statistic"] = t
        summary["p_value"] = p

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "broadcast_reports.json", rows)
    write_json(out / "broadcast_summary.json", summary)
    with (out / "broadcast_distances.csv").open("w", encoding="utf-8") as fh:
        fh.write("session,d_b,d_r\n")
        for r in rows:
            fh.write(f"{r['session']},{r['d_b']:.17g},{r['d_r']:.17g}\n")
    _write_run_manifest(
        out, "broadcast",
        {
            "order": args.order,
            "at_ms": args.at_ms,
            "cutoff": args.cutoff,
            "ridge": args.ridge,
            "demeaned": not args.no_demean,
        },
        args.sessions,
        ["broadcast_reports.json", "broadcast_summary.json", "broadcast_distances.csv"],
        None, started,
    )


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuroflow",
        description="Estimate and analyze communication flows on sensor graphs.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic stimulation session")
    p.add_argument("--out", required=True, help="output session directory")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--knn", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--trials", type=int, help="trials per block")
    p.add_argument("--blocks", type=int)
    p.add_argument("--rate", type=float, help="stimulation rate in Hz")
    p.add_argument("--delay-ms", dest="delay_ms", type=float)
    p.add_argument("--noise", type=float, help="additive noise std")
    p.add_argument("--coupling", type=float, help="edge coupling scale")
    p.add_argument("--amplitude", type=float, help="impulse amplitude")
    p.add_argument("--init-std", dest="init_std", type=float)
    p.add_argument("--sampling-rate", dest="sampling_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stim-node", type=int, action="append",
                   help="stimulation node id (repeat for a second laser)")
    p.add_argument("--strict-protocol", dest="strict_protocol",
                   action="store_true", default=None,
                   help="restrict rate/delay to the recorded protocol sets")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("fit", help="fit a diffusion model to a session")
    p.add_argument("session", help="session directory")
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--no-flow", dest="no_flow", action="store_true",
                   help="pin all edge weights at zero")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--no-demean", dest="no_demean", action="store_true")
    p.add_argument("--after-ms", dest="after_ms", type=float, default=30.0,
                   help="fit window length past the last stimulation")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("eval", help="compare flow vs no-flow predictions")
    p.add_argument("sessions", nargs="+", help="session directories")
    p.add_argument("--out", required=True)
    p.add_argument("--orders", default="1,5,9", help="comma-separated model orders")
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=0.8)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--no-demean", dest="no_demean", action="store_true")
    p.add_argument("--after-ms", dest="after_ms", type=float, default=30.0)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("decompose", help="flow snapshot and its gradient/rotational split")
    p.add_argument("session", help="session directory")
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--out", required=True)
    p.add_argument("--at-ms", dest="at_ms", type=float, default=10.0,
                   help="latency after the first laser")
    p.add_argument("--cutoff", type=int, default=14,
                   help="number of smooth gradient modes kept")
    p.add_argument("--no-demean", dest="no_demean", action="store_true")
    p.add_argument("--after-ms", dest="after_ms", type=float, default=30.0)
    p.add_argument("--no-svg", dest="no_svg", action="store_true")
    p.set_defaults(handler=cmd_decompose)

    p = sub.add_parser("broadcast", help="localize the global broadcaster per session")
    p.add_argument("sessions", nargs="+", help="session directories")
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--at-ms", dest="at_ms", type=float, default=10.0)
    p.add_argument("--cutoff", type=int, default=None)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--no-demean", dest="no_demean", action="store_true")
    p.add_argument("--after-ms", dest="after_ms", type=float, default=30.0)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_broadcast)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "handler"):
        parser.print_help()
        return 2
    try:
        args.handler(args)
    except Exception as exc:  # surface every failure as machine-readable JSON
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
