"""Command-line entry point.

Subcommands: ``analyze`` (rank strategies), ``simulate`` (run the cluster
simulation and verify against the dense oracle), ``gantt`` (render a trace),
``compare`` (side-by-side indicators for named strategies). Exit codes:
0 success, 1 verification failure, 2 input error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .analyzer import (calibrate, compare_report, load_observations,
                       render_report_text, save_report, select_strategy)
from .config import CalibrationCoefficients, load_config, validate_bundle
from .costmodel import indicators, lambda_ep_baseline, lambda_mix
from .errors import MoeplanError, VerificationError
from .simcluster import (ExpertSpec, RouterSpec, build_cluster, run_moe_block,
                         save_trace, trace_from_csv, verify_against_oracle)
from .strategy import format_strategy, parse_strategy, validate_against_cluster
from .timeline import (export_gantt, make_sync_trace, overlap_metrics,
                       schedule)

import numpy as np

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_INPUT = 2


def _manifest(command: str, config: str | None, seed: int | None,
              outputs: list[Path], out_dir: Path) -> Path:
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "outputs": sorted(str(p) for p in outputs),
        "written_at_unix": int(time.time()),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze(args) -> int:
    bundle = load_config(args.config)
    for warning in validate_bundle(bundle):
        print(f"warning: {warning}", file=sys.stderr)
    calib = bundle.calibration
    if args.profiling_csv:
        fitted = calibrate(load_observations(args.profiling_csv))
        calib = CalibrationCoefficients(
            compute_coeff=fitted.compute_coeff or calib.compute_coeff,
            intra_alpha=fitted.intra_alpha, intra_beta=fitted.intra_beta,
            inter_alpha=fitted.inter_alpha, inter_beta=fitted.inter_beta,
            ar_literal=calib.ar_literal, tau_literal=calib.tau_literal,
        )
    ranked = select_strategy(bundle.model, bundle.cluster, bundle.workload,
                             calib, objective=args.objective)
    report = compare_report(ranked, top_n=args.top_n)
    out = _out_dir(args)
    json_path = out / "report.json"
    save_report(report, json_path)
    text_path = out / "report.txt"
    text_path.write_text(render_report_text(report))
    _manifest("analyze", args.config, None, [json_path, text_path], out)
    print(f"best strategy: {format_strategy(ranked.best.strategy)}")
    print(f"report: {json_path}")
    return EXIT_OK


def _simulation_inputs(bundle, strategy, seed):
    """Deterministic test tensors and routing for the simulated MoE block."""
    cluster = build_cluster(strategy.moe_ep, strategy.moe_tp)
    rng = np.random.default_rng(seed)
    tokens = 4 * cluster.n_node
    hidden = max(cluster.n_proc, 8)
    experts = ExpertSpec.default(max(bundle.model.num_routed_experts, cluster.n_node))
    k = min(bundle.model.top_k, experts.num_experts)
    router = RouterSpec.random(tokens, experts.num_experts, k, seed)
    x = rng.standard_normal((tokens, hidden))
    return cluster, x, router, experts


def cmd_simulate(args) -> int:
    bundle = load_config(args.config)
    strategy = parse_strategy(args.strategy)
    validate_against_cluster(strategy, bundle.cluster)
    cluster, x, router, experts = _simulation_inputs(bundle, strategy, args.seed)
    out = _out_dir(args)
    outputs = []
    modes = ("fused", "baseline") if args.mode == "both" else (args.mode,)
    traces = {}
    verdicts = {}
    failed = False
    for mode in modes:
        y, trace = run_moe_block(cluster, x, router, experts, mode=mode)
        trace_path = out / f"trace_{mode}.csv"
        save_trace(trace.events, trace_path)
        outputs.append(trace_path)
        traces[mode] = trace
        try:
            max_err = verify_against_oracle(y, x, router, experts)
            verdicts[mode] = {"verified": True, "max_relative_error": max_err}
        except VerificationError as exc:
            failed = True
            verdicts[mode] = {"verified": False, "detail": str(exc)}
    verdict_path = out / "verification.json"
    verdict_path.write_text(json.dumps(verdicts, indent=2, sort_keys=True) + "\n")
    outputs.append(verdict_path)
    if args.mode == "both":
        fused_tl = schedule(traces["fused"].events, bundle.cluster,
                            bundle.calibration)
        sync_tl = schedule(make_sync_trace(traces["fused"].events),
                           bundle.cluster, bundle.calibration)
        cmp_path = out / "overlap.json"
        cmp_path.write_text(json.dumps(
            overlap_metrics(fused_tl, sync_tl).to_dict(),
            indent=2, sort_keys=True) + "\n")
        outputs.append(cmp_path)
    _manifest("simulate", args.config, args.seed, outputs, out)
    for mode, verdict in sorted(verdicts.items()):
        status = "ok" if verdict["verified"] else "MISMATCH"
        print(f"{mode}: {status}")
    if failed:
        print("oracle verification failed", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_gantt(args) -> int:
    bundle = load_config(args.config)
    events = trace_from_csv(Path(args.trace).read_text())
    timeline = schedule(events, bundle.cluster, bundle.calibration)
    out = _out_dir(args)
    path = out / f"gantt.{args.format}"
    export_gantt(timeline, path, format=args.format)
    _manifest("gantt", args.config, None, [path], out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    bundle = load_config(args.config)
    model, cluster, workload, calib = bundle
    rows = []
    for text in args.strategy:
        strategy = parse_strategy(text)
        validate_against_cluster(strategy, cluster)
        est = indicators(strategy, model, workload, cluster, calib)
        rows.append({"strategy": format_strategy(strategy), **est.to_dict()})
    report = {
        "strategies": rows,
        "lambda_comparison": {
            "pure_ep_s": lambda_ep_baseline(model, workload, cluster, calib),
            "mixed_tp_ep_s": lambda_mix(model, workload, cluster, calib),
        },
    }
    out = _out_dir(args)
    path = out / "compare.json"
    save_report(report, path)
    _manifest("compare", args.config, None, [path], out)
    print("strategy  ttft  itl  theta  stable")
    for row in rows:
        print(f"{row['strategy']}  {row['ttft']:.6g}  {row['itl']:.6g}  "
              f"{row['theta']:.6g}  {row['stable']}")
    cmp_ = report["lambda_comparison"]
    print(f"lambda pure-EP {cmp_['pure_ep_s']:.6g} s vs mixed {cmp_['mixed_tp_ep_s']:.6g} s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moeplan",
        description="Plan and verify parallel strategies for MoE serving.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="rank feasible parallel strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--objective", default="ttft",
                   choices=("ttft", "itl", "throughput", "pareto"))
    p.add_argument("--profiling-csv", default=None)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="simulate a strategy and verify it")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="fused", choices=("fused", "baseline", "both"))
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gantt", help="render a trace CSV as a Gantt chart")
    p.add_argument("--config", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--format", default="svg", choices=("csv", "svg", "json"))
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_gantt)

    p = sub.add_parser("compare", help="side-by-side indicators for strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", action="append", required=True)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except (MoeplanError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
