"""Offline planning stage: coefficient calibration and strategy ranking.

Profiling observations fit the latency-bandwidth coefficients per link class
and the compute coefficient; the fitted cost model then scores every
grammar-legal, memory-feasible strategy and ranks them under an explicit
objective (minimize TTFT, minimize ITL, maximize throughput, or report the
Pareto front).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import (CalibrationCoefficients, ClusterConfig, ModelHyperparams,
                     WorkloadSpec)
from .costmodel import (CostEstimate, indicators, lambda_ep_baseline,
                        lambda_mix)
from .errors import AnalyzerError, CalibrationError
from .strategy import (ParallelStrategy, check_memory, enumerate_strategies,
                       format_strategy)

_OP_KINDS = ("AR", "RS", "AG", "A2A", "P2P", "MoE_compute")
OBJECTIVES = ("ttft", "itl", "throughput", "pareto")


@dataclass(frozen=True)
class ProfilingObservation:
    """One measured operation: collective or compute timing sample."""

    op_kind: str
    size: float  # bytes for collectives, element-ops for compute
    degree: int
    scope: str  # "intra" | "inter"
    measured_seconds: float

    def __post_init__(self) -> None:
        if self.op_kind not in _OP_KINDS:
            raise ValueError(f"unknown op_kind {self.op_kind!r}")
        if self.scope not in ("intra", "inter"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if self.measured_seconds <= 0:
            raise ValueError("measured_seconds must be strictly positive")
        if self.size < 0:
            raise ValueError("size must be nonnegative")


OBSERVATION_CSV_HEADER = ["op_kind", "size", "degree", "scope", "measured_seconds"]


def load_observations(path: str | Path) -> list[ProfilingObservation]:
    """Read profiling observations from a CSV file."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != OBSERVATION_CSV_HEADER:
        raise ValueError(f"unexpected observation header: {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            out.append(ProfilingObservation(row[0], float(row[1]), int(row[2]),
                                            row[3], float(row[4])))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return out


def _link_features(obs: ProfilingObservation) -> tuple[float, float]:
    """(rounds, wire bytes) feature pair of one collective observation."""
    d, size = obs.degree, obs.size
    if obs.op_kind in ("RS", "AG"):
        return (0.0, 0.0) if d <= 1 else (1.0, size / d)
    if obs.op_kind == "AR":
        # literal composition: RS(size/d, d) + AG(size/d, d)
        return (0.0, 0.0) if d <= 1 else (2.0, 2.0 * size / (d * d))
    if obs.op_kind == "A2A":
        return (0.0, 0.0) if d <= 1 else (float(d - 1), (d - 1) * size / d)
    if obs.op_kind == "P2P":
        return (1.0, size)
    raise ValueError(obs.op_kind)


def _fit_link_class(scope: str, group: list[ProfilingObservation]) -> tuple[float, float]:
    feats = [_link_features(o) for o in group]
    rows = [(f, o.measured_seconds) for f, o in zip(feats, group) if f != (0.0, 0.0)]
    if len(rows) < 2:
        raise CalibrationError(
            f"{scope} link class: need at least two non-degenerate observations, "
            f"got {len(rows)}")
    design = np.array([f for f, _ in rows], dtype=np.float64)
    target = np.array([y for _, y in rows], dtype=np.float64)
    if np.linalg.matrix_rank(design) < 2:
        raise CalibrationError(
            f"{scope} link class: observations do not separate latency from "
            "bandwidth (vary the sizes)")
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    alpha, inv_beta = float(coef[0]), float(coef[1])
    if inv_beta <= 0:
        raise CalibrationError(
            f"{scope} link class: fitted bandwidth is not positive")
    return max(alpha, 0.0), 1.0 / inv_beta


def calibrate(observations: list[ProfilingObservation],
              ar_literal: bool = True,
              tau_literal: bool = False) -> CalibrationCoefficients:
    """Least-squares fit of the cost-model coefficients.

    Per scope, (alpha, beta) come from ordinary least squares on the
    (rounds, wire bytes) features implied by the collective formulas; the
    compute coefficient is a through-origin fit of seconds against
    element-ops. Classes without observations keep their defaults.
    """
    by_scope: dict[str, list[ProfilingObservation]] = {}
    compute_obs: list[ProfilingObservation] = []
    for o in observations:
        if o.op_kind == "MoE_compute":
            compute_obs.append(o)
        else:
            by_scope.setdefault(o.scope, []).append(o)

    fit: dict[str, tuple[float, float]] = {}
    for scope, group in sorted(by_scope.items()):
        fit[scope] = _fit_link_class(scope, group)

    compute_coeff = None
    if compute_obs:
        sizes = np.array([o.size for o in compute_obs], dtype=np.float64)
        times = np.array([o.measured_seconds for o in compute_obs], dtype=np.float64)
        denom = float(np.dot(sizes, sizes))
        if denom <= 0:
            raise CalibrationError("compute class: all observed sizes are zero")
        compute_coeff = float(np.dot(sizes, times) / denom)
        if compute_coeff <= 0:
            raise CalibrationError("compute class: fitted coefficient is not positive")

    intra = fit.get("intra", (None, None))
    inter = fit.get("inter", (None, None))
    return CalibrationCoefficients(
        compute_coeff=compute_coeff,
        intra_alpha=intra[0], intra_beta=intra[1],
        inter_alpha=inter[0], inter_beta=inter[1],
        ar_literal=ar_literal, tau_literal=tau_literal,
    )


# ---------------------------------------------------------------------------
# ranking


@dataclass(frozen=True)
class RankedEntry:
    strategy: ParallelStrategy
    estimate: CostEstimate
    memory_bytes: float
    on_front: bool = True


@dataclass(frozen=True)
class RankedStrategies:
    entries: tuple[RankedEntry, ...]
    objective: str
    tie_break: str
    model: ModelHyperparams
    cluster: ClusterConfig
    workload: WorkloadSpec
    calibration: CalibrationCoefficients

    @property
    def best(self) -> RankedEntry:
        return self.entries[0]


def _objective_value(objective: str, est: CostEstimate) -> float:
    if objective == "ttft":
        return est.ttft
    if objective == "itl":
        return est.itl
    if objective == "throughput":
        return -est.theta
    raise ValueError(f"unknown objective {objective!r}")


def _dominates(a: CostEstimate, b: CostEstimate) -> bool:
    better_eq = a.ttft <= b.ttft and a.itl <= b.itl and a.theta >= b.theta
    strictly = a.ttft < b.ttft or a.itl < b.itl or a.theta > b.theta
    return better_eq and strictly


def select_strategy(model: ModelHyperparams, cluster: ClusterConfig,
                    workload: WorkloadSpec, calib: CalibrationCoefficients,
                    objective: str = "ttft", max_ttft: float | None = None,
                    max_itl: float | None = None) -> RankedStrategies:
    """Score every feasible strategy and rank by the objective.

    Memory-infeasible strategies are excluded, SLO bounds (when given) are
    hard filters, saturated strategies sort after stable ones, and ties break
    on the lexicographically smallest strategy string.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    scored: list[RankedEntry] = []
    for strat in enumerate_strategies(cluster, model):
        mem = check_memory(strat, model, cluster, workload)
        if not mem.feasible:
            continue
        est = indicators(strat, model, workload, cluster, calib)
        if max_ttft is not None and not (est.stable and est.ttft <= max_ttft):
            continue
        if max_itl is not None and est.itl > max_itl:
            continue
        scored.append(RankedEntry(strat, est, mem.required_bytes))
    if not scored:
        raise AnalyzerError(
            "no strategy satisfies the memory bound"
            + ("" if max_ttft is None and max_itl is None else " and SLO filters"))

    if objective == "pareto":
        stable = [e for e in scored if e.estimate.stable]
        pool = stable or scored
        front_flags = {
            id(e): not any(_dominates(o.estimate, e.estimate) for o in pool if o is not e)
            for e in pool
        }
        entries = [RankedEntry(e.strategy, e.estimate, e.memory_bytes,
                               front_flags.get(id(e), False)) for e in scored]
        entries.sort(key=lambda e: (not e.on_front, not e.estimate.stable,
                                    e.estimate.ttft, format_strategy(e.strategy)))
        tie_break = "pareto front first, then TTFT, then strategy string"
    else:
        entries = [RankedEntry(e.strategy, e.estimate, e.memory_bytes, True)
                   for e in scored]
        entries.sort(key=lambda e: (not e.estimate.stable,
                                    _objective_value(objective, e.estimate),
                                    format_strategy(e.strategy)))
        tie_break = "stable first, then objective, then strategy string"
    return RankedStrategies(tuple(entries), objective, tie_break, model,
                            cluster, workload, calib)


# ---------------------------------------------------------------------------
# reporting


def _is_pure_ep(strategy: ParallelStrategy, cluster: ClusterConfig) -> bool:
    return (strategy.d_pp == 1 and strategy.moe_tp == 1
            and strategy.moe_ep == cluster.total_devices)


def _is_mixed(strategy: ParallelStrategy, cluster: ClusterConfig) -> bool:
    return (strategy.d_pp == 1 and strategy.moe_tp == cluster.n_proc
            and strategy.moe_ep == cluster.n_node)


def compare_report(ranked: RankedStrategies, top_n: int = 10) -> dict:
    """Structured report of the top-n ranked strategies.

    When the ranking contains both canonical MoE layouts (pure inter-EP and
    intra-TP + inter-EP) the report adds their closed-form per-layer
    communication comparison.
    """
    entries = ranked.entries[:max(top_n, 0)] or ranked.entries[:1]
    rows = []
    for i, entry in enumerate(entries):
        est = entry.estimate
        rows.append({
            "rank": i + 1,
            "strategy": format_strategy(entry.strategy),
            "stable": est.stable,
            "on_front": entry.on_front,
            "ttft_s": est.ttft,
            "itl_s": est.itl,
            "throughput_tok_s": est.theta,
            "w_q_s": est.w_q,
            "svc_prefill_s": est.svc_prefill,
            "svc_decode_s": est.svc_decode,
            "memory_bytes": entry.memory_bytes,
            "breakdown": est.breakdown,
        })
    report = {
        "objective": ranked.objective,
        "tie_break": ranked.tie_break,
        "calibration": asdict(ranked.calibration),
        "entries": rows,
    }
    have_ep = any(_is_pure_ep(e.strategy, ranked.cluster) for e in ranked.entries)
    have_mix = any(_is_mixed(e.strategy, ranked.cluster) for e in ranked.entries)
    if have_ep and have_mix:
        ep = lambda_ep_baseline(ranked.model, ranked.workload, ranked.cluster,
                                ranked.calibration)
        mix = lambda_mix(ranked.model, ranked.workload, ranked.cluster,
                         ranked.calibration)
        report["lambda_comparison"] = {
            "pure_ep_s": ep,
            "mixed_tp_ep_s": mix,
            "mixed_faster": mix < ep,
        }
    return report


def render_report_text(report: dict) -> str:
    """Plain-text table rendering of :func:`compare_report` output."""
    header = f"objective: {report['objective']}    tie-break: {report['tie_break']}"
    cols = ["rank", "strategy", "stable", "ttft_s", "itl_s", "throughput_tok_s"]
    table = [cols]
    for row in report["entries"]:
        table.append([
            str(row["rank"]), row["strategy"], str(row["stable"]),
            f"{row['ttft_s']:.6g}", f"{row['itl_s']:.6g}",
            f"{row['throughput_tok_s']:.6g}",
        ])
    widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
    lines = [header, ""]
    for r in table:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    if "lambda_comparison" in report:
        cmp_ = report["lambda_comparison"]
        lines.append("")
        lines.append(
            f"per-layer comm: pure-EP {cmp_['pure_ep_s']:.6g} s vs "
            f"intra-TP + inter-EP {cmp_['mixed_tp_ep_s']:.6g} s "
            f"({'mixed' if cmp_['mixed_faster'] else 'pure-EP'} faster)")
    return "\n".join(lines) + "\n"


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
