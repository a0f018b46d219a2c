"""Analytic latency model: collective costs, service latency, queuing, indicators.

Every cost function takes byte sizes and returns seconds under a per-link
latency-bandwidth model: one communication round costs ``alpha`` plus the
wire bytes divided by ``beta``. Degree-1 collectives are no-ops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import (CalibrationCoefficients, ClusterConfig, ModelHyperparams,
                     WorkloadSpec)
from .errors import SaturationError
from .strategy import ParallelStrategy, classify_dp_ep

UNSTABLE = math.inf


@dataclass(frozen=True)
class LinkClass:
    """One link tier: per-message latency (s) and bandwidth (bytes/s)."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        assert self.alpha >= 0 and self.beta > 0


def links(cluster: ClusterConfig,
          calib: CalibrationCoefficients | None = None) -> tuple[LinkClass, LinkClass]:
    """(intra, inter) link classes, with calibration overrides applied."""
    calib = calib or CalibrationCoefficients()
    intra = LinkClass(
        cluster.intra_alpha if calib.intra_alpha is None else calib.intra_alpha,
        cluster.intra_beta if calib.intra_beta is None else calib.intra_beta,
    )
    inter = LinkClass(
        cluster.inter_alpha if calib.inter_alpha is None else calib.inter_alpha,
        cluster.inter_beta if calib.inter_beta is None else calib.inter_beta,
    )
    return intra, inter


def rs_cost(size: float, degree: int, link: LinkClass) -> float:
    """Reduce-scatter: one round moving size/degree bytes."""
    if degree <= 1:
        return 0.0
    return link.alpha + (size / degree) / link.beta


def ag_cost(size: float, degree: int, link: LinkClass) -> float:
    """All-gather; same cost law as reduce-scatter."""
    return rs_cost(size, degree, link)


def ar_cost(size: float, degree: int, link: LinkClass, *, literal: bool = True) -> float:
    """All-reduce decomposed into RS + AG.

    ``literal`` feeds size/degree into both halves (the printed composition);
    otherwise the undivided size is used.
    """
    if degree <= 1:
        return 0.0
    inner = size / degree if literal else size
    return rs_cost(inner, degree, link) + ag_cost(inner, degree, link)


def a2a_cost(size: float, degree: int, link: LinkClass) -> float:
    """Pairwise all-to-all: degree-1 rounds of size/degree bytes each."""
    if degree <= 1:
        return 0.0
    return (degree - 1) * (link.alpha + (size / degree) / link.beta)


def p2p_cost(size: float, link: LinkClass) -> float:
    """Point-to-point transfer of ``size`` bytes."""
    return link.alpha + size / link.beta


def _scope(extent: int, cluster: ClusterConfig) -> str:
    """A group whose device extent fits in one node is intra-node; any group
    spanning nodes uses the inter link for the whole group (conservative)."""
    return "intra" if extent <= cluster.n_proc else "inter"


def _link_for(extent: int, cluster: ClusterConfig, intra: LinkClass,
              inter: LinkClass) -> tuple[str, LinkClass]:
    scope = _scope(extent, cluster)
    return scope, (intra if scope == "intra" else inter)


def compute_latency(strategy: ParallelStrategy, model: ModelHyperparams,
                    workload: WorkloadSpec, calib: CalibrationCoefficients,
                    s_override: int | None = None) -> float:
    """Per-rank compute seconds for one decoder layer.

    tau = c * psi_active / (d_TP * d_EP) * (b / d_DP) * s, optionally times
    the hidden dim when ``tau_literal`` is set.
    """
    s = workload.seq_len if s_override is None else s_override
    c = calib.compute_coeff if calib.compute_coeff is not None else 1.0
    tau = (c * model.psi_active / (strategy.d_tp * strategy.d_ep)
           * (workload.batch_size / strategy.d_dp) * s)
    if calib.tau_literal:
        tau *= model.hidden_dim
    return tau


def comm_terms(strategy: ParallelStrategy, model: ModelHyperparams,
               workload: WorkloadSpec, cluster: ClusterConfig,
               calib: CalibrationCoefficients | None = None,
               s_override: int | None = None) -> list[dict]:
    """Per-rank communication terms of one decoder layer, itemized.

    One all-reduce per block on the hidden states, plus the dispatch and
    combine all-to-alls with the DP-EP trade-off applied: when d_DP >= d_EP
    the A2A runs over groups of d_EP ranks at batch b/d_DP; otherwise over
    groups of d_DP ranks at batch b/d_EP (hidden-state redundancy dropped).
    """
    calib = calib or CalibrationCoefficients()
    intra, inter = links(cluster, calib)
    s = workload.seq_len if s_override is None else s_override
    b, h, k = workload.batch_size, model.hidden_dim, model.top_k
    bpe = model.bytes_per_element
    case = classify_dp_ep(strategy)

    ar_size = (b / strategy.d_dp) * s * h * bpe
    if case.case in ("equal", "dp_greater"):
        a2a_size = (b / strategy.d_dp) * s * h * k * bpe
    else:
        a2a_size = (b / strategy.d_ep) * s * h * k * bpe
    a2a_group = case.group_size
    a2a_extent = strategy.moe_tp * strategy.moe_ep

    terms = []
    for block, degree in (("attention", strategy.attn_tp), ("moe", strategy.moe_tp)):
        scope, link = _link_for(degree, cluster, intra, inter)
        terms.append({
            "op": "ar", "block": block, "size_bytes": ar_size, "degree": degree,
            "scope": scope, "rounds": 0 if degree == 1 else 2,
            "seconds": ar_cost(ar_size, degree, link, literal=calib.ar_literal),
        })
    scope, link = _link_for(a2a_extent, cluster, intra, inter)
    for phase in ("dispatch", "combine"):
        terms.append({
            "op": "a2a", "block": phase, "size_bytes": a2a_size, "degree": a2a_group,
            "scope": scope, "rounds": max(a2a_group - 1, 0),
            "seconds": a2a_cost(a2a_size, a2a_group, link),
            "dp_ep_case": case.case,
        })
    return terms


def comm_latency(strategy: ParallelStrategy, model: ModelHyperparams,
                 workload: WorkloadSpec, cluster: ClusterConfig,
                 calib: CalibrationCoefficients | None = None,
                 s_override: int | None = None) -> float:
    return sum(t["seconds"] for t in comm_terms(
        strategy, model, workload, cluster, calib, s_override))


def _p2p_term(strategy: ParallelStrategy, model: ModelHyperparams,
              workload: WorkloadSpec, cluster: ClusterConfig,
              calib: CalibrationCoefficients, s: int) -> float:
    if strategy.d_pp <= 1:
        return 0.0
    intra, inter = links(cluster, calib)
    link = inter if cluster.n_node > 1 else intra
    size = (workload.batch_size / strategy.d_dp) * s * model.hidden_dim * model.bytes_per_element
    return (strategy.d_pp - 1) * p2p_cost(size, link)


def svc_latency(strategy: ParallelStrategy, model: ModelHyperparams,
                workload: WorkloadSpec, cluster: ClusterConfig,
                calib: CalibrationCoefficients, s_override: int) -> float:
    """Service latency for one token: l * (tau + lambda) + PP hops."""
    tau = compute_latency(strategy, model, workload, calib, s_override)
    lam = comm_latency(strategy, model, workload, cluster, calib, s_override)
    return (model.num_layers * (tau + lam)
            + _p2p_term(strategy, model, workload, cluster, calib, s_override))


def queuing_delay(arrival_rate: float, svc: float) -> float:
    """M/M/1 expected wait: lambda_a / (mu * (mu - lambda_a)), mu = 1/svc."""
    if svc <= 0:
        raise ValueError("service latency must be positive")
    rho = arrival_rate * svc
    if rho >= 1:
        raise SaturationError(
            f"utilization rho={rho:.4g} >= 1 (arrival {arrival_rate:g}/s, "
            f"service {svc:g}s)"
        )
    mu = 1.0 / svc
    return arrival_rate / (mu * (mu - arrival_rate))


@dataclass(frozen=True)
class CostEstimate:
    """Full indicator vector for one strategy, with an itemized breakdown."""

    tau: float
    lambda_comm: float
    p2p: float
    svc_prefill: float
    svc_decode: float
    w_q: float
    ttft: float
    itl: float
    theta: float
    stable: bool
    breakdown: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "lambda_comm": self.lambda_comm, "p2p": self.p2p,
            "svc_prefill": self.svc_prefill, "svc_decode": self.svc_decode,
            "w_q": self.w_q, "ttft": self.ttft, "itl": self.itl,
            "theta": self.theta, "stable": self.stable,
            "breakdown": self.breakdown,
        }


def indicators(strategy: ParallelStrategy, model: ModelHyperparams,
               workload: WorkloadSpec, cluster: ClusterConfig,
               calib: CalibrationCoefficients) -> CostEstimate:
    """TTFT, ITL and throughput for a strategy.

    TTFT = W_q + svc(prefill, s = input_len); ITL = svc(decode, s = 1);
    theta = (L_in + L_out) / (W_q + svc_prefill + L_out * svc_decode).
    Queue saturation marks the estimate unstable instead of raising.
    """
    prefill_terms = comm_terms(strategy, model, workload, cluster, calib,
                               workload.input_len)
    decode_terms = comm_terms(strategy, model, workload, cluster, calib, 1)
    svc_prefill = svc_latency(strategy, model, workload, cluster, calib,
                              workload.input_len)
    svc_decode = svc_latency(strategy, model, workload, cluster, calib, 1)
    tau = compute_latency(strategy, model, workload, calib, 1)
    lam = sum(t["seconds"] for t in decode_terms)
    p2p = _p2p_term(strategy, model, workload, cluster, calib, 1)

    stable = True
    try:
        w_q = queuing_delay(workload.arrival_rate, svc_decode)
    except SaturationError:
        stable = False
        w_q = UNSTABLE
    ttft = w_q + svc_prefill
    l_in, l_out = workload.input_len, workload.output_len
    if stable:
        theta = (l_in + l_out) / (w_q + svc_prefill + l_out * svc_decode)
    else:
        theta = 0.0
    breakdown = {
        "comm_prefill": prefill_terms,
        "comm_decode": decode_terms,
        "ar_literal": calib.ar_literal,
        "tau_literal": calib.tau_literal,
    }
    return CostEstimate(tau, lam, p2p, svc_prefill, svc_decode, w_q, ttft,
                        svc_decode, theta, stable, breakdown)


def lambda_ep_terms(model: ModelHyperparams, workload: WorkloadSpec,
                    cluster: ClusterConfig,
                    calib: CalibrationCoefficients | None = None) -> list[dict]:
    """Per-layer communication of the pure-EP baseline layout.

    TP = n_proc intra for attention, EP = n_node * n_proc for the MoE block:
    AR(b*s*h, n_proc) on the intra link plus two A2A(b*s*h*k, n_node) on the
    inter link.
    """
    calib = calib or CalibrationCoefficients()
    intra, inter = links(cluster, calib)
    b, s = workload.batch_size, workload.seq_len
    h, k, bpe = model.hidden_dim, model.top_k, model.bytes_per_element
    ar_size = b * s * h * bpe
    a2a_size = b * s * h * k * bpe
    terms = [{
        "op": "ar", "scope": "intra", "size_bytes": ar_size,
        "degree": cluster.n_proc,
        "seconds": ar_cost(ar_size, cluster.n_proc, intra, literal=calib.ar_literal),
    }]
    for phase in ("dispatch", "combine"):
        terms.append({
            "op": "a2a", "block": phase, "scope": "inter", "size_bytes": a2a_size,
            "degree": cluster.n_node,
            "seconds": a2a_cost(a2a_size, cluster.n_node, inter),
        })
    return terms


def lambda_ep_baseline(model: ModelHyperparams, workload: WorkloadSpec,
                       cluster: ClusterConfig,
                       calib: CalibrationCoefficients | None = None) -> float:
    return sum(t["seconds"] for t in lambda_ep_terms(model, workload, cluster, calib))


def lambda_mix_terms(model: ModelHyperparams, workload: WorkloadSpec,
                     cluster: ClusterConfig,
                     calib: CalibrationCoefficients | None = None) -> list[dict]:
    """Per-layer communication of the hybrid intra-TP / inter-EP layout.

    The TP sharding cuts the per-unit A2A volume by n_proc at the price of an
    extra intra-node AG: AR(b*s*h, n_proc) + AG(b*s*h*k/n_proc, n_proc) +
    2 * A2A(b*s*h*k/n_proc, n_node).
    """
    calib = calib or CalibrationCoefficients()
    intra, inter = links(cluster, calib)
    b, s = workload.batch_size, workload.seq_len
    h, k, bpe = model.hidden_dim, model.top_k, model.bytes_per_element
    ar_size = b * s * h * bpe
    shard_size = b * s * h * k * bpe / cluster.n_proc
    terms = [
        {
            "op": "ar", "scope": "intra", "size_bytes": ar_size,
            "degree": cluster.n_proc,
            "seconds": ar_cost(ar_size, cluster.n_proc, intra, literal=calib.ar_literal),
        },
        {
            "op": "ag", "scope": "intra", "size_bytes": shard_size,
            "degree": cluster.n_proc,
            "seconds": ag_cost(shard_size, cluster.n_proc, intra),
        },
    ]
    for phase in ("dispatch", "combine"):
        terms.append({
            "op": "a2a", "block": phase, "scope": "inter", "size_bytes": shard_size,
            "degree": cluster.n_node,
            "seconds": a2a_cost(shard_size, cluster.n_node, inter),
        })
    return terms


def lambda_mix(model: ModelHyperparams, workload: WorkloadSpec,
               cluster: ClusterConfig,
               calib: CalibrationCoefficients | None = None) -> float:
    return sum(t["seconds"] for t in lambda_mix_terms(model, workload, cluster, calib))
