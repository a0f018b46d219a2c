"""Parallel-strategy grammar: parsing, enumeration, memory feasibility.

A strategy assigns per-block parallelism to a decoder layer: the attention
block may combine TP and DP, the MoE block TP and EP, and PP splits layers
across stages. Strategy strings use the notation ``TP=4 + DP=8, EP=32
[PP=2]``: an attention spec, a comma, a MoE spec, and an optional PP suffix.
A single spec (``TP=8 [PP=4]``) applies to both blocks. In a two-part spec
the first factor is the intra-node one.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .config import ClusterConfig, ModelHyperparams, WorkloadSpec, is_power_of_two
from .errors import GrammarError, StrategyError

_ATTN_KINDS = ("TP", "DP")
_MOE_KINDS = ("TP", "EP")


@dataclass(frozen=True)
class BlockParallel:
    """One parallel factor of a block: kind, degree and (positional) scope."""

    kind: str
    degree: int
    scope: str = "flat"  # "intra" | "inter" | "flat"

    def __post_init__(self) -> None:
        if self.kind not in ("TP", "DP", "EP"):
            raise GrammarError(f"unknown parallel kind {self.kind!r}")
        if not is_power_of_two(self.degree):
            raise GrammarError(f"{self.kind}={self.degree}: degree must be a power of two")
        if self.scope not in ("intra", "inter", "flat"):
            raise GrammarError(f"unknown scope {self.scope!r}")


@dataclass(frozen=True)
class ParallelStrategy:
    attention: tuple[BlockParallel, ...]
    moe: tuple[BlockParallel, ...]
    d_pp: int = 1

    def __post_init__(self) -> None:
        if not self.attention or not self.moe:
            raise GrammarError("both attention and MoE blocks need a parallel spec")
        if len(self.attention) > 2 or len(self.moe) > 2:
            raise GrammarError("a block takes at most two parallel factors")
        for part in self.attention:
            if part.kind not in _ATTN_KINDS:
                raise GrammarError(f"{part.kind} is not allowed in the attention block")
        for part in self.moe:
            if part.kind not in _MOE_KINDS:
                raise GrammarError(f"{part.kind} is not allowed in the MoE block")
        for block in (self.attention, self.moe):
            kinds = [p.kind for p in block]
            if len(set(kinds)) != len(kinds):
                raise GrammarError(f"duplicate parallel kind in block: {kinds}")
        if not is_power_of_two(self.d_pp):
            raise GrammarError(f"PP={self.d_pp}: degree must be a power of two")
        if self._degree("attention") != self._degree("moe"):
            raise GrammarError(
                "attention and MoE degree products differ: "
                f"{self._degree('attention')} vs {self._degree('moe')}"
            )

    def _degree(self, block: str) -> int:
        parts = self.attention if block == "attention" else self.moe
        prod = 1
        for p in parts:
            prod *= p.degree
        return prod

    def _kind_degree(self, block: tuple[BlockParallel, ...], kind: str) -> int:
        for p in block:
            if p.kind == kind:
                return p.degree
        return 1

    @property
    def attn_tp(self) -> int:
        return self._kind_degree(self.attention, "TP")

    @property
    def attn_dp(self) -> int:
        return self._kind_degree(self.attention, "DP")

    @property
    def moe_tp(self) -> int:
        return self._kind_degree(self.moe, "TP")

    @property
    def moe_ep(self) -> int:
        return self._kind_degree(self.moe, "EP")

    # Symbols of the analytic formulas: d_TP/d_EP are the MoE block degrees,
    # d_DP the attention DP degree.
    @property
    def d_tp(self) -> int:
        return self.moe_tp

    @property
    def d_ep(self) -> int:
        return self.moe_ep

    @property
    def d_dp(self) -> int:
        return self.attn_dp

    @property
    def devices_per_stage(self) -> int:
        return self._degree("attention")

    @property
    def total_devices(self) -> int:
        return self.devices_per_stage * self.d_pp

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.d_pp, self.d_tp, self.d_ep, self.d_dp)


def make_strategy(attn: list[tuple[str, int]], moe: list[tuple[str, int]],
                  d_pp: int = 1) -> ParallelStrategy:
    """Build a canonical strategy: degree-1 factors dropped, scopes positional."""

    def canonical(parts: list[tuple[str, int]], order: tuple[str, str]) -> tuple[BlockParallel, ...]:
        kept = sorted((p for p in parts if p[1] > 1), key=lambda p: order.index(p[0]))
        if not kept:
            kept = [("TP", 1)]
        if len(kept) == 1:
            return (BlockParallel(kept[0][0], kept[0][1], "flat"),)
        return (BlockParallel(kept[0][0], kept[0][1], "intra"),
                BlockParallel(kept[1][0], kept[1][1], "inter"))

    return ParallelStrategy(canonical(attn, _ATTN_KINDS), canonical(moe, _MOE_KINDS), d_pp)


_PART_RE = re.compile(r"^(TP|DP|EP)\s*=\s*(\d+)$")
_PP_RE = re.compile(r"\[\s*PP\s*=\s*(\d+)\s*\]\s*$")


def parse_strategy(text: str) -> ParallelStrategy:
    """Parse a strategy string into a validated :class:`ParallelStrategy`."""
    body = text.strip()
    if not body:
        raise GrammarError("empty strategy string")
    d_pp = 1
    pp_match = _PP_RE.search(body)
    if pp_match:
        d_pp = int(pp_match.group(1))
        body = body[: pp_match.start()].strip()

    specs = [s.strip() for s in body.split(",")]
    if len(specs) not in (1, 2) or any(not s for s in specs):
        raise GrammarError(f"expected '<attn-spec>, <moe-spec>', got {text!r}")

    def parse_spec(spec: str) -> list[tuple[str, int]]:
        parts = []
        for chunk in spec.split("+"):
            m = _PART_RE.match(chunk.strip())
            if not m:
                raise GrammarError(f"cannot parse parallel factor {chunk.strip()!r}")
            kind, degree = m.group(1), int(m.group(2))
            if not is_power_of_two(degree):
                raise GrammarError(f"{kind}={degree}: degree must be a power of two")
            parts.append((kind, degree))
        if len(parts) > 2:
            raise GrammarError(f"at most two parallel factors per block: {spec!r}")
        return parts

    attn = parse_spec(specs[0])
    if len(specs) == 2:
        moe = parse_spec(specs[1])
    else:
        # Single-spec form (pure TP+PP baselines): the spec applies to both
        # blocks, so only TP factors are meaningful there.
        if any(kind != "TP" for kind, _ in attn):
            raise GrammarError(
                "single-spec form applies to both blocks and must be TP-only"
            )
        moe = list(attn)

    for kind, degree in attn:
        if kind == "EP":
            raise GrammarError("EP is not allowed in the attention block")
    for kind, degree in moe:
        if kind == "DP":
            raise GrammarError("DP is not allowed in the MoE block")
    return make_strategy(attn, moe, d_pp)


def format_strategy(strategy: ParallelStrategy) -> str:
    """Canonical formatter; inverse of :func:`parse_strategy` on its output."""

    def fmt_block(parts: tuple[BlockParallel, ...]) -> str:
        return " + ".join(f"{p.kind}={p.degree}" for p in parts)

    text = f"{fmt_block(strategy.attention)}, {fmt_block(strategy.moe)}"
    if strategy.d_pp > 1:
        text += f" [PP={strategy.d_pp}]"
    return text


def validate_against_cluster(strategy: ParallelStrategy, cluster: ClusterConfig) -> None:
    if strategy.total_devices != cluster.total_devices:
        raise StrategyError(
            f"strategy uses {strategy.total_devices} devices but the cluster "
            f"has {cluster.total_devices}"
        )


def _pow2_divisors(n: int) -> list[int]:
    return [d for d in (2 ** i for i in range(n.bit_length())) if n % d == 0]


def enumerate_strategies(cluster: ClusterConfig,
                         model: ModelHyperparams) -> list[ParallelStrategy]:
    """All grammar-legal strategies for the cluster, deterministically ordered.

    Degrees are powers of two; per-block degree products equal
    ``total_devices / d_pp``; ``d_pp`` must divide the layer count (the KV
    term of the memory bound assumes an exact layer split).
    """
    total = cluster.total_devices
    out = []
    for d_pp in _pow2_divisors(total):
        if model.num_layers % d_pp != 0:
            continue
        stage = total // d_pp
        for moe_tp in _pow2_divisors(stage):
            moe_ep = stage // moe_tp
            for attn_tp in _pow2_divisors(stage):
                attn_dp = stage // attn_tp
                out.append(make_strategy(
                    [("TP", attn_tp), ("DP", attn_dp)],
                    [("TP", moe_tp), ("EP", moe_ep)],
                    d_pp,
                ))
    out.sort(key=lambda s: (s.sort_key(), s.attn_tp))
    return out


@dataclass(frozen=True)
class MemoryCheck:
    feasible: bool
    required_bytes: float


def check_memory(strategy: ParallelStrategy, model: ModelHyperparams,
                 cluster: ClusterConfig, workload: WorkloadSpec) -> MemoryCheck:
    """Per-device memory demand: sharded weights plus the KV cache.

    required = bytes_per_element * [psi_attn / attn_tp
                                    + psi_moe / (d_EP * d_TP)
                                    + 2 * b * s * h * l / d_PP]

    Feasible iff strictly below the device memory.
    """
    kv_elements = (2 * workload.batch_size * workload.seq_len * model.hidden_dim
                   * model.num_layers / strategy.d_pp)
    elements = (model.psi_attn / strategy.attn_tp
                + model.psi_moe / (strategy.moe_ep * strategy.moe_tp)
                + kv_elements)
    required = model.bytes_per_element * elements
    return MemoryCheck(required < cluster.mem_per_device, required)


@dataclass(frozen=True)
class DpEpCase:
    """Layout of the attention-DP / MoE-EP junction for A2A communication."""

    case: str  # "equal" | "dp_greater" | "dp_less"
    num_parallel_groups: int
    group_size: int
    redundancy_factor: float

    def __post_init__(self) -> None:
        assert self.redundancy_factor >= 1


def classify_dp_ep(strategy: ParallelStrategy) -> DpEpCase:
    """Classify the DP-EP relation into its three group layouts."""
    d_dp, d_ep = strategy.d_dp, strategy.d_ep
    if d_dp % d_ep != 0 and d_ep % d_dp != 0:
        raise StrategyError(
            f"d_DP={d_dp} and d_EP={d_ep} are not multiples of one another; "
            "equal A2A groups cannot be formed"
        )
    if d_dp == d_ep:
        return DpEpCase("equal", 1, d_ep, 1.0)
    if d_dp > d_ep:
        return DpEpCase("dp_greater", d_dp // d_ep, d_ep, 1.0)
    return DpEpCase("dp_less", d_ep // d_dp, d_dp, d_ep / d_dp)
