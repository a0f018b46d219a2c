"""Deterministic in-process simulation of the hybrid TP-EP MoE block.

The simulated cluster has ``n`` nodes of ``m`` devices; rank numbering is
node-major (rank r lives on node r // m with TP rank r mod m). The TP
dimension is intra-node, the EP dimension inter-node, experts are spread
contiguously over nodes, and expert MLPs are TP-sharded so each rank holds a
partial output that must be reduced.

Two fused algorithms move tokens between the dimensions:

* AG-Dispatch: each rank routes its hidden-dimension shard, exchanges the
  remote shards pairwise across nodes (n-1 rounds), and reassembles full
  rows by intra-node all-gather (n-1 rounds; the locally-destined block
  needs no communication because the input is replicated in the TP group).
* RS-Combine: per destination node the TP group reduce-scatters its partial
  outputs (n invocations), ships the reduced shard pairwise across nodes
  (n-1 rounds), accumulates top-k-weighted contributions, and finishes with
  one intra-node all-gather.

All arithmetic is float64 with rank-ascending reduction order, so any
difference against the dense oracle comes from association order alone.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, StrategyError, VerificationError

FLOAT_BYTES = 8


# ---------------------------------------------------------------------------
# cluster and trace plumbing


@dataclass
class SimRank:
    global_rank: int
    node: int
    tp_rank: int
    inbox: dict = field(default_factory=dict)  # (src_rank, tag) -> payload


@dataclass
class SimCluster:
    n_node: int
    n_proc: int
    ranks: list[SimRank]

    @property
    def world_size(self) -> int:
        return self.n_node * self.n_proc

    def rank(self, r: int) -> SimRank:
        return self.ranks[r]


def build_cluster(n_node: int, n_proc: int) -> SimCluster:
    if n_node < 1 or n_proc < 1:
        raise StrategyError("cluster needs at least one node and one device")
    ranks = [SimRank(r, r // n_proc, r % n_proc) for r in range(n_node * n_proc)]
    return SimCluster(n_node, n_proc, ranks)


@dataclass(frozen=True)
class TraceEvent:
    event_id: int
    rank: int
    op: str  # isend|irecv|reduce_scatter|all_gather|local_reduce|expert_compute|route
    peer_or_group: str
    bytes: int
    round: int
    dep_ids: tuple[int, ...]
    scope: str  # intra|inter|compute
    group_size: int = 1
    work: float = 0.0


class Trace:
    """Append-only event log with sequential deterministic ids."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def add(self, rank: int, op: str, peer_or_group: str, nbytes: int,
            round_: int, deps: tuple[int, ...], scope: str,
            group_size: int = 1, work: float = 0.0) -> int:
        ev = TraceEvent(len(self.events), rank, op, peer_or_group, int(nbytes),
                        round_, tuple(deps), scope, group_size, work)
        self.events.append(ev)
        return ev.event_id


TRACE_CSV_HEADER = ["event_id", "rank", "op", "peer_or_group", "bytes",
                    "round", "dep_ids", "scope", "group_size", "work"]


def trace_to_csv(events: list[TraceEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_CSV_HEADER)
    for ev in events:
        writer.writerow([
            ev.event_id, ev.rank, ev.op, ev.peer_or_group, ev.bytes, ev.round,
            ";".join(str(d) for d in ev.dep_ids), ev.scope, ev.group_size,
            repr(ev.work),
        ])
    return buf.getvalue()


def trace_from_csv(text: str) -> list[TraceEvent]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != TRACE_CSV_HEADER:
        raise ValueError(f"unexpected trace header: {header}")
    events = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            deps = tuple(int(d) for d in row[6].split(";") if d != "")
            events.append(TraceEvent(int(row[0]), int(row[1]), row[2], row[3],
                                     int(row[4]), int(row[5]), deps, row[7],
                                     int(row[8]), float(row[9])))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed trace row at line {lineno}: {row}") from exc
    return events


def save_trace(events: list[TraceEvent], path: str | Path) -> None:
    Path(path).write_text(trace_to_csv(events))


# ---------------------------------------------------------------------------
# routing and experts


@dataclass(frozen=True)
class RouterSpec:
    """Deterministic top-k routing: per token an ordered expert-id tuple and
    matching weights. Never random at run time; randomness enters only via
    seeded generators."""

    num_experts: int
    expert_ids: tuple[tuple[int, ...], ...]
    weights: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.expert_ids) != len(self.weights):
            raise ValueError("expert_ids and weights must align per token")
        for t, (ids, ws) in enumerate(zip(self.expert_ids, self.weights)):
            if len(ids) != len(ws):
                raise ValueError(f"token {t}: ids and weights length mismatch")
            if len(set(ids)) != len(ids):
                raise ValueError(f"token {t}: duplicate expert id")
            if any(e < 0 or e >= self.num_experts for e in ids):
                raise ValueError(f"token {t}: expert id out of range")

    @property
    def num_tokens(self) -> int:
        return len(self.expert_ids)

    @classmethod
    def round_robin(cls, num_tokens: int, num_experts: int, k: int) -> "RouterSpec":
        ids = tuple(tuple((t + i) % num_experts for i in range(k))
                    for t in range(num_tokens))
        w = tuple(tuple(1.0 / k for _ in range(k)) for _ in range(num_tokens))
        return cls(num_experts, ids, w)

    @classmethod
    def random(cls, num_tokens: int, num_experts: int, k: int,
               seed: int) -> "RouterSpec":
        rng = np.random.default_rng(seed)
        ids, ws = [], []
        for _ in range(num_tokens):
            chosen = sorted(int(e) for e in rng.choice(num_experts, size=k, replace=False))
            raw = rng.uniform(0.1, 1.0, size=k)
            raw = raw / raw.sum()
            ids.append(tuple(chosen))
            ws.append(tuple(float(w) for w in raw))
        return cls(num_experts, tuple(ids), tuple(ws))


@dataclass(frozen=True)
class ExpertSpec:
    """Per-expert affine transform x -> scale*x + bias; distinct defaults so
    both scaling and bias misroutes are detectable."""

    scales: tuple[float, ...]
    biases: tuple[float, ...]

    @classmethod
    def default(cls, num_experts: int) -> "ExpertSpec":
        return cls(tuple(float(e + 1) for e in range(num_experts)),
                   tuple(float(e) for e in range(num_experts)))

    @property
    def num_experts(self) -> int:
        return len(self.scales)

    def apply(self, e: int, x: np.ndarray) -> np.ndarray:
        return self.scales[e] * x + self.biases[e]


def expert_home_node(expert: int, n_node: int, num_experts: int) -> int:
    """Contiguous block placement of experts over nodes."""
    return expert * n_node // num_experts


@dataclass(frozen=True)
class Slot:
    """One routed (token, expert) pair."""

    token: int
    expert: int
    weight: float
    src_node: int
    host_node: int


@dataclass(frozen=True)
class RoutingTable:
    n_node: int
    tokens_per_node: int
    slots_by_host: tuple[tuple[Slot, ...], ...]

    def total_slots(self) -> int:
        return sum(len(s) for s in self.slots_by_host)


def build_routing_table(router: RouterSpec, n_node: int,
                        tokens_per_node: int) -> RoutingTable:
    if router.num_tokens != n_node * tokens_per_node:
        raise StrategyError(
            f"router covers {router.num_tokens} tokens, cluster carries "
            f"{n_node * tokens_per_node}"
        )
    hosts: list[list[Slot]] = [[] for _ in range(n_node)]
    for token in range(router.num_tokens):
        src = token // tokens_per_node
        for expert, weight in zip(router.expert_ids[token], router.weights[token]):
            host = expert_home_node(expert, n_node, router.num_experts)
            hosts[host].append(Slot(token, expert, weight, src, host))
    for h in hosts:
        h.sort(key=lambda s: (s.token, s.expert))
    return RoutingTable(n_node, tokens_per_node, tuple(tuple(h) for h in hosts))


# ---------------------------------------------------------------------------
# reference collectives (mathematically standard semantics, fixed order)


def _consistent_shapes(tensors: list[np.ndarray]) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise StrategyError(f"group members supplied mismatched shapes: {sorted(shapes)}")


def ref_reduce_scatter(tensors: list[np.ndarray], axis: int = -1) -> list[np.ndarray]:
    """Sum in rank-ascending order, then hand shard i of the split to rank i."""
    _consistent_shapes(tensors)
    total = tensors[0].copy()
    for t in tensors[1:]:
        total = total + t
    return [s.copy() for s in np.array_split(total, len(tensors), axis=axis)]


def ref_all_gather(shards: list[np.ndarray], axis: int = -1) -> list[np.ndarray]:
    full = np.concatenate(shards, axis=axis)
    return [full.copy() for _ in shards]


def ref_all_reduce(tensors: list[np.ndarray], axis: int = -1) -> list[np.ndarray]:
    return ref_all_gather(ref_reduce_scatter(tensors, axis), axis)


def ref_all_to_all_pairwise(buffers: list[list[np.ndarray]]) -> list[list[np.ndarray]]:
    """Pairwise exchange: rank r talks to (r +/- i) mod size in round i.

    ``buffers[i][j]`` is what rank i holds for rank j; the result transposes
    that layout in exactly size-1 rounds plus the local copy.
    """
    size = len(buffers)
    for row in buffers:
        if len(row) != size:
            raise StrategyError("each rank must supply one buffer per peer")
    out: list[list] = [[None] * size for _ in range(size)]
    for r in range(size):
        out[r][r] = buffers[r][r].copy()
    for i in range(1, size):
        for r in range(size):
            peer = (r + i) % size
            out[peer][r] = buffers[r][peer].copy()
    return [list(row) for row in out]


def moe_oracle(x: np.ndarray, router: RouterSpec, experts: ExpertSpec) -> np.ndarray:
    """Dense single-device reference: y[t] = sum over the token's top-k
    experts (ascending id) of weight * expert(x[t])."""
    y = np.zeros_like(x, dtype=np.float64)
    for t in range(x.shape[0]):
        pairs = sorted(zip(router.expert_ids[t], router.weights[t]))
        for e, w in pairs:
            y[t] += w * experts.apply(e, x[t])
    return y


# ---------------------------------------------------------------------------
# fused algorithms


def _col_slices(h: int, m: int) -> list[slice]:
    bounds = [len(chunk) for chunk in np.array_split(np.arange(h), m)]
    slices, start = [], 0
    for width in bounds:
        slices.append(slice(start, start + width))
        start += width
    return slices


def _slot_rows_from(slots: tuple[Slot, ...], src_node: int) -> list[int]:
    return [i for i, s in enumerate(slots) if s.src_node == src_node]


def fused_ag_dispatch(cluster: SimCluster, x_per_node: list[np.ndarray],
                      router: RouterSpec, capacity: int | None = None,
                      trace: Trace | None = None):
    """Fused all-gather + dispatch.

    Returns ``(received, table, trace)`` where ``received[d]`` holds the
    full-width rows for every slot hosted on node d, in slot-table order.
    """
    m, n = cluster.n_proc, cluster.n_node
    tokens_per_node = x_per_node[0].shape[0]
    h = x_per_node[0].shape[1]
    for j, x in enumerate(x_per_node):
        if x.shape != (tokens_per_node, h):
            raise StrategyError(f"node {j}: input shape {x.shape} mismatches "
                                f"{(tokens_per_node, h)}")
    table = build_routing_table(router, n, tokens_per_node)
    if capacity is not None:
        for d, slots in enumerate(table.slots_by_host):
            if len(slots) > capacity:
                raise CapacityError(
                    f"node {d} receives {len(slots)} routed slots, capacity {capacity}"
                )
    trace = trace or Trace()
    cols = _col_slices(h, m)

    route_ids = {}
    for r in range(cluster.world_size):
        route_ids[r] = trace.add(r, "route", "local", 0, 0, (), "compute",
                                 work=float(tokens_per_node))

    # Inter-node pairwise rounds; round-major emission so irecv deps exist.
    isend_ids: dict[tuple[int, int], int] = {}
    irecv_ids: dict[tuple[int, int], int] = {}
    for i in range(1, n):
        for r in range(cluster.world_size):
            node, t = r // m, r % m
            dest = (node + i) % n
            rows = _slot_rows_from(table.slots_by_host[dest], node)
            width = cols[t].stop - cols[t].start
            nbytes = len(rows) * width * FLOAT_BYTES
            peer = (r + i * m) % (m * n)
            isend_ids[(r, i)] = trace.add(r, "isend", f"rank:{peer}", nbytes, i,
                                          (route_ids[r],), "inter")
        for r in range(cluster.world_size):
            node, t = r // m, r % m
            src_rank = (r - i * m) % (m * n)
            src_node = (node - i) % n
            rows = _slot_rows_from(table.slots_by_host[node], src_node)
            width = cols[t].stop - cols[t].start
            nbytes = len(rows) * width * FLOAT_BYTES
            irecv_ids[(r, i)] = trace.add(r, "irecv", f"rank:{src_rank}", nbytes,
                                          i, (isend_ids[(src_rank, i)],), "inter")

    # Intra-node all-gather per remote source block; the locally-destined
    # block skips communication (input replicated across the TP group).
    for i in range(1, n):
        for r in range(cluster.world_size):
            node, t = r // m, r % m
            src_node = (node - i) % n
            rows = _slot_rows_from(table.slots_by_host[node], src_node)
            gathered = len(rows) * h * FLOAT_BYTES
            deps = tuple(irecv_ids[(node * m + tt, i)] for tt in range(m))
            trace.add(r, "all_gather", f"tp:node{node}", gathered // m if m > 1 else 0,
                      i, deps, "intra", group_size=m)

    # Values: reassemble each host's slots from per-sender column shards.
    received = []
    for d, slots in enumerate(table.slots_by_host):
        out = np.zeros((len(slots), h), dtype=np.float64)
        for src in range(n):
            rows = _slot_rows_from(slots, src)
            if not rows:
                continue
            local_tokens = [slots[i].token - src * tokens_per_node for i in rows]
            shards = [x_per_node[src][local_tokens, :][:, cols[t]] for t in range(m)]
            out[rows, :] = np.concatenate(shards, axis=1)
        received.append(out)
    return received, table, trace


def fused_rs_combine(cluster: SimCluster, partials: list[list[np.ndarray]],
                     table: RoutingTable, trace: Trace | None = None,
                     compute_deps: dict[int, tuple[int, ...]] | None = None):
    """Fused reduce-scatter + combine.

    ``partials[d][t]`` is TP rank t's partial expert output on node d, one
    row per hosted slot. Returns ``(y_per_node, trace)`` with ``y_per_node[j]``
    the weighted combine result for node j's own tokens.
    """
    m, n = cluster.n_proc, cluster.n_node
    h = partials[0][0].shape[1]
    for d in range(n):
        if len(partials[d]) != m:
            raise StrategyError(f"node {d}: expected {m} TP partials")
        for t in range(m):
            expect = (len(table.slots_by_host[d]), h)
            if partials[d][t].shape != expect:
                raise StrategyError(
                    f"node {d} rank {t}: partial shape {partials[d][t].shape} "
                    f"mismatches {expect}")
    trace = trace or Trace()
    compute_deps = compute_deps or {}
    cols = _col_slices(h, m)
    T = table.tokens_per_node

    # Fully reduced outputs per host node, rank-ascending order.
    reduced = []
    for d in range(n):
        total = partials[d][0].copy()
        for t in range(1, m):
            total = total + partials[d][t]
        reduced.append(total)

    rs_ids: dict[tuple[int, int], int] = {}
    isend_ids: dict[tuple[int, int], int] = {}
    irecv_ids: dict[tuple[int, int], int] = {}
    reduce_ids: dict[int, list[int]] = {r: [] for r in range(cluster.world_size)}

    for i in range(1, n):
        for r in range(cluster.world_size):
            node, t = r // m, r % m
            dest = (node + i) % n
            rows = _slot_rows_from(table.slots_by_host[node], dest)
            block_bytes = len(rows) * h * FLOAT_BYTES
            deps = compute_deps.get(r, ())
            rs_ids[(r, i)] = trace.add(r, "reduce_scatter", f"tp:node{node}",
                                       block_bytes // m if m > 1 else 0, i,
                                       deps, "intra", group_size=m)
        for r in range(cluster.world_size):
            node, t = r // m, r % m
            dest = (node + i) % n
            rows = _slot_rows_from(table.slots_by_host[node], dest)
            width = cols[t].stop - cols[t].start
            peer = (r + i * m) % (m * n)
            isend_ids[(r, i)] = trace.add(r, "isend", f"rank:{peer}",
                                          len(rows) * width * FLOAT_BYTES, i,
                                          (rs_ids[(r, i)],), "inter")
        for r in range(cluster.world_size):
            node, t = r // m, r % m
            src_rank = (r - i * m) % (m * n)
            src_node = (node - i) % n
            rows = _slot_rows_from(table.slots_by_host[src_node], node)
            width = cols[t].stop - cols[t].start
            irecv_ids[(r, i)] = trace.add(r, "irecv", f"rank:{src_rank}",
                                          len(rows) * width * FLOAT_BYTES, i,
                                          (isend_ids[(src_rank, i)],), "inter")
        for r in range(cluster.world_size):
            node, t = r // m, r % m
            src_node = (node - i) % n
            rows = _slot_rows_from(table.slots_by_host[src_node], node)
            rid = trace.add(r, "local_reduce", "local", 0, i,
                            (irecv_ids[(r, i)],), "compute",
                            work=float(len(rows) * h / m))
            reduce_ids[r].append(rid)

    # Final round: the locally hosted block needs only the intra reduction.
    for r in range(cluster.world_size):
        node, t = r // m, r % m
        rows = _slot_rows_from(table.slots_by_host[node], node)
        block_bytes = len(rows) * h * FLOAT_BYTES
        deps = compute_deps.get(r, ())
        rs_ids[(r, n)] = trace.add(r, "reduce_scatter", f"tp:node{node}",
                                   block_bytes // m if m > 1 else 0, n, deps,
                                   "intra", group_size=m)
    for r in range(cluster.world_size):
        node, t = r // m, r % m
        rows = _slot_rows_from(table.slots_by_host[node], node)
        rid = trace.add(r, "local_reduce", "local", 0, n, (rs_ids[(r, n)],),
                        "compute", work=float(len(rows) * h / m))
        reduce_ids[r].append(rid)
    for r in range(cluster.world_size):
        node = r // m
        trace.add(r, "all_gather", f"tp:node{node}",
                  (T * h * FLOAT_BYTES) // m if m > 1 else 0, n,
                  tuple(reduce_ids[r]), "intra", group_size=m)

    # Values: accumulate weighted reduced shards column-shard-wise, hosts in
    # arrival order ((j-1), (j-2), ..., local last), then concatenate.
    y_per_node = []
    for j in range(n):
        y_shards = [np.zeros((T, cols[t].stop - cols[t].start), dtype=np.float64)
                    for t in range(m)]
        host_order = [(j - i) % n for i in range(1, n)] + [j]
        for d in host_order:
            slots = table.slots_by_host[d]
            for row in _slot_rows_from(slots, j):
                slot = slots[row]
                local_token = slot.token - j * T
                for t in range(m):
                    y_shards[t][local_token] += slot.weight * reduced[d][row, cols[t]]
        y_per_node.append(np.concatenate(y_shards, axis=1))
    return y_per_node, trace


# ---------------------------------------------------------------------------
# full MoE block


def _expert_rows(slots: tuple[Slot, ...]) -> list[tuple[int, list[int]]]:
    by_expert: dict[int, list[int]] = {}
    for i, s in enumerate(slots):
        by_expert.setdefault(s.expert, []).append(i)
    return sorted(by_expert.items())


def _partial_expert_outputs(cluster: SimCluster, received: list[np.ndarray],
                            table: RoutingTable, experts: ExpertSpec,
                            trace: Trace, ag_deps: dict[int, tuple[int, ...]]):
    """TP-sharded expert compute: rank t scales its column shard and takes a
    1/m share of the bias so the rank-sum equals the full affine output."""
    m, n = cluster.n_proc, cluster.n_node
    h = received[0].shape[1] if received else 0
    cols = _col_slices(h, m)
    partials = []
    compute_ids: dict[int, tuple[int, ...]] = {}
    for d in range(n):
        slots = table.slots_by_host[d]
        node_partials = []
        for t in range(m):
            r = d * m + t
            part = np.zeros((len(slots), h), dtype=np.float64)
            ids = []
            for e, rows in _expert_rows(slots):
                part[np.ix_(rows, range(cols[t].start, cols[t].stop))] = (
                    experts.scales[e] * received[d][rows, cols[t]])
                part[rows, :] += experts.biases[e] / m
                ids.append(trace.add(r, "expert_compute", f"expert:{e}", 0, 0,
                                     ag_deps.get(r, ()), "compute",
                                     work=float(len(rows) * h / m)))
            node_partials.append(part)
            compute_ids[r] = tuple(ids)
        partials.append(node_partials)
    return partials, compute_ids


def run_moe_block(cluster: SimCluster, x_global: np.ndarray, router: RouterSpec,
                  experts: ExpertSpec, mode: str = "fused",
                  capacity: int | None = None):
    """Dispatch, expert compute and combine over the whole simulated cluster.

    ``x_global`` rows are split evenly over nodes (the DP dimension). Returns
    ``(y_global, trace)``; in both modes ``y_global`` must match
    :func:`moe_oracle` within association-order tolerance.
    """
    n, m = cluster.n_node, cluster.n_proc
    if x_global.shape[0] % n != 0:
        raise StrategyError(
            f"{x_global.shape[0]} tokens do not split evenly over {n} nodes")
    T = x_global.shape[0] // n
    x_per_node = [np.asarray(x_global[j * T:(j + 1) * T, :], dtype=np.float64)
                  for j in range(n)]
    if mode == "fused":
        received, table, trace = fused_ag_dispatch(cluster, x_per_node, router,
                                                   capacity=capacity)
        ag_deps = {}
        for r in range(cluster.world_size):
            ag_deps[r] = tuple(ev.event_id for ev in trace.events
                               if ev.rank == r and ev.op in ("all_gather", "route"))
        partials, compute_ids = _partial_expert_outputs(cluster, received, table,
                                                        experts, trace, ag_deps)
        y_per_node, trace = fused_rs_combine(cluster, partials, table, trace,
                                             compute_deps=compute_ids)
        return np.concatenate(y_per_node, axis=0), trace
    if mode == "baseline":
        return _run_baseline(cluster, x_per_node, router, experts, capacity)
    raise ValueError(f"unknown mode {mode!r}")


def _run_baseline(cluster: SimCluster, x_per_node: list[np.ndarray],
                  router: RouterSpec, experts: ExpertSpec,
                  capacity: int | None):
    """Unfused reference: full-width pairwise dispatch, per-node expert
    compute, full-width pairwise combine, then a TP all-reduce (RS + AG)."""
    n, m = cluster.n_node, cluster.n_proc
    T = x_per_node[0].shape[0]
    h = x_per_node[0].shape[1]
    table = build_routing_table(router, n, T)
    if capacity is not None:
        for d, slots in enumerate(table.slots_by_host):
            if len(slots) > capacity:
                raise CapacityError(
                    f"node {d} receives {len(slots)} routed slots, capacity {capacity}"
                )
    trace = Trace()
    route_ids = {r: trace.add(r, "route", "local", 0, 0, (), "compute",
                              work=float(T)) for r in range(cluster.world_size)}

    def a2a_phase(phase_bytes, round_offset, deps_of):
        ids = {}
        for i in range(1, n):
            for r in range(cluster.world_size):
                node = r // m
                peer = (r + i * m) % (m * n)
                ids[(r, i, "s")] = trace.add(r, "isend", f"rank:{peer}",
                                             phase_bytes(node, (node + i) % n), i,
                                             deps_of(r), "inter")
            for r in range(cluster.world_size):
                node = r // m
                src_rank = (r - i * m) % (m * n)
                ids[(r, i, "r")] = trace.add(r, "irecv", f"rank:{src_rank}",
                                             phase_bytes((node - i) % n, node), i,
                                             (ids[(src_rank, i, "s")],), "inter")
        return ids

    def dispatch_bytes(src, dst):
        rows = _slot_rows_from(table.slots_by_host[dst], src)
        return len(rows) * h * FLOAT_BYTES

    disp = a2a_phase(dispatch_bytes, 0, lambda r: (route_ids[r],))
    disp_recv = {r: tuple(v for k, v in disp.items() if k[0] == r and k[2] == "r")
                 for r in range(cluster.world_size)}

    compute_ids = {}
    for d in range(n):
        slots = table.slots_by_host[d]
        for t in range(m):
            r = d * m + t
            ids = [trace.add(r, "expert_compute", f"expert:{e}", 0, 0,
                             disp_recv[r], "compute", work=float(len(rows) * h))
                   for e, rows in _expert_rows(slots)]
            compute_ids[r] = tuple(ids)

    def combine_bytes(src, dst):
        rows = _slot_rows_from(table.slots_by_host[src], dst)
        return len(rows) * h * FLOAT_BYTES

    comb = a2a_phase(combine_bytes, n, lambda r: compute_ids[r])
    comb_recv = {r: tuple(v for k, v in comb.items() if k[0] == r and k[2] == "r")
                 for r in range(cluster.world_size)}
    for r in range(cluster.world_size):
        node = r // m
        rs = trace.add(r, "reduce_scatter", f"tp:node{node}",
                       (T * h * FLOAT_BYTES) // m if m > 1 else 0, 0,
                       comb_recv[r], "intra", group_size=m)
        trace.add(r, "all_gather", f"tp:node{node}",
                  (T * h * FLOAT_BYTES) // m if m > 1 else 0, 0, (rs,), "intra",
                  group_size=m)

    # Values through an independent per-slot path.
    received = []
    for d, slots in enumerate(table.slots_by_host):
        rows = np.zeros((len(slots), h), dtype=np.float64)
        for i, slot in enumerate(slots):
            rows[i] = x_per_node[slot.src_node][slot.token - slot.src_node * T]
        received.append(rows)
    y_per_node = [np.zeros((T, h), dtype=np.float64) for _ in range(n)]
    for d, slots in enumerate(table.slots_by_host):
        for i, slot in enumerate(slots):
            y_per_node[slot.src_node][slot.token - slot.src_node * T] += (
                slot.weight * experts.apply(slot.expert, received[d][i]))
    return np.concatenate(y_per_node, axis=0), trace


def verify_against_oracle(y: np.ndarray, x_global: np.ndarray,
                          router: RouterSpec, experts: ExpertSpec,
                          rtol: float = 1e-9) -> float:
    """Max relative error vs the dense oracle; raises when above ``rtol``."""
    expected = moe_oracle(np.asarray(x_global, dtype=np.float64), router, experts)
    scale = np.maximum(np.abs(expected), 1.0)
    max_rel = float(np.max(np.abs(y - expected) / scale)) if expected.size else 0.0
    if max_rel > rtol:
        raise VerificationError(
            f"simulated output deviates from oracle: max relative error "
            f"{max_rel:.3e} > {rtol:g}")
    return max_rel
