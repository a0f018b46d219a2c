"""Wall-clock scheduling of simulated traces.

Each rank owns three resource lanes (intra-node link, inter-node link,
compute) that can run concurrently; events on one lane serialize. A trace is
list-scheduled onto the lanes under the latency-bandwidth link model, giving
makespans, Gantt exports, and fused-versus-synchronous overlap metrics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .config import CalibrationCoefficients, ClusterConfig
from .costmodel import links
from .errors import SchedulingError
from .simcluster import TraceEvent

_LANE_OF_SCOPE = {"intra": "intra", "inter": "inter", "compute": "compute"}


@dataclass(frozen=True)
class ScheduledEvent:
    event: TraceEvent
    lane: tuple[int, str]  # (rank, lane name)
    start: float
    end: float


@dataclass(frozen=True)
class ResourceLane:
    lane: tuple[int, str]
    intervals: tuple[tuple[float, float], ...]  # sorted, disjoint

    def busy_time(self) -> float:
        return sum(e - s for s, e in self.intervals)


@dataclass(frozen=True)
class Timeline:
    events: tuple[ScheduledEvent, ...]  # ordered by event id
    lanes: tuple[ResourceLane, ...]
    makespan: float

    def lane_busy(self) -> dict[tuple[int, str], float]:
        return {lane.lane: lane.busy_time() for lane in self.lanes}

    def utilization(self) -> dict[tuple[int, str], float]:
        if self.makespan <= 0:
            return {lane.lane: 0.0 for lane in self.lanes}
        return {lane.lane: lane.busy_time() / self.makespan for lane in self.lanes}


def event_duration(ev: TraceEvent, cluster: ClusterConfig,
                   calib: CalibrationCoefficients) -> float:
    if ev.scope == "compute":
        coeff = calib.compute_coeff
        if coeff is None:
            coeff = 1.0 / cluster.compute_rate
        return coeff * ev.work
    intra, inter = links(cluster, calib)
    link = intra if ev.scope == "intra" else inter
    if ev.bytes == 0 and ev.work == 0.0 and ev.group_size <= 1:
        return 0.0
    return link.alpha + ev.bytes / link.beta


def _find_cycle(events: list[TraceEvent]) -> list[int]:
    by_id = {ev.event_id: ev for ev in events}
    color: dict[int, int] = {}
    stack: list[int] = []

    def visit(eid: int) -> list[int] | None:
        color[eid] = 1
        stack.append(eid)
        for dep in by_id[eid].dep_ids:
            if dep not in by_id:
                raise SchedulingError(f"event {eid} depends on unknown event {dep}")
            if color.get(dep) == 1:
                return stack[stack.index(dep):] + [dep]
            if color.get(dep, 0) == 0:
                found = visit(dep)
                if found:
                    return found
        color[eid] = 2
        stack.pop()
        return None

    for ev in events:
        if color.get(ev.event_id, 0) == 0:
            found = visit(ev.event_id)
            if found:
                return found
    return []


def schedule(trace: list[TraceEvent], cluster: ClusterConfig,
             calib: CalibrationCoefficients | None = None) -> Timeline:
    """List-schedule a trace: FIFO per lane by ready time, event-id tie-break.

    Events become eligible once every dependency has finished; an eligible
    event starts at max(ready time, lane free time).
    """
    calib = calib or CalibrationCoefficients()
    cycle = _find_cycle(list(trace))
    if cycle:
        raise SchedulingError(
            "dependency cycle: " + " -> ".join(str(c) for c in cycle))

    by_id = {ev.event_id: ev for ev in trace}
    remaining = {ev.event_id: len(ev.dep_ids) for ev in trace}
    dependents: dict[int, list[int]] = {ev.event_id: [] for ev in trace}
    for ev in trace:
        for dep in ev.dep_ids:
            dependents[dep].append(ev.event_id)

    import heapq

    ready_heap: list[tuple[float, int]] = []
    for ev in trace:
        if remaining[ev.event_id] == 0:
            heapq.heappush(ready_heap, (0.0, ev.event_id))

    lane_free: dict[tuple[int, str], float] = {}
    lane_intervals: dict[tuple[int, str], list[tuple[float, float]]] = {}
    ends: dict[int, float] = {}
    scheduled: dict[int, ScheduledEvent] = {}
    while ready_heap:
        ready, eid = heapq.heappop(ready_heap)
        ev = by_id[eid]
        lane = (ev.rank, _LANE_OF_SCOPE[ev.scope])
        start = max(ready, lane_free.get(lane, 0.0))
        end = start + event_duration(ev, cluster, calib)
        lane_free[lane] = end
        lane_intervals.setdefault(lane, []).append((start, end))
        ends[eid] = end
        scheduled[eid] = ScheduledEvent(ev, lane, start, end)
        for nxt in dependents[eid]:
            remaining[nxt] -= 1
            if remaining[nxt] == 0:
                nxt_ready = max(ends[d] for d in by_id[nxt].dep_ids)
                heapq.heappush(ready_heap, (nxt_ready, nxt))

    lanes = tuple(ResourceLane(lane, tuple(lane_intervals[lane]))
                  for lane in sorted(lane_intervals))
    ordered = tuple(scheduled[ev.event_id] for ev in trace)
    makespan = max((s.end for s in ordered), default=0.0)
    return Timeline(ordered, lanes, makespan)


def make_sync_trace(trace: list[TraceEvent]) -> list[TraceEvent]:
    """Synchronous variant of a trace: a global barrier after every
    dependency-depth level, so phases cannot overlap across ranks."""
    depth: dict[int, int] = {}
    for ev in trace:  # trace ids are topologically consistent (deps precede)
        depth[ev.event_id] = 1 + max((depth[d] for d in ev.dep_ids), default=-1)
    by_level: dict[int, list[int]] = {}
    for eid, lvl in depth.items():
        by_level.setdefault(lvl, []).append(eid)
    out = []
    for ev in trace:
        lvl = depth[ev.event_id]
        deps = tuple(sorted(set(ev.dep_ids) | set(by_level.get(lvl - 1, []))))
        out.append(TraceEvent(ev.event_id, ev.rank, ev.op, ev.peer_or_group,
                              ev.bytes, ev.round, deps, ev.scope,
                              ev.group_size, ev.work))
    return out


def _fingerprint(timeline: Timeline) -> tuple:
    return tuple(sorted((s.event.rank, s.event.op, s.event.bytes,
                         s.event.scope, s.event.group_size, s.event.work)
                        for s in timeline.events))


@dataclass(frozen=True)
class OverlapReport:
    fused_makespan: float
    sync_makespan: float
    savings_ratio: float
    lower_bound: float

    def to_dict(self) -> dict:
        return {
            "fused_makespan_s": self.fused_makespan,
            "sync_makespan_s": self.sync_makespan,
            "savings_ratio": self.savings_ratio,
            "lower_bound_s": self.lower_bound,
        }


def overlap_metrics(fused: Timeline, sync: Timeline) -> OverlapReport:
    """Compare a fused (overlapped) schedule against its synchronous baseline.

    Both must schedule the same logical workload. The lower bound is the
    busiest communication lane's total busy time; no schedule can beat it.
    """
    if _fingerprint(fused) != _fingerprint(sync):
        raise ValueError("timelines cover different workloads; refusing to compare")
    comm_busy = [lane.busy_time() for lane in fused.lanes
                 if lane.lane[1] in ("intra", "inter")]
    lower = max(comm_busy, default=0.0)
    if fused.makespan > sync.makespan * (1 + 1e-12) + 1e-15:
        raise SchedulingError(
            f"fused makespan {fused.makespan:g} exceeds synchronous "
            f"{sync.makespan:g}")
    if fused.makespan + 1e-15 < lower * (1 - 1e-12):
        raise SchedulingError(
            f"fused makespan {fused.makespan:g} below lane lower bound {lower:g}")
    savings = 0.0
    if sync.makespan > 0:
        savings = (sync.makespan - fused.makespan) / sync.makespan
    return OverlapReport(fused.makespan, sync.makespan, savings, lower)


GANTT_CSV_HEADER = "rank,lane,op,start_s,end_s,bytes"


def _gantt_rows(timeline: Timeline) -> list[tuple]:
    rows = [(s.event.rank, s.lane[1], s.event.op, s.start, s.end, s.event.bytes)
            for s in timeline.events]
    rows.sort(key=lambda r: (r[3], r[0], r[1], r[2]))
    return rows


def export_gantt(timeline: Timeline, path: str | Path, format: str = "csv") -> None:
    """Write the scheduled timeline as CSV rows, an SVG chart, or JSON."""
    path = Path(path)
    if format == "csv":
        lines = [GANTT_CSV_HEADER]
        for rank, lane, op, start, end, nbytes in _gantt_rows(timeline):
            lines.append(f"{rank},{lane},{op},{start!r},{end!r},{nbytes}")
        path.write_text("\n".join(lines) + "\n")
    elif format == "json":
        payload = {
            "makespan_s": timeline.makespan,
            "events": [
                {"event_id": s.event.event_id, "rank": s.event.rank,
                 "lane": s.lane[1], "op": s.event.op, "start_s": s.start,
                 "end_s": s.end, "bytes": s.event.bytes}
                for s in timeline.events
            ],
            "utilization": {f"{r}:{lane}": u
                            for (r, lane), u in sorted(timeline.utilization().items())},
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif format == "svg":
        path.write_text(_render_svg(timeline))
    else:
        raise ValueError(f"unknown gantt format {format!r}")


_LANE_ORDER = {"compute": 0, "intra": 1, "inter": 2}
_LANE_FILL = {"compute": "#8bc34a", "intra": "#ffb74d", "inter": "#64b5f6"}


def _render_svg(timeline: Timeline) -> str:
    lane_keys = sorted({s.lane for s in timeline.events},
                       key=lambda k: (k[0], _LANE_ORDER[k[1]]))
    row_of = {lane: i for i, lane in enumerate(lane_keys)}
    row_h, label_w, chart_w = 24, 120, 720
    span = timeline.makespan or 1.0
    width = label_w + chart_w + 10
    height = row_h * max(len(lane_keys), 1) + 30
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<style>text{font:10px monospace}</style>',
    ]
    for lane, i in row_of.items():
        y = 10 + i * row_h
        parts.append(f'<text x="2" y="{y + 14}">rank{lane[0]} {lane[1]}</text>')
    for s in timeline.events:
        y = 10 + row_of[s.lane] * row_h
        x = label_w + s.start / span * chart_w
        w = max((s.end - s.start) / span * chart_w, 0.5)
        fill = _LANE_FILL[s.lane[1]]
        parts.append(
            f'<rect x="{x:.2f}" y="{y + 2}" width="{w:.2f}" height="{row_h - 6}" '
            f'fill="{fill}" stroke="#333"><title>{s.event.op} '
            f'[{s.start!r}, {s.end!r}]</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
