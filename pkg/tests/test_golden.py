"""Byte-exact regression tests against frozen 2x2 fixture files."""
from pathlib import Path

import numpy as np

from moeplan.analyzer import compare_report, save_report, select_strategy
from moeplan.config import (CalibrationCoefficients, ClusterConfig,
                            ModelHyperparams, WorkloadSpec)
from moeplan.simcluster import (ExpertSpec, RouterSpec, build_cluster,
                                run_moe_block, save_trace, trace_from_csv)
from moeplan.timeline import export_gantt, schedule

GOLDEN = Path(__file__).parent / "golden"
UNIT_CLUSTER = ClusterConfig(2, 2, 1.0, 1.0, 2.0, 1.0, 1e9, 1.0)
UNIT_CALIB = CalibrationCoefficients(compute_coeff=1.0)


def fused_2x2():
    cluster = build_cluster(2, 2)
    x = np.arange(32.0).reshape(4, 8)
    router = RouterSpec.round_robin(4, 2, 1)
    return run_moe_block(cluster, x, router, ExpertSpec.default(2), mode="fused")


def test_trace_csv_byte_exact(tmp_path):
    _, trace = fused_2x2()
    path = tmp_path / "trace.csv"
    save_trace(trace.events, path)
    assert path.read_bytes() == (GOLDEN / "trace_2x2.csv").read_bytes()


def test_golden_trace_parses_back():
    events = trace_from_csv((GOLDEN / "trace_2x2.csv").read_text())
    _, trace = fused_2x2()
    assert tuple(events) == tuple(trace.events)


def test_gantt_csv_byte_exact(tmp_path):
    _, trace = fused_2x2()
    tl = schedule(trace.events, UNIT_CLUSTER, UNIT_CALIB)
    path = tmp_path / "gantt.csv"
    export_gantt(tl, path, format="csv")
    assert path.read_bytes() == (GOLDEN / "gantt_2x2.csv").read_bytes()


def test_gantt_svg_byte_exact(tmp_path):
    _, trace = fused_2x2()
    tl = schedule(trace.events, UNIT_CLUSTER, UNIT_CALIB)
    path = tmp_path / "gantt.svg"
    export_gantt(tl, path, format="svg")
    assert path.read_bytes() == (GOLDEN / "gantt_2x2.svg").read_bytes()


def test_report_json_byte_exact(tmp_path):
    model = ModelHyperparams(hidden_dim=64, num_layers=4, top_k=2,
                             num_routed_experts=8, num_shared_experts=1,
                             psi_attn=1e6, psi_moe=8e6, psi_active=2e6)
    workload = WorkloadSpec(batch_size=8, seq_len=128, input_len=128,
                            output_len=64, arrival_rate=10.0)
    cluster = ClusterConfig(2, 2, 1e-6, 100e9, 2e-6, 10e9, 64e9, 1e12)
    calib = CalibrationCoefficients(compute_coeff=1e-13)
    ranked = select_strategy(model, cluster, workload, calib)
    path = tmp_path / "report.json"
    save_report(compare_report(ranked, 5), path)
    assert path.read_bytes() == (GOLDEN / "report_2x2.json").read_bytes()
