import re

import pytest

from moeplan.config import (CalibrationCoefficients, ClusterConfig,
                            ModelHyperparams, WorkloadSpec)

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match and getattr(report, "when", "call") == "call":
                num = int(match.group(1))
                outcomes[num] = outcomes.get(num, True) and status == "passed"
    if outcomes:
        terminalreporter.write_line("")
        for num in sorted(outcomes):
            verdict = "PASS" if outcomes[num] else "FAIL"
            terminalreporter.write_line(f"acceptance criterion {num}: {verdict}")


@pytest.fixture
def small_model():
    return ModelHyperparams(hidden_dim=64, num_layers=4, top_k=2,
                            num_routed_experts=8, num_shared_experts=1,
                            psi_attn=1e6, psi_moe=8e6, psi_active=2e6)


@pytest.fixture
def small_cluster():
    return ClusterConfig(n_node=2, n_proc=2, intra_alpha=1e-6,
                         intra_beta=100e9, inter_alpha=2e-6, inter_beta=10e9,
                         mem_per_device=64e9, compute_rate=1e12)


@pytest.fixture
def small_workload():
    return WorkloadSpec(batch_size=8, seq_len=128, input_len=128,
                        output_len=64, arrival_rate=10.0)


@pytest.fixture
def small_calib():
    return CalibrationCoefficients(compute_coeff=1e-13)
