"""Planning and verification toolkit for distributed MoE serving.

Analytic ranking of hybrid TP/EP/DP/PP parallel strategies under a two-tier
latency-bandwidth cost model, plus a deterministic simulator for the fused
dispatch/combine communication algorithms verified against a dense oracle.
"""

__version__ = "0.1.0"

from .analyzer import (ProfilingObservation, RankedStrategies, calibrate,
                       compare_report, select_strategy)
from .config import (CalibrationCoefficients, ClusterConfig, ConfigBundle,
                     ModelHyperparams, WorkloadSpec, load_config)
from .costmodel import (CostEstimate, indicators, lambda_ep_baseline,
                        lambda_mix)
from .errors import (AnalyzerError, CalibrationError, CapacityError,
                     ConfigError, GrammarError, MoeplanError, SaturationError,
                     SchedulingError, StrategyError, VerificationError)
from .simcluster import (ExpertSpec, RouterSpec, SimCluster, TraceEvent,
                         build_cluster, fused_ag_dispatch, fused_rs_combine,
                         moe_oracle, run_moe_block, verify_against_oracle)
from .strategy import (ParallelStrategy, check_memory, enumerate_strategies,
                       format_strategy, parse_strategy)
from .timeline import (Timeline, export_gantt, make_sync_trace,
                       overlap_metrics, schedule)

__all__ = [
    "__version__",
    "AnalyzerError", "CalibrationError", "CalibrationCoefficients",
    "CapacityError", "ClusterConfig", "ConfigBundle", "ConfigError",
    "CostEstimate", "ExpertSpec", "GrammarError", "ModelHyperparams",
    "MoeplanError", "ParallelStrategy", "ProfilingObservation",
    "RankedStrategies", "RouterSpec", "SaturationError", "SchedulingError",
    "SimCluster", "StrategyError", "Timeline", "TraceEvent",
    "VerificationError", "WorkloadSpec", "build_cluster", "calibrate",
    "check_memory", "compare_report", "enumerate_strategies", "export_gantt",
    "format_strategy", "fused_ag_dispatch", "fused_rs_combine", "indicators",
    "lambda_ep_baseline", "lambda_mix", "load_config", "make_sync_trace",
    "moe_oracle", "overlap_metrics", "parse_strategy", "run_moe_block",
    "schedule", "select_strategy", "verify_against_oracle",
]
