"""Domain configuration: model, cluster, workload, calibration.

Units are fixed repo-wide: bytes, seconds, element counts. Every size that
enters the link cost model is a byte size computed as element count times
``bytes_per_element``. All types are immutable after validation and safe to
share across threads.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


def is_power_of_two(x: int) -> bool:
    return isinstance(x, int) and x >= 1 and (x & (x - 1)) == 0


def _check(cond: bool, field_name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{field_name}: {msg}")


@dataclass(frozen=True)
class ModelHyperparams:
    """MoE architecture constants feeding every analytic formula.

    ``psi_attn``/``psi_moe`` are total parameter counts (elements) of the
    attention and MoE blocks; ``psi_active`` is the activated parameter count
    per token. Memory sizing uses the totals, compute uses the active count.
    """

    hidden_dim: int
    num_layers: int
    top_k: int
    num_routed_experts: int
    num_shared_experts: int
    psi_attn: float
    psi_moe: float
    psi_active: float
    bytes_per_element: int = 2

    def __post_init__(self) -> None:
        for name in ("hidden_dim", "num_layers", "top_k", "num_routed_experts"):
            _check(getattr(self, name) >= 1, name, "must be a strictly positive count")
        _check(self.num_shared_experts >= 0, "num_shared_experts", "must be a nonnegative count")
        _check(self.top_k <= self.num_routed_experts, "top_k",
               "must not exceed num_routed_experts")
        for name in ("psi_attn", "psi_moe", "psi_active"):
            _check(getattr(self, name) > 0, name, "must be strictly positive")
        _check(self.psi_active <= self.psi_attn + self.psi_moe, "psi_active",
               "must not exceed psi_attn + psi_moe")
        _check(self.bytes_per_element >= 1, "bytes_per_element", "must be at least 1")


@dataclass(frozen=True)
class ClusterConfig:
    """Node/device counts plus the two-tier latency-bandwidth link model.

    ``intra_*`` describes links within a node, ``inter_*`` links between
    nodes. ``mem_per_device`` is bytes, ``compute_rate`` element-operations
    per second per device.
    """

    n_node: int
    n_proc: int
    intra_alpha: float
    intra_beta: float
    inter_alpha: float
    inter_beta: float
    mem_per_device: float
    compute_rate: float

    def __post_init__(self) -> None:
        for name in ("n_node", "n_proc"):
            value = getattr(self, name)
            _check(value >= 1, name, "must be at least 1")
            _check(is_power_of_two(value), name, "degree must be a power of two")
        for name in ("intra_alpha", "inter_alpha"):
            _check(getattr(self, name) >= 0, name, "must be nonnegative seconds")
        for name in ("intra_beta", "inter_beta"):
            _check(getattr(self, name) > 0, name, "must be strictly positive bytes/second")
        _check(self.mem_per_device > 0, "mem_per_device", "must be strictly positive bytes")
        _check(self.compute_rate > 0, "compute_rate", "must be strictly positive element-ops/second")

    @property
    def total_devices(self) -> int:
        return self.n_node * self.n_proc


@dataclass(frozen=True)
class WorkloadSpec:
    """Serving workload: batch shape and token arrival rate (tokens/second)."""

    batch_size: int
    seq_len: int
    input_len: int
    output_len: int
    arrival_rate: float

    def __post_init__(self) -> None:
        for name in ("batch_size", "seq_len", "input_len", "output_len"):
            _check(getattr(self, name) >= 1, name, "must be at least 1")
        _check(self.arrival_rate >= 0, "arrival_rate", "must be nonnegative tokens/second")


@dataclass(frozen=True)
class CalibrationCoefficients:
    """Coefficients that turn the proportional cost laws into absolute seconds.

    ``compute_coeff`` is seconds per element-operation; ``None`` resolves to
    ``1 / compute_rate`` at load time. Link overrides, when given, replace the
    cluster's alpha/beta per class. ``ar_literal`` selects the printed
    composition AR(s, d) = RS(s/d, d) + AG(s/d, d); when off, RS/AG take the
    undivided size. ``tau_literal`` multiplies the compute law by the hidden
    dim as printed; the default treats that factor as already embodied in the
    activated-parameter count.
    """

    compute_coeff: float | None = None
    intra_alpha: float | None = None
    intra_beta: float | None = None
    inter_alpha: float | None = None
    inter_beta: float | None = None
    ar_literal: bool = True
    tau_literal: bool = False

    def __post_init__(self) -> None:
        if self.compute_coeff is not None:
            _check(self.compute_coeff > 0, "compute_coeff", "must be strictly positive")
        for name in ("intra_alpha", "inter_alpha"):
            value = getattr(self, name)
            if value is not None:
                _check(value >= 0, name, "must be nonnegative seconds")
        for name in ("intra_beta", "inter_beta"):
            value = getattr(self, name)
            if value is not None:
                _check(value > 0, name, "must be strictly positive bytes/second")


@dataclass(frozen=True)
class ConfigBundle:
    model: ModelHyperparams
    cluster: ClusterConfig
    workload: WorkloadSpec
    calibration: CalibrationCoefficients

    def __iter__(self):
        return iter((self.model, self.cluster, self.workload, self.calibration))


_SECTION_TYPES = {
    "model": ModelHyperparams,
    "cluster": ClusterConfig,
    "workload": WorkloadSpec,
    "calibration": CalibrationCoefficients,
}


def _build_section(name: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: section must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    required = {
        f.name for f in fields(cls)
        if f.default is MISSING and f.default_factory is MISSING
    }
    missing = sorted(required - set(raw))
    if missing:
        raise ConfigError(f"{name}.{missing[0]}: missing required key")
    return cls(**raw)


def load_config(path: str | Path) -> ConfigBundle:
    """Load and validate a JSON config file.

    The file holds top-level sections ``model``, ``cluster``, ``workload``
    and optionally ``calibration``; field names mirror the dataclasses.
    Unknown keys are errors. Omitted calibration fields get documented
    defaults (``compute_coeff = 1 / compute_rate``).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    return bundle_from_dict(raw)


def bundle_from_dict(raw: dict) -> ConfigBundle:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = sorted(set(raw) - set(_SECTION_TYPES))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    for section in ("model", "cluster", "workload"):
        if section not in raw:
            raise ConfigError(f"{section}: missing required section")
    model = _build_section("model", ModelHyperparams, raw["model"])
    cluster = _build_section("cluster", ClusterConfig, raw["cluster"])
    workload = _build_section("workload", WorkloadSpec, raw["workload"])
    calibration = _build_section("calibration", CalibrationCoefficients,
                                 raw.get("calibration", {}))
    if calibration.compute_coeff is None:
        calibration = CalibrationCoefficients(
            compute_coeff=1.0 / cluster.compute_rate,
            intra_alpha=calibration.intra_alpha,
            intra_beta=calibration.intra_beta,
            inter_alpha=calibration.inter_alpha,
            inter_beta=calibration.inter_beta,
            ar_literal=calibration.ar_literal,
            tau_literal=calibration.tau_literal,
        )
    return ConfigBundle(model, cluster, workload, calibration)


def serialize_bundle(bundle: ConfigBundle) -> dict:
    """Inverse of :func:`bundle_from_dict` on validated bundles."""
    calib = {k: v for k, v in asdict(bundle.calibration).items() if v is not None}
    return {
        "model": asdict(bundle.model),
        "cluster": asdict(bundle.cluster),
        "workload": asdict(bundle.workload),
        "calibration": calib,
    }


def save_config(bundle: ConfigBundle, path: str | Path) -> None:
    Path(path).write_text(json.dumps(serialize_bundle(bundle), indent=2, sort_keys=True) + "\n")


def validate_bundle(bundle: ConfigBundle) -> list[str]:
    """Return non-fatal warnings for a loaded bundle (empty when clean)."""
    warnings: list[str] = []
    intra_beta = bundle.calibration.intra_beta
    if intra_beta is None:
        intra_beta = bundle.cluster.intra_beta
    inter_beta = bundle.calibration.inter_beta
    if inter_beta is None:
        inter_beta = bundle.cluster.inter_beta
    if intra_beta < inter_beta:
        warnings.append(
            "intra_beta: inverted bandwidth hierarchy (intra-node bandwidth "
            f"{intra_beta:g} B/s is below inter-node {inter_beta:g} B/s)"
        )
    return warnings
