"""Exception types shared across the package."""


class MoeplanError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MoeplanError, ValueError):
    """Malformed or invariant-violating configuration input."""


class GrammarError(MoeplanError, ValueError):
    """Strategy string violates the parallel-strategy grammar."""


class StrategyError(MoeplanError, ValueError):
    """Strategy is structurally valid but inconsistent with other inputs."""


class SaturationError(MoeplanError, ArithmeticError):
    """Queue utilization is at or above 1; the system is unstable."""


class CalibrationError(MoeplanError, ValueError):
    """Coefficient fit is degenerate for a link or compute class."""


class AnalyzerError(MoeplanError, RuntimeError):
    """Strategy selection cannot produce a result (e.g. nothing feasible)."""


class CapacityError(MoeplanError, RuntimeError):
    """A simulated rank received more tokens than its buffer capacity."""


class SchedulingError(MoeplanError, RuntimeError):
    """Trace dependency graph is cyclic or otherwise unschedulable."""


class VerificationError(MoeplanError, AssertionError):
    """Simulated output disagrees with the dense oracle."""
