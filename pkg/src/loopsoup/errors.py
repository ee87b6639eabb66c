class ConfigError(ValueError):
    """Invalid configuration value (CLI exit code 2)."""


class PrecisionError(ArithmeticError):
    """A requested quantity cannot be resolved in double precision (exit code 3)."""


class MemoryGuardError(RuntimeError):
    """Expected workload exceeds the configured loop cap (exit code 4)."""
