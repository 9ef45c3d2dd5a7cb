"""Exception types shared across the package.

The CLI maps these onto distinct exit codes so batch jobs can tell a bad
config from a numerical blow-up.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration/arguments."""


class NumericalFailure(RuntimeError):
    """NaN/Inf or other numerical breakdown during computation."""


class CheckpointError(RuntimeError):
    """Malformed, truncated, or incompatible checkpoint data."""
