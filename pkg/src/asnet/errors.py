"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies instead of bare ValueError.
"""


class AsnetError(Exception):
    """Base class for all package errors."""


class DimensionError(AsnetError, ValueError):
    """Array shapes do not line up for the requested operation."""


class ConfigError(AsnetError, ValueError):
    """Invalid configuration value, file, or argument combination."""


class CheckpointError(ConfigError):
    """Checkpoint file is malformed or inconsistent with its manifest."""


class InvariantError(AsnetError, RuntimeError):
    """A runtime self-check failed (non-finite value, broken contract)."""
