"""Python access to the commopt experiment core."""

from ._core import (
    ConfigError,
    DivergenceError,
    EnumerationLimit,
    Error,
    InvalidArgument,
    ParseError,
    RateError,
    __version__,
    certified,
    config_hash,
    run,
    run_experiment,
    sampling_stats,
    sweep,
)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "EnumerationLimit",
    "Error",
    "InvalidArgument",
    "ParseError",
    "RateError",
    "__version__",
    "certified",
    "config_hash",
    "run",
    "run_experiment",
    "sampling_stats",
    "sweep",
]
