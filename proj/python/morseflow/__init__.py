"""Python bindings for morseflow.

Configuration dictionaries use the same dotted keys as the config files,
e.g. ``{"potential.dim": 2, "eps": 1e-3}``.
"""

from ._core import (
    Error,
    certify_kernels,
    connection_graph,
    equilibria,
    parse_config,
    run,
    schema_version,
    simulate,
    subcommands,
)

__all__ = [
    "Error",
    "certify_kernels",
    "connection_graph",
    "equilibria",
    "error_code",
    "parse_config",
    "run",
    "schema_version",
    "simulate",
    "subcommands",
]


def error_code(exc):
    """Code name of a morseflow.Error, e.g. 'ConfigError'."""
    return str(exc).split(":", 1)[0]
