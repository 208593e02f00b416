"""Simulation and control workbench for PMSM-driven electromechanical linear actuators."""

import json

from ._emla_lab import (
    NumericError,
    ValidationError,
    is_hurwitz,
    optimize,
    park_abc_to_dq,
    park_dq_to_abc,
    render_report,
    simulate,
    solve_lyapunov,
    validate,
)
from ._emla_lab import verify as _verify

__all__ = [
    "NumericError",
    "ValidationError",
    "is_hurwitz",
    "optimize",
    "park_abc_to_dq",
    "park_dq_to_abc",
    "render_report",
    "simulate",
    "solve_lyapunov",
    "validate",
    "verify",
]

__version__ = "0.1.0"


def verify(trace_csv, config):
    """Stability verification of a trace; returns the parsed summary."""
    passed, text = _verify(str(trace_csv), str(config))
    summary = json.loads(text)
    summary["passed"] = passed
    return summary
