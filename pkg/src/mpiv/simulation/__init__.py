"""Simulation designs and the Monte Carlo engine."""

from ..estimators import naive_adjusted_estimate
from .dgp import (
    DgpSpec,
    OracleResult,
    PotentialData,
    delta0_oracle,
    generate,
    limiting_variances,
    potential_from_uniforms,
)
from .engine import TESTS, McResult, TestSummary, power_curve, run_mc, simulate_replication

__all__ = [
    "DgpSpec",
    "OracleResult",
    "PotentialData",
    "delta0_oracle",
    "generate",
    "limiting_variances",
    "potential_from_uniforms",
    "naive_adjusted_estimate",
    "TESTS",
    "McResult",
    "TestSummary",
    "power_curve",
    "run_mc",
    "simulate_replication",
]
