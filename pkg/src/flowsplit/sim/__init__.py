"""Discrete-event simulation of the queue network."""
from .engine import (DISTRIBUTED_POLICY, SimConfig, SimReport, compare_policies, simulate,
                     summary_table)

__all__ = ["DISTRIBUTED_POLICY", "SimConfig", "SimReport", "compare_policies", "simulate",
           "summary_table"]
