"""Constraint-driven analog circuit sizing toolkit.

Pipeline: parse a netlist, detect structural motifs, collect sizing
relations (from motifs, files, or a multi-agent extraction run), prune the
search space with the relation algebra, then drive a batch Bayesian
optimizer (or a baseline) against an analytic or external evaluator.
"""

__version__ = "0.1.0"

from .netlist import Device, DeviceKind, Handle, Netlist, NetlistError  # noqa: F401
from .netlist import emit_netlist, parse_netlist  # noqa: F401
